#include "grad_case.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace coemb;
using namespace testing_support;
using namespace grad_case;

namespace {

// -log softmax evaluated directly in extended precision, no shift.
long double naive_softmax_loss(const Vector& e, const Matrix& proxies, std::size_t target) {
    long double total = 0.0L, target_term = 0.0L;
    for (Eigen::Index z = 0; z < proxies.rows(); ++z) {
        long double d = 0.0L;
        for (Eigen::Index c = 0; c < e.size(); ++c) {
            const long double diff = static_cast<long double>(proxies(z, c)) - e(c);
            d += diff * diff;
        }
        const long double w = std::exp(-d);
        total += w;
        if (static_cast<std::size_t>(z) == target) target_term = w;
    }
    return -std::log(target_term / total);
}

} // namespace

TEST(ProxySoftmax, MatchesExtendedPrecisionOracle) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const auto Z = static_cast<Eigen::Index>(2 + trial % 7);
        const auto n = static_cast<Eigen::Index>(1 + trial % 5);
        const Matrix P = random_matrix(Z, n, rng);
        const Vector e = random_vector(n, rng);
        const auto t = static_cast<std::size_t>(trial % Z);
        const double got = instance_loss(e, t, ProxyStore{P, {}, std::vector<std::size_t>(Z, 0), 1}).loss;
        EXPECT_NEAR(got, static_cast<double>(naive_softmax_loss(e, P, t)), 1e-12);
    }
}

TEST(ProxySoftmax, LargeDistancesStayFinite) {
    Matrix P(3, 2);
    P << 1000, 0, -1000, 0, 0, 1000;
    const Vector e = Vector::Zero(2);
    const auto out = detail::proxy_softmax(e, P, 0);
    EXPECT_NEAR(out.loss, std::log(3.0), 1e-12);
    EXPECT_TRUE(out.grad_embedding.allFinite());
    const Vector far = (Vector(2) << 3000, 0).finished();
    const auto worse = detail::proxy_softmax(far, P, 1);
    EXPECT_TRUE(std::isfinite(worse.loss));
    EXPECT_NEAR(worse.loss, 4000.0 * 4000.0 - 2000.0 * 2000.0, 1e-3);
}

TEST(ProxySoftmax, ProbabilitiesSumToOneAndGradientBalances) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix P = random_matrix(5, 3, rng);
        const Vector e = random_vector(3, rng);
        const auto out = detail::proxy_softmax(e, P, 2);
        EXPECT_NEAR(out.probabilities.sum(), 1.0, 1e-12);
        // Translating e and every proxy together leaves the loss unchanged,
        // so the gradients cancel.
        const Vector total = out.grad_embedding + out.grad_proxies.colwise().sum().transpose();
        EXPECT_LT(total.cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(ProxySoftmax, TargetOutOfRangeIsUsageError) {
    const Matrix P = Matrix::Zero(2, 2);
    EXPECT_THROW(detail::proxy_softmax(Vector::Zero(2), P, 2), UsageError);
}

TEST(ClosedForm, EquidistantProxiesGiveLogCounts) {
    // Embedding at the origin, instance proxies on scaled axes, equal-size
    // categories: every softmax sees equal distances.
    const std::size_t C = 3, per = 2, I = C * per, n = 3;
    std::vector<std::size_t> V{4, 5};
    const EmbeddingConfig config(V.size(), n);
    ProxyStore s;
    s.category_count = C;
    s.instance_proxies = Matrix::Zero(I, static_cast<Eigen::Index>(config.superspace_dim()));
    for (std::size_t i = 0; i < I; ++i) {
        s.instance_proxies(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = 0.7;
        s.instance_category.push_back(i / per);
    }
    for (std::size_t k = 0; k < V.size(); ++k) {
        Matrix a = Matrix::Zero(static_cast<Eigen::Index>(V[k]), static_cast<Eigen::Index>(n));
        // Points of a regular simplex would do; equal-norm rows suffice.
        for (std::size_t v = 0; v < V[k]; ++v) {
            const double angle = 2.0 * M_PI * static_cast<double>(v) / static_cast<double>(V[k]);
            a(static_cast<Eigen::Index>(v), 0) = 1.3 * std::cos(angle);
            a(static_cast<Eigen::Index>(v), 1) = 1.3 * std::sin(angle);
        }
        s.attribute_proxies.push_back(a);
    }
    const Vector e = Vector::Zero(static_cast<Eigen::Index>(config.superspace_dim()));
    EXPECT_NEAR(instance_loss(e, 4, s).loss, std::log(static_cast<double>(I)), 1e-9);
    EXPECT_NEAR(attribute_loss(e, 0, 1, s, config).loss, std::log(4.0), 1e-9);
    EXPECT_NEAR(attribute_loss(e, 1, 3, s, config).loss, std::log(5.0), 1e-9);
    EXPECT_NEAR(category_loss(e, 2, s).loss, std::log(static_cast<double>(C)), 1e-9);
}

TEST(ClosedForm, TranslationInvariance) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix P = random_matrix(6, 4, rng);
        const Vector e = random_vector(4, rng);
        const Vector t = random_vector(4, rng, 3.0);
        const Matrix Pt = P.rowwise() + t.transpose();
        const double a = detail::proxy_softmax(e, P, 1).loss;
        const double b = detail::proxy_softmax(e + t, Pt, 1).loss;
        EXPECT_NEAR(a, b, 1e-9);
    }
}

TEST(ClosedForm, AttributeLossIsLocalToItsSubspace) {
    std::mt19937_64 rng(8);
    SmallSpec spec;
    spec.values = {3, 4, 2};
    const Dataset train = random_train_dataset(spec, rng);
    const EmbeddingConfig config(3, 4);
    const Model m = random_model(train, config, rng);
    for (int trial = 0; trial < 30; ++trial) {
        const Vector e = random_vector(12, rng);
        const std::size_t k = static_cast<std::size_t>(trial % 3);
        const auto base = attribute_loss(e, k, 1, m.proxies, config);
        Vector moved = e + random_vector(12, rng, 5.0);
        moved.segment(config.block_start(k), config.width()) = e.segment(config.block_start(k), config.width());
        const auto after = attribute_loss(moved, k, 1, m.proxies, config);
        EXPECT_NEAR(base.loss, after.loss, 1e-9);
        for (Eigen::Index c = 0; c < e.size(); ++c) {
            const bool inside = c >= config.block_start(k) && c < config.block_start(k) + config.width();
            if (!inside) EXPECT_EQ(base.grad_embedding(c), 0.0);
        }
    }
}

TEST(CategoryProxies, AreMeansOfInstanceProxies) {
    ProxyStore s;
    s.category_count = 2;
    s.instance_proxies = (Matrix(3, 2) << 1, 2, 3, 4, 5, 6).finished();
    s.instance_category = {0, 1, 0};
    const Matrix c = category_proxies(s);
    EXPECT_EQ(c(0, 0), 3.0);
    EXPECT_EQ(c(0, 1), 4.0);
    EXPECT_EQ(c(1, 0), 3.0);
    EXPECT_EQ(c(1, 1), 4.0);
    s.category_count = 3;
    EXPECT_THROW(category_proxies(s), DataError);
}

TEST(OrderRegularizer, ZeroWhenCosinesMatchPrior) {
    // Unit vectors with cosines equal to P are obtained from a Cholesky
    // factor of P.
    const std::vector<double> ranks{1, 2, 3, 4};
    const Matrix P = proximity_matrix(ranks, 1.0);
    const Matrix L = Eigen::LLT<Matrix>(P).matrixL();
    const auto r = order_regularizer(2.0 * L, P);
    EXPECT_NEAR(r.value, 0.0, 1e-12);
    EXPECT_NEAR((r.cosine - P).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(OrderRegularizer, ProximityMatrixFollowsGaussianKernel) {
    const std::vector<double> ranks{1, 2, 4};
    const Matrix P = proximity_matrix(ranks, 1.5);
    for (int v = 0; v < 3; ++v)
        for (int u = 0; u < 3; ++u) {
            const double d = ranks[static_cast<std::size_t>(v)] - ranks[static_cast<std::size_t>(u)];
            EXPECT_NEAR(P(v, u), std::exp(-d * d / (2 * 1.5 * 1.5)), 1e-15);
        }
    EXPECT_THROW(proximity_matrix(ranks, 0.0), UsageError);
}

TEST(OrderRegularizer, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const auto V = static_cast<Eigen::Index>(2 + trial % 4);
        std::vector<double> ranks;
        for (Eigen::Index v = 0; v < V; ++v) ranks.push_back(static_cast<double>(v) * 1.3);
        const Matrix P = proximity_matrix(ranks, 1.0);
        Matrix A = random_matrix(V, 3, rng);
        const Matrix g = order_regularizer(A, P).grad_proxies;
        for (Eigen::Index i = 0; i < A.size(); ++i) {
            const double saved = A.data()[i];
            A.data()[i] = saved + 1e-6;
            const double up = order_regularizer(A, P).value;
            A.data()[i] = saved - 1e-6;
            const double down = order_regularizer(A, P).value;
            A.data()[i] = saved;
            EXPECT_NEAR(g.data()[i], (up - down) / 2e-6, 1e-6);
        }
    }
}

TEST(OrderRegularizer, ZeroNormRowIsNumericError) {
    const Matrix P = proximity_matrix(std::vector<double>{1, 2}, 1.0);
    EXPECT_THROW(order_regularizer(Matrix::Zero(2, 3), P), NumericError);
}

TEST(TotalLoss, GradientsMatchCentralDifferences) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 25; ++trial) {
        const GradCase c = random_case(rng);
        const auto analytic =
            flatten(total_loss_and_grad(c.train, c.batch, c.model, c.weights, c.ordering, c.config, c.options).grads);
        const auto numeric = numeric_gradient(c.model, [&](const Model& m) { return loss_of(c, m); });
        ASSERT_EQ(analytic.size(), numeric.size());
        EXPECT_LE(max_relative_error(analytic, numeric, 1e-6), 1e-4) << "trial " << trial;
    }
}

TEST(TotalLoss, MatchesPerComponentComposition) {
    std::mt19937_64 rng(7);
    SmallSpec spec;
    spec.values = {3, 3};
    spec.ordered = 1;
    const Dataset train = random_train_dataset(spec, rng);
    const EmbeddingConfig config(2, 3);
    const Model m = random_model(train, config, rng);
    const LossWeights w;
    const auto ordering = OrderingConfig::from_labels(train.labels);
    const std::vector<std::size_t> batch{0, 3, 5};
    const auto tl = total_loss_and_grad(train, batch, m, w, ordering, config);
    double expected = 0.0;
    for (std::size_t j : batch) {
        const Item& it = train.items[j];
        const Vector e = project(m.projector, train.features.row(static_cast<Eigen::Index>(it.feature_row)).transpose());
        double attr = 0.0;
        for (auto [k, v] : it.attributes) attr += attribute_loss(e, k, v, m.proxies, config).loss;
        expected += instance_loss(e, it.instance, m.proxies).loss + attr / 2.0 +
                    category_loss(e, it.category, m.proxies).loss + 0.5 * e.squaredNorm();
    }
    expected /= 3.0;
    expected += order_regularizer(m.proxies.attribute_proxies[1],
                                  proximity_matrix(train.labels.attributes[1].ranks, 1.0)).value;
    EXPECT_NEAR(tl.loss, expected, 1e-12);
}

TEST(TotalLoss, MissingAttributeContributesExactlyTheOmittedSum) {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        SmallSpec spec;
        spec.values = {3, 4, 2};
        spec.ordered = 0;
        Dataset train = random_train_dataset(spec, rng);
        const EmbeddingConfig config(3, 2);
        const Model m = random_model(train, config, rng);
        const std::size_t j = static_cast<std::size_t>(trial) % train.items.size();
        const std::size_t missing_k = static_cast<std::size_t>(trial) % 3;
        train.items[j].attributes.erase(missing_k);
        const LossWeights w;
        const OrderingConfig no_order;
        for (bool renorm : {false, true}) {
            const std::vector<std::size_t> batch{j};
            const double got = total_loss_and_grad(train, batch, m, w, no_order, config, {renorm}).loss;
            const Item& it = train.items[j];
            const Vector e = project(m.projector, train.features.row(static_cast<Eigen::Index>(it.feature_row)).transpose());
            double attr = 0.0;
            for (std::size_t k = 0; k < 3; ++k)
                if (k != missing_k && it.attributes.count(k))
                    attr += attribute_loss(e, k, it.attributes.at(k), m.proxies, config).loss;
            const double denom = renorm ? static_cast<double>(std::max<std::size_t>(it.attributes.size(), 1)) : 3.0;
            const double expected = combine_item_loss(w, denom, instance_loss(e, it.instance, m.proxies).loss, attr,
                                                      category_loss(e, it.category, m.proxies).loss, e.squaredNorm());
            EXPECT_EQ(got, expected);
        }
    }
}

TEST(TotalLoss, ZeroWeightsRemoveTerms) {
    std::mt19937_64 rng(4);
    const Dataset train = random_train_dataset({}, rng);
    const EmbeddingConfig config(2, 3);
    const Model m = random_model(train, config, rng);
    LossWeights w{0, 0, 0, 0, 0};
    const std::vector<std::size_t> batch{0, 1};
    const auto tl = total_loss_and_grad(train, batch, m, w, {}, config);
    EXPECT_EQ(tl.loss, 0.0);
    for (double g : flatten(tl.grads)) EXPECT_EQ(g, 0.0);
}

TEST(TotalLoss, RejectsEmptyBatchAndNonTrainItems) {
    std::mt19937_64 rng(4);
    Dataset train = random_train_dataset({}, rng);
    const EmbeddingConfig config(2, 3);
    const Model m = random_model(train, config, rng);
    EXPECT_THROW(total_loss_and_grad(train, {}, m, {}, {}, config), UsageError);
    train.items[0].split = Split::query;
    const std::vector<std::size_t> batch{0};
    EXPECT_THROW(total_loss_and_grad(train, batch, m, {}, {}, config), UsageError);
}

TEST(TotalLoss, NonFiniteInputsAreNumericErrors) {
    std::mt19937_64 rng(4);
    Dataset train = random_train_dataset({}, rng);
    const EmbeddingConfig config(2, 3);
    Model m = random_model(train, config, rng);
    m.projector.W(0, 0) = std::numeric_limits<double>::quiet_NaN();
    const std::vector<std::size_t> batch{0};
    EXPECT_THROW(total_loss_and_grad(train, batch, m, {}, {}, config), NumericError);
}
