#pragma once

#include "dataset.hpp"
#include "embedding.hpp"
#include "proxies.hpp"

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace coemb {

struct LossWeights {
    double instance = 1.0;
    double attribute = 1.0;
    double category = 1.0;
    double regularization = 0.5;
    double order = 1.0;

    void validate() const {
        for (double w : {instance, attribute, category, regularization, order})
            if (!std::isfinite(w) || w < 0.0)
                throw UsageError("loss weights must be finite and non-negative");
    }
};

// Gaussian-kernel proximity priors for the ordered attributes.
struct OrderingConfig {
    double sigma = 1.0;
    // Attribute index -> ranks of its values, for ordered attributes only.
    std::map<std::size_t, std::vector<double>> ranks;

    static OrderingConfig from_labels(const LabelSpace& labels, double sigma = 1.0) {
        OrderingConfig o;
        o.sigma = sigma;
        for (std::size_t k = 0; k < labels.attributes.size(); ++k)
            if (labels.attributes[k].ordered) o.ranks.emplace(k, labels.attributes[k].ranks);
        return o;
    }

    void validate() const {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw UsageError("sigma must be positive");
    }
};

// Loss of one proxy softmax together with its exact gradients.
struct SoftmaxLoss {
    double loss = 0.0;
    Vector grad_embedding;
    Matrix grad_proxies;
    Vector probabilities;
};

namespace detail {

// -log softmax_t(-||e - p_z||^2) evaluated with a max shift. Adds
// scale * dL/de to grad_e and scale * dL/dP to grad_p; returns the unscaled
// loss.
inline double accumulate_proxy_softmax(Eigen::Ref<const Vector> e, const Matrix& proxies,
                                       std::size_t target, double scale,
                                       Eigen::Ref<Vector> grad_e, Matrix& grad_p,
                                       Vector* probabilities = nullptr) {
    if (target >= static_cast<std::size_t>(proxies.rows()))
        throw UsageError("softmax target " + std::to_string(target) + " out of range");
    if (!e.allFinite() || !proxies.allFinite())
        throw NumericError("non-finite embedding or proxies");
    const Matrix diff = proxies.rowwise() - e.transpose(); // p_z - e
    const Vector dist = diff.rowwise().squaredNorm();
    const double shift = dist.minCoeff();
    const Vector w = (-(dist.array() - shift)).exp().matrix();
    const double total = w.sum();
    const double loss = dist(static_cast<Eigen::Index>(target)) - shift + std::log(total);

    // dL/dD_z = [z == t] - q_z
    Vector coef = -scale * (w / total);
    coef(static_cast<Eigen::Index>(target)) += scale;
    grad_e.noalias() -= 2.0 * (diff.transpose() * coef);
    grad_p.noalias() += 2.0 * (coef.asDiagonal() * diff);
    if (probabilities) *probabilities = w / total;
    return loss;
}

inline SoftmaxLoss proxy_softmax(Eigen::Ref<const Vector> e, const Matrix& proxies,
                                 std::size_t target) {
    SoftmaxLoss out;
    out.grad_embedding = Vector::Zero(e.size());
    out.grad_proxies = Matrix::Zero(proxies.rows(), proxies.cols());
    out.loss = accumulate_proxy_softmax(e, proxies, target, 1.0, out.grad_embedding,
                                        out.grad_proxies, &out.probabilities);
    return out;
}

// Pushes gradients with respect to category centers back onto the instance
// proxies through the mean.
inline void distribute_center_grads(const Matrix& grad_centers, const ProxyStore& store,
                                    Matrix& grad_instances) {
    const auto sizes = store.category_sizes();
    for (std::size_t i = 0; i < store.instance_category.size(); ++i) {
        const std::size_t y = store.instance_category[i];
        grad_instances.row(static_cast<Eigen::Index>(i)) +=
            grad_centers.row(static_cast<Eigen::Index>(y)) / static_cast<double>(sizes[y]);
    }
}

} // namespace detail

// Instance loss over all instance proxies in the superspace.
inline SoftmaxLoss instance_loss(Eigen::Ref<const Vector> embedding, std::size_t target,
                                 const ProxyStore& store) {
    if (embedding.size() != store.instance_proxies.cols())
        throw UsageError("embedding length does not match instance proxies");
    return detail::proxy_softmax(embedding, store.instance_proxies, target);
}

// Attribute loss in subspace k. grad_embedding has full superspace length and
// is exactly zero outside block k.
inline SoftmaxLoss attribute_loss(Eigen::Ref<const Vector> embedding, std::size_t k,
                                  std::size_t target_value, const ProxyStore& store,
                                  const EmbeddingConfig& config) {
    config.check_attribute(k);
    if (static_cast<std::size_t>(embedding.size()) != config.superspace_dim())
        throw UsageError("embedding length does not match superspace dimension");
    const Matrix& proxies = store.attribute_proxies.at(k);
    if (proxies.rows() < 2) throw UsageError("attribute needs at least 2 value proxies");
    SoftmaxLoss out;
    out.grad_embedding = Vector::Zero(embedding.size());
    out.grad_proxies = Matrix::Zero(proxies.rows(), proxies.cols());
    out.loss = detail::accumulate_proxy_softmax(
        embedding.segment(config.block_start(k), config.width()), proxies, target_value, 1.0,
        out.grad_embedding.segment(config.block_start(k), config.width()), out.grad_proxies,
        &out.probabilities);
    return out;
}

// P_vu = exp(-(r_v - r_u)^2 / (2 sigma^2)).
inline Matrix proximity_matrix(std::span<const double> ranks, double sigma) {
    if (!(sigma > 0.0)) throw UsageError("sigma must be positive");
    if (ranks.size() < 2) throw UsageError("proximity matrix needs at least 2 ranks");
    const auto V = static_cast<Eigen::Index>(ranks.size());
    Matrix P(V, V);
    for (Eigen::Index v = 0; v < V; ++v)
        for (Eigen::Index u = 0; u < V; ++u) {
            const double d = ranks[static_cast<std::size_t>(v)] - ranks[static_cast<std::size_t>(u)];
            P(v, u) = std::exp(-(d * d) / (2.0 * sigma * sigma));
        }
    return P;
}

struct OrderRegularizer {
    double value = 0.0;
    Matrix grad_proxies;
    Matrix cosine; // S
};

// ||S - P||_F with S the cosine-similarity matrix of the proxy rows. The
// gradient at S == P is taken as zero.
inline OrderRegularizer order_regularizer(const Matrix& proxies, const Matrix& P) {
    const Eigen::Index V = proxies.rows();
    if (P.rows() != V || P.cols() != V)
        throw UsageError("proximity matrix shape does not match proxy count");
    const Vector norms = proxies.rowwise().norm();
    for (Eigen::Index v = 0; v < V; ++v)
        if (!(norms(v) >= zero_block_eps))
            throw NumericError("zero-norm proxy row in ordering regularizer");
    const Matrix unit = norms.cwiseInverse().asDiagonal() * proxies;
    OrderRegularizer out;
    out.cosine = unit * unit.transpose();
    const Matrix residual = out.cosine - P;
    out.value = residual.norm();
    out.grad_proxies = Matrix::Zero(V, proxies.cols());
    if (out.value == 0.0) return out;

    // dR/dS = (S - P) / R is symmetric, so dR/du_v = 2 sum_u G_vu u_u; then
    // project out the radial part for the normalization.
    const Matrix h = (2.0 / out.value) * (residual * unit);
    for (Eigen::Index v = 0; v < V; ++v) {
        const auto u = unit.row(v);
        out.grad_proxies.row(v) = (h.row(v) - h.row(v).dot(u) * u) / norms(v);
    }
    return out;
}

// c_y = mean of the instance proxies of category y.
inline Matrix category_proxies(const ProxyStore& store) {
    const auto sizes = store.category_sizes();
    for (std::size_t y = 0; y < sizes.size(); ++y)
        if (sizes[y] == 0)
            throw DataError("category " + std::to_string(y) + " has no instance proxies");
    Matrix centers = Matrix::Zero(static_cast<Eigen::Index>(store.category_count),
                                  store.instance_proxies.cols());
    for (std::size_t i = 0; i < store.instance_category.size(); ++i)
        centers.row(static_cast<Eigen::Index>(store.instance_category[i])) +=
            store.instance_proxies.row(static_cast<Eigen::Index>(i));
    for (std::size_t y = 0; y < sizes.size(); ++y)
        centers.row(static_cast<Eigen::Index>(y)) /= static_cast<double>(sizes[y]);
    return centers;
}

// Category loss over the derived centers. grad_proxies is with respect to the
// instance proxies (I x N), routed through the mean.
inline SoftmaxLoss category_loss(Eigen::Ref<const Vector> embedding, std::size_t target_category,
                                 const ProxyStore& store) {
    const Matrix centers = category_proxies(store);
    if (embedding.size() != centers.cols())
        throw UsageError("embedding length does not match category centers");
    SoftmaxLoss out;
    out.grad_embedding = Vector::Zero(embedding.size());
    Matrix grad_centers = Matrix::Zero(centers.rows(), centers.cols());
    out.loss = detail::accumulate_proxy_softmax(embedding, centers, target_category, 1.0,
                                                out.grad_embedding, grad_centers,
                                                &out.probabilities);
    out.grad_proxies = Matrix::Zero(store.instance_proxies.rows(), store.instance_proxies.cols());
    detail::distribute_center_grads(grad_centers, store, out.grad_proxies);
    return out;
}

struct TotalLossOptions {
    // Divide the attribute term by the number of exhibited attributes instead
    // of K.
    bool renormalize_missing_attributes = false;
};

// Per-item loss:
//   w_ins L_ins + (w_attr / K) sum_{k exhibited} L_attr_k + w_cat L_cat + w_reg ||f(x)||^2
// with the sum taken in ascending k.
inline double combine_item_loss(const LossWeights& w, double attr_denominator, double ins,
                                double attr_sum, double cat, double sq_norm) {
    return w.instance * ins + (w.attribute / attr_denominator) * attr_sum + w.category * cat +
           w.regularization * sq_norm;
}

struct LossComponents {
    double instance = 0.0;
    double attribute = 0.0; // weighted attribute term, averaged over the batch
    double category = 0.0;
    double regularization = 0.0;
    double order = 0.0;
};

struct TotalLoss {
    double loss = 0.0;
    ModelGradients grads;
    LossComponents components; // unweighted batch means, order is the raw sum
};

// Batch objective: mean over items of the per-item loss plus
// w_order * sum over ordered attributes of ||S_k - P_k||_F. `train` must be
// indexed like the model's proxies (see training_subset).
inline TotalLoss total_loss_and_grad(const Dataset& train, std::span<const std::size_t> batch,
                                     const Model& model, const LossWeights& weights,
                                     const OrderingConfig& ordering, const EmbeddingConfig& config,
                                     const TotalLossOptions& options = {}) {
    if (batch.empty()) throw UsageError("empty batch");
    const ProxyStore& store = model.proxies;
    const std::size_t K = config.attribute_count();
    const double inv_batch = 1.0 / static_cast<double>(batch.size());

    TotalLoss out;
    out.grads = ModelGradients::zeros_like(model);
    const Matrix centers = weights.category != 0.0 ? category_proxies(store) : Matrix{};
    Matrix grad_centers = Matrix::Zero(centers.rows(), centers.cols());
    Vector grad_e(static_cast<Eigen::Index>(config.superspace_dim()));

    double sum = 0.0;
    for (std::size_t j : batch) {
        const Item& item = train.items.at(j);
        if (item.split != Split::train) throw UsageError("batch contains a non-train item");
        const auto x = train.features.row(static_cast<Eigen::Index>(item.feature_row)).transpose();
        const Vector e = project(model.projector, x);
        grad_e.setZero();

        double ins = 0.0;
        if (weights.instance != 0.0)
            ins = detail::accumulate_proxy_softmax(e, store.instance_proxies, item.instance,
                                                   weights.instance * inv_batch, grad_e,
                                                   out.grads.instance_proxies);

        const double attr_denominator =
            options.renormalize_missing_attributes
                ? static_cast<double>(std::max<std::size_t>(item.attributes.size(), 1))
                : static_cast<double>(K);
        double attr_sum = 0.0;
        if (weights.attribute != 0.0) {
            const double scale = weights.attribute / attr_denominator * inv_batch;
            for (auto [k, v] : item.attributes) {
                config.check_attribute(k);
                attr_sum += detail::accumulate_proxy_softmax(
                    e.segment(config.block_start(k), config.width()), store.attribute_proxies[k], v,
                    scale, grad_e.segment(config.block_start(k), config.width()),
                    out.grads.attribute_proxies[k]);
            }
        }

        double cat = 0.0;
        if (weights.category != 0.0)
            cat = detail::accumulate_proxy_softmax(e, centers, item.category,
                                                   weights.category * inv_batch, grad_e, grad_centers);

        const double sq_norm = e.squaredNorm();
        grad_e += (2.0 * weights.regularization * inv_batch) * e;

        const double item_loss =
            combine_item_loss(weights, attr_denominator, ins, attr_sum, cat, sq_norm);
        if (!std::isfinite(item_loss))
            throw NumericError("non-finite loss for item \"" + item.item_id + "\"");
        sum += item_loss;
        out.components.instance += ins * inv_batch;
        out.components.attribute += (weights.attribute / attr_denominator) * attr_sum * inv_batch;
        out.components.category += cat * inv_batch;
        out.components.regularization += sq_norm * inv_batch;

        out.grads.W.noalias() += grad_e * x.transpose();
        out.grads.b += grad_e;
    }
    if (weights.category != 0.0)
        detail::distribute_center_grads(grad_centers, store, out.grads.instance_proxies);
    out.loss = sum * inv_batch;

    if (weights.order != 0.0 && !ordering.ranks.empty()) {
        ordering.validate();
        double order = 0.0;
        for (const auto& [k, ranks] : ordering.ranks) {
            const Matrix P = proximity_matrix(ranks, ordering.sigma);
            OrderRegularizer r = order_regularizer(store.attribute_proxies.at(k), P);
            order += r.value;
            out.grads.attribute_proxies[k] += weights.order * r.grad_proxies;
        }
        out.components.order = order;
        out.loss += weights.order * order;
    }
    if (!std::isfinite(out.loss) || !out.grads.all_finite())
        throw NumericError("non-finite loss or gradient");
    return out;
}

} // namespace coemb
