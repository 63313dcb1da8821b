#pragma once

#include "coemb/coemb.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <vector>

namespace testing_support {

using namespace coemb;

struct SmallSpec {
    std::size_t instances = 6;
    std::size_t categories = 3;
    std::vector<std::size_t> values{3, 4};
    std::optional<std::size_t> ordered;
    std::size_t images_per_instance = 2;
    std::size_t feature_dim = 5;
    double missing_probability = 0.0;
};

// Train-only dataset with random labels; every category gets at least one
// instance and every instance keeps its labels across its images.
inline Dataset random_train_dataset(const SmallSpec& spec, std::mt19937_64& rng) {
    std::vector<AttributeSpec> attrs;
    for (std::size_t k = 0; k < spec.values.size(); ++k) {
        AttributeSpec a;
        a.name = "a" + std::to_string(k);
        for (std::size_t v = 0; v < spec.values[k]; ++v) a.values.push_back("v" + std::to_string(v));
        if (spec.ordered == k) {
            a.ordered = true;
            double r = 0.0;
            for (std::size_t v = 0; v < spec.values[k]; ++v) a.ranks.push_back(r += 1.0);
        }
        attrs.push_back(std::move(a));
    }
    std::vector<std::string> cats, insts;
    for (std::size_t y = 0; y < spec.categories; ++y) cats.push_back("c" + std::to_string(y));
    for (std::size_t i = 0; i < spec.instances; ++i) insts.push_back("i" + std::to_string(i));

    Dataset ds;
    ds.labels = LabelSpace(std::move(attrs), std::move(cats), std::move(insts));
    const std::size_t rows = spec.instances * spec.images_per_instance;
    std::normal_distribution<double> normal;
    std::bernoulli_distribution missing(spec.missing_probability);
    ds.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(spec.feature_dim));
    for (Eigen::Index r = 0; r < ds.features.rows(); ++r)
        for (Eigen::Index c = 0; c < ds.features.cols(); ++c) ds.features(r, c) = normal(rng);
    std::size_t row = 0;
    for (std::size_t i = 0; i < spec.instances; ++i) {
        const std::size_t y = i < spec.categories
                                  ? i
                                  : std::uniform_int_distribution<std::size_t>(0, spec.categories - 1)(rng);
        AttributeValues attrs_of;
        for (std::size_t k = 0; k < spec.values.size(); ++k)
            if (!missing(rng))
                attrs_of[k] = std::uniform_int_distribution<std::size_t>(0, spec.values[k] - 1)(rng);
        for (std::size_t m = 0; m < spec.images_per_instance; ++m, ++row) {
            Item it;
            it.item_id = "x" + std::to_string(row);
            it.instance = i;
            it.category = y;
            it.attributes = attrs_of;
            it.feature_row = row;
            ds.items.push_back(std::move(it));
        }
    }
    ds.validate();
    return ds;
}

// Model with projector and proxies of the given scale, biases included.
inline Model random_model(const Dataset& train, const EmbeddingConfig& config, std::mt19937_64& rng,
                          double scale = 0.5) {
    Model m = initialize_model(train, config, rng());
    std::normal_distribution<double> normal(0.0, scale);
    for (Eigen::Index i = 0; i < m.projector.b.size(); ++i) m.projector.b(i) = normal(rng);
    m.projector.W *= scale;
    return m;
}

// Visits every scalar parameter of a model in a fixed order.
inline void for_each_parameter(Model& m, const std::function<void(double&)>& fn) {
    for (Eigen::Index i = 0; i < m.projector.W.size(); ++i) fn(m.projector.W.data()[i]);
    for (Eigen::Index i = 0; i < m.projector.b.size(); ++i) fn(m.projector.b.data()[i]);
    for (Eigen::Index i = 0; i < m.proxies.instance_proxies.size(); ++i)
        fn(m.proxies.instance_proxies.data()[i]);
    for (Matrix& a : m.proxies.attribute_proxies)
        for (Eigen::Index i = 0; i < a.size(); ++i) fn(a.data()[i]);
}

inline std::vector<double> flatten(const ModelGradients& g) {
    std::vector<double> out(g.W.data(), g.W.data() + g.W.size());
    out.insert(out.end(), g.b.data(), g.b.data() + g.b.size());
    out.insert(out.end(), g.instance_proxies.data(), g.instance_proxies.data() + g.instance_proxies.size());
    for (const Matrix& a : g.attribute_proxies) out.insert(out.end(), a.data(), a.data() + a.size());
    return out;
}

// Central differences of `loss` with respect to every parameter of `m`.
inline std::vector<double> numeric_gradient(Model m, const std::function<double(const Model&)>& loss,
                                            double eps = 1e-5) {
    std::vector<double*> params;
    for_each_parameter(m, [&](double& p) { params.push_back(&p); });
    std::vector<double> out;
    for (double* p : params) {
        const double saved = *p;
        *p = saved + eps;
        const double up = loss(m);
        *p = saved - eps;
        const double down = loss(m);
        *p = saved;
        out.push_back((up - down) / (2.0 * eps));
    }
    return out;
}

// Largest elementwise |a - b| / max(|a|, |b|, floor).
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b,
                                 double floor) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

inline std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("coemb_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace testing_support
