#pragma once

#include "dataset.hpp"
#include "embedding.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace coemb {

// Latent proxies. Category proxies are not stored: they are the means of the
// instance proxies of each category and are derived on demand.
struct ProxyStore {
    Matrix instance_proxies;               // I x N
    std::vector<Matrix> attribute_proxies; // per attribute: V_k x n
    std::vector<std::size_t> instance_category;
    std::size_t category_count = 0;

    std::size_t instance_count() const { return static_cast<std::size_t>(instance_proxies.rows()); }

    // Instance proxies ~ N(0, 1/N), attribute value proxies ~ N(0, 1/n).
    template <typename Rng>
    static ProxyStore random(const LabelSpace& labels, std::vector<std::size_t> instance_category,
                             const EmbeddingConfig& config, Rng& rng) {
        const auto N = static_cast<Eigen::Index>(config.superspace_dim());
        const auto n = config.width();
        ProxyStore s;
        s.instance_category = std::move(instance_category);
        s.category_count = labels.categories.size();
        std::normal_distribution<double> inst(0.0, 1.0 / std::sqrt(static_cast<double>(N)));
        s.instance_proxies.resize(static_cast<Eigen::Index>(labels.instances.size()), N);
        for (Eigen::Index r = 0; r < s.instance_proxies.rows(); ++r)
            for (Eigen::Index c = 0; c < N; ++c) s.instance_proxies(r, c) = inst(rng);
        std::normal_distribution<double> attr(0.0, 1.0 / std::sqrt(static_cast<double>(n)));
        for (const AttributeSpec& a : labels.attributes) {
            Matrix m(static_cast<Eigen::Index>(a.values.size()), n);
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                for (Eigen::Index c = 0; c < n; ++c) m(r, c) = attr(rng);
            s.attribute_proxies.push_back(std::move(m));
        }
        s.validate(labels, config);
        return s;
    }

    void validate(const LabelSpace& labels, const EmbeddingConfig& config) const {
        const auto N = static_cast<Eigen::Index>(config.superspace_dim());
        if (labels.attribute_count() != config.attribute_count())
            throw DataError("label space has " + std::to_string(labels.attribute_count()) +
                            " attributes but the embedding expects " +
                            std::to_string(config.attribute_count()));
        if (instance_proxies.rows() != static_cast<Eigen::Index>(labels.instances.size()) ||
            instance_proxies.cols() != N)
            throw DataError("instance proxy count/shape disagrees with label space");
        if (instance_category.size() != labels.instances.size())
            throw DataError("instance-category map disagrees with label space");
        if (category_count != labels.categories.size())
            throw DataError("category count disagrees with label space");
        for (std::size_t y : instance_category)
            if (y >= category_count) throw DataError("instance mapped to unknown category");
        if (attribute_proxies.size() != labels.attribute_count())
            throw DataError("attribute proxy sets disagree with label space");
        for (std::size_t k = 0; k < attribute_proxies.size(); ++k)
            if (attribute_proxies[k].rows() !=
                    static_cast<Eigen::Index>(labels.attributes[k].values.size()) ||
                attribute_proxies[k].cols() != config.width())
                throw DataError("attribute proxy shape disagrees for \"" + labels.attributes[k].name + "\"");
    }

    std::vector<std::size_t> category_sizes() const {
        std::vector<std::size_t> sizes(category_count, 0);
        for (std::size_t y : instance_category) ++sizes[y];
        return sizes;
    }
};

// Every learnable parameter: the projection head and the proxies.
struct Model {
    Projector projector;
    ProxyStore proxies;
};

// Gradients shaped like the parameters of a Model.
struct ModelGradients {
    Matrix W;
    Vector b;
    Matrix instance_proxies;
    std::vector<Matrix> attribute_proxies;

    static ModelGradients zeros_like(const Model& m) {
        ModelGradients g;
        g.W = Matrix::Zero(m.projector.W.rows(), m.projector.W.cols());
        g.b = Vector::Zero(m.projector.b.size());
        g.instance_proxies =
            Matrix::Zero(m.proxies.instance_proxies.rows(), m.proxies.instance_proxies.cols());
        for (const Matrix& a : m.proxies.attribute_proxies)
            g.attribute_proxies.push_back(Matrix::Zero(a.rows(), a.cols()));
        return g;
    }

    bool all_finite() const {
        if (!W.allFinite() || !b.allFinite() || !instance_proxies.allFinite()) return false;
        for (const Matrix& a : attribute_proxies)
            if (!a.allFinite()) return false;
        return true;
    }
};

// Category of each instance in a train-only dataset (see training_subset).
inline std::vector<std::size_t> instance_categories(const Dataset& train) {
    std::vector<std::size_t> out(train.labels.instances.size(), 0);
    std::vector<bool> seen(out.size(), false);
    for (const Item& it : train.items) {
        out[it.instance] = it.category;
        seen[it.instance] = true;
    }
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i]) throw DataError("instance \"" + train.labels.instances[i] + "\" has no items");
    return out;
}

} // namespace coemb
