#pragma once

#include "errors.hpp"
#include "linalg.hpp"

#include <cmath>
#include <cstddef>
#include <random>
#include <string>

namespace coemb {

inline constexpr double zero_block_eps = 1e-12;

// Superspace of dimension N = K * n. Attribute k owns the contiguous block
// [k*n, (k+1)*n); the blocks partition the coordinates.
class EmbeddingConfig {
public:
    EmbeddingConfig() = default;
    EmbeddingConfig(std::size_t attributes, std::size_t subspace_width)
        : K_(attributes), n_(subspace_width) {
        if (K_ == 0 || n_ == 0)
            throw UsageError("embedding needs at least one attribute and a positive subspace width");
    }

    static EmbeddingConfig from_superspace(std::size_t superspace_dim, std::size_t attributes) {
        if (attributes == 0 || superspace_dim % attributes != 0)
            throw UsageError("superspace dimension " + std::to_string(superspace_dim) +
                             " is not divisible by attribute count " + std::to_string(attributes));
        return EmbeddingConfig(attributes, superspace_dim / attributes);
    }

    std::size_t superspace_dim() const { return K_ * n_; }
    std::size_t attribute_count() const { return K_; }
    std::size_t subspace_width() const { return n_; }
    Eigen::Index block_start(std::size_t k) const { return static_cast<Eigen::Index>(k * n_); }
    Eigen::Index width() const { return static_cast<Eigen::Index>(n_); }

    void check_attribute(std::size_t k) const {
        if (k >= K_)
            throw UsageError("attribute index " + std::to_string(k) + " out of range (K=" +
                             std::to_string(K_) + ")");
    }

    // Binary gating vector M_k.
    Vector mask(std::size_t k) const {
        check_attribute(k);
        Vector m = Vector::Zero(static_cast<Eigen::Index>(superspace_dim()));
        m.segment(block_start(k), width()).setOnes();
        return m;
    }

    friend bool operator==(const EmbeddingConfig&, const EmbeddingConfig&) = default;

private:
    std::size_t K_ = 1;
    std::size_t n_ = 1;
};

// Affine head f(x) = W x + b mapping features into the superspace.
struct Projector {
    Matrix W;
    Vector b;

    std::size_t output_dim() const { return static_cast<std::size_t>(W.rows()); }
    std::size_t input_dim() const { return static_cast<std::size_t>(W.cols()); }

    // W ~ N(0, 1/d) entrywise, b = 0.
    template <typename Rng>
    static Projector random(std::size_t output_dim, std::size_t input_dim, Rng& rng) {
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(input_dim)));
        Projector p;
        p.W.resize(static_cast<Eigen::Index>(output_dim), static_cast<Eigen::Index>(input_dim));
        for (Eigen::Index r = 0; r < p.W.rows(); ++r)
            for (Eigen::Index c = 0; c < p.W.cols(); ++c) p.W(r, c) = normal(rng);
        p.b = Vector::Zero(static_cast<Eigen::Index>(output_dim));
        return p;
    }
};

template <typename Derived>
Vector project(const Projector& p, const Eigen::MatrixBase<Derived>& feature) {
    if (feature.size() != p.W.cols())
        throw UsageError("feature dimension " + std::to_string(feature.size()) +
                         " does not match projector input " + std::to_string(p.W.cols()));
    return p.W * feature + p.b;
}

// Embeddings of several feature rows at once, one output row per input row.
inline Matrix project_rows(const Projector& p, const Matrix& features) {
    if (features.cols() != p.W.cols())
        throw UsageError("feature dimension does not match projector input");
    Matrix out = features * p.W.transpose();
    out.rowwise() += p.b.transpose();
    return out;
}

template <typename Derived>
Vector mask_subspace(const Eigen::MatrixBase<Derived>& embedding, std::size_t k,
                     const EmbeddingConfig& config) {
    config.check_attribute(k);
    if (static_cast<std::size_t>(embedding.size()) != config.superspace_dim())
        throw UsageError("embedding length does not match superspace dimension");
    return embedding.segment(config.block_start(k), config.width());
}

// Scales each subspace block to unit L2 norm; blocks with norm below 1e-12
// become zero.
template <typename Derived>
void normalize_per_subspace_inplace(Eigen::MatrixBase<Derived>& embedding,
                                    const EmbeddingConfig& config) {
    for (std::size_t k = 0; k < config.attribute_count(); ++k) {
        auto block = embedding.segment(config.block_start(k), config.width());
        const double norm = block.norm();
        if (norm >= zero_block_eps)
            block /= norm;
        else
            block.setZero();
    }
}

inline void normalize_rows_per_subspace(Matrix& rows, const EmbeddingConfig& config) {
    if (static_cast<std::size_t>(rows.cols()) != config.superspace_dim())
        throw UsageError("embedding length does not match superspace dimension");
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        Eigen::Map<Vector> row(rows.row(r).data(), rows.cols());
        normalize_per_subspace_inplace(row, config);
    }
}

template <typename Derived>
Vector normalize_per_subspace(const Eigen::MatrixBase<Derived>& embedding,
                              const EmbeddingConfig& config) {
    if (static_cast<std::size_t>(embedding.size()) != config.superspace_dim())
        throw UsageError("embedding length does not match superspace dimension");
    Vector out = embedding;
    normalize_per_subspace_inplace(out, config);
    return out;
}

} // namespace coemb
