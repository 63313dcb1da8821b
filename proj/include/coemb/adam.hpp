#pragma once

#include "errors.hpp"
#include "linalg.hpp"

#include <cmath>
#include <cstdint>

namespace coemb {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// First and second moments for one parameter tensor.
struct AdamMoments {
    Eigen::ArrayXd m;
    Eigen::ArrayXd v;

    explicit AdamMoments(Eigen::Index size = 0)
        : m(Eigen::ArrayXd::Zero(size)), v(Eigen::ArrayXd::Zero(size)) {}
};

// Bias-corrected Adam update with decoupled weight decay:
//   param <- param - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * param
// `step` is the 1-based step count after increment.
template <typename Derived, typename GradDerived>
void adam_update(Eigen::DenseBase<Derived>& param, const Eigen::DenseBase<GradDerived>& grad,
                 AdamMoments& moments, double lr, double weight_decay, std::uint64_t step,
                 const AdamConfig& cfg) {
    if (step == 0) throw UsageError("adam step count starts at 1");
    if (!grad.derived().allFinite()) throw NumericError("non-finite gradient in optimizer step");
    const Eigen::Index size = param.size();
    if (grad.size() != size || moments.m.size() != size)
        throw UsageError("adam shapes disagree");
    Eigen::Map<Eigen::ArrayXd> p(param.derived().data(), size);
    Eigen::Map<const Eigen::ArrayXd> g(grad.derived().data(), size);

    moments.m = cfg.beta1 * moments.m + (1.0 - cfg.beta1) * g;
    moments.v = cfg.beta2 * moments.v + (1.0 - cfg.beta2) * g.square();
    const double t = static_cast<double>(step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    const Eigen::ArrayXd decay = lr * weight_decay * p;
    p -= lr * (moments.m / c1) / ((moments.v / c2).sqrt() + cfg.epsilon);
    p -= decay;
}

} // namespace coemb
