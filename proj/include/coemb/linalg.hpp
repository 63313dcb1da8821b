#pragma once

#include <Eigen/Dense>

namespace coemb {

// Row-major so that rows (embeddings, proxies) are contiguous and the on-disk
// layouts can be written straight from memory order.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

} // namespace coemb
