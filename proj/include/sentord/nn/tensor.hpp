#pragma once

#include <Eigen/Core>

namespace sentord::nn {

/// Dense row-major matrix; rows are sequence positions, columns features.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;

}  // namespace sentord::nn
