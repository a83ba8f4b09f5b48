#pragma once

#include <Eigen/Dense>

namespace mixsgd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Row-major so that a single example X.row(i) is contiguous in the SGD loops.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorRef = Eigen::Ref<const Vector>;
using Index = Eigen::Index;

}  // namespace mixsgd
