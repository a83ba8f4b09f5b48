#include "mixsgd/spectral.hpp"

#include <algorithm>
#include <cmath>

#include "mixsgd/errors.hpp"

namespace mixsgd {

namespace {

void require_finite(const auto& m, const char* what) {
  if (!m.allFinite()) throw Error(ErrorCode::invalid_data, std::string(what) + " has non-finite entries");
}

}  // namespace

SymmetricEigen symmetric_eigen(const Matrix& sym) {
  if (sym.rows() != sym.cols()) throw Error(ErrorCode::invalid_data, "matrix is not square");
  require_finite(sym, "matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) throw Error(ErrorCode::nonconvergence, "symmetric eigensolver failed");
  // Eigen sorts ascending; flip to nonincreasing.
  SymmetricEigen out;
  out.values = solver.eigenvalues().reverse();
  out.vectors = solver.eigenvectors().rowwise().reverse();
  return out;
}

Index CovarianceSummary::rank() const {
  return static_cast<Index>((eigenvalues.array() > rank_tol).count());
}

double rank_tolerance(double lambda_max, Index d, double rank_tol_rel) {
  return rank_tol_rel * std::max(lambda_max, 1.0) * static_cast<double>(d);
}

CovarianceSummary summarize_psd(const Matrix& sigma, double rank_tol_rel) {
  if (sigma.rows() == 0) throw Error(ErrorCode::empty_dataset, "empty matrix");
  CovarianceSummary s;
  // Symmetrize to remove round-off asymmetry from the caller's product.
  s.sigma_hat = 0.5 * (sigma + sigma.transpose());
  auto eig = symmetric_eigen(s.sigma_hat);
  s.eigenvalues = std::move(eig.values);
  s.eigenvectors = std::move(eig.vectors);
  s.lambda_max = s.eigenvalues(0);
  s.rank_tol = rank_tolerance(s.lambda_max, s.dim(), rank_tol_rel);
  s.lambda_min_plus = 0.0;
  for (Index i = s.eigenvalues.size() - 1; i >= 0; --i) {
    if (s.eigenvalues(i) > s.rank_tol) {
      s.lambda_min_plus = s.eigenvalues(i);
      break;
    }
  }
  s.kappa = s.lambda_min_plus > 0.0 ? s.lambda_max / s.lambda_min_plus : 1.0;
  return s;
}

CovarianceSummary empirical_covariance(const RowMatrix& X, double rank_tol_rel) {
  if (X.rows() == 0) throw Error(ErrorCode::empty_dataset, "no rows");
  if (X.cols() == 0) throw Error(ErrorCode::invalid_data, "no columns");
  require_finite(X, "feature matrix");
  Matrix gram = Matrix::Zero(X.cols(), X.cols());
  gram.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  gram /= static_cast<double>(X.rows());
  return summarize_psd(gram, rank_tol_rel);
}

Vector pseudo_solve(const CovarianceSummary& cov, const Vector& rhs) {
  if (rhs.size() != cov.dim()) throw Error(ErrorCode::invalid_data, "pseudo_solve: shape mismatch");
  Vector coeffs = cov.eigenvectors.transpose() * rhs;
  for (Index i = 0; i < coeffs.size(); ++i) {
    coeffs(i) = cov.eigenvalues(i) > cov.rank_tol ? coeffs(i) / cov.eigenvalues(i) : 0.0;
  }
  return cov.eigenvectors * coeffs;
}

Vector min_norm_erm(const RowMatrix& X, const Vector& y, double rank_tol_rel) {
  if (X.rows() != y.size()) throw Error(ErrorCode::invalid_data, "min_norm_erm: X rows != y size");
  require_finite(y, "label vector");
  const auto cov = empirical_covariance(X, rank_tol_rel);
  const Vector xty = X.transpose() * y / static_cast<double>(X.rows());
  return pseudo_solve(cov, xty);
}

double quad_form(const Vector& v, const Matrix& sigma) {
  if (sigma.rows() != v.size() || sigma.cols() != v.size()) {
    throw Error(ErrorCode::invalid_data, "quad_form: shape mismatch");
  }
  return v.dot(sigma * v);
}

}  // namespace mixsgd
