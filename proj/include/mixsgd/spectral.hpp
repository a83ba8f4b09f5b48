#pragma once

#include "mixsgd/types.hpp"

namespace mixsgd {

inline constexpr double kDefaultRankTolRel = 1e-10;

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted
/// nonincreasing and eigenvectors stored column-wise in the same order.
struct SymmetricEigen {
  Vector values;
  Matrix vectors;
};

SymmetricEigen symmetric_eigen(const Matrix& sym);

/// Second-moment summary of a design (or any PSD matrix).
///
/// lambda_min_plus is the smallest eigenvalue strictly above rank_tol; it is 0
/// only when no eigenvalue clears the tolerance, in which case kappa is 1.
struct CovarianceSummary {
  Matrix sigma_hat;
  Vector eigenvalues;
  Matrix eigenvectors;
  double lambda_max = 0.0;
  double lambda_min_plus = 0.0;
  double kappa = 1.0;
  double rank_tol = 0.0;

  Index dim() const { return sigma_hat.rows(); }
  /// Number of eigenvalues above rank_tol.
  Index rank() const;
  /// Smallest eigenvalue (possibly zero or slightly negative).
  double lambda_min() const { return eigenvalues.size() ? eigenvalues(eigenvalues.size() - 1) : 0.0; }
  bool full_rank() const { return rank() == dim(); }
};

/// rank_tol = rank_tol_rel * max(lambda_max, 1) * d.
double rank_tolerance(double lambda_max, Index d, double rank_tol_rel);

/// Summarizes an arbitrary symmetric PSD matrix.
CovarianceSummary summarize_psd(const Matrix& sigma, double rank_tol_rel = kDefaultRankTolRel);

/// Sigma_hat = (1/n) X^T X with its spectrum.
CovarianceSummary empirical_covariance(const RowMatrix& X, double rank_tol_rel = kDefaultRankTolRel);

/// Minimum-Euclidean-norm minimizer of (1/n)||X theta - y||^2 via the
/// eigen-pseudoinverse of X^T X.
Vector min_norm_erm(const RowMatrix& X, const Vector& y, double rank_tol_rel = kDefaultRankTolRel);

/// Applies the eigen-pseudoinverse of a summarized PSD matrix to rhs.
Vector pseudo_solve(const CovarianceSummary& cov, const Vector& rhs);

/// v^T Sigma v (the squared Sigma-seminorm, no square root).
double quad_form(const Vector& v, const Matrix& sigma);

}  // namespace mixsgd
