#pragma once

#include <functional>

#include "mixsgd/spectral.hpp"
#include "mixsgd/types.hpp"

namespace mixsgd {

class LabeledDataset;
struct LossModel;

inline constexpr double kQuadraticProjectionTol = 1e-10;
inline constexpr double kGeneralProjectionTol = 1e-7;
inline constexpr double kGeneralMuMax = 1e8;

/// g(theta) = theta^T A theta - 2 b^T theta + c, with A symmetric PSD.
struct QuadraticConstraint {
  Matrix A;
  Vector b;
  double c = 0.0;

  double value(const VectorRef& theta) const;
  /// 2 (A theta - b)
  Vector gradient(const VectorRef& theta) const;
};

/// Sublevel set {R_hat(theta) - reference_risk - slack <= 0} of the square-loss
/// empirical risk on `data`: A = Sigma_hat, b = X^T y / n, c = ||y||^2 / n - reference_risk - slack.
QuadraticConstraint square_risk_constraint(const LabeledDataset& data, double reference_risk, double slack);

/// Result of a Euclidean projection with its KKT certificate.
struct ProjectionResult {
  Vector theta;
  double mu = 0.0;               // multiplier of g(theta) <= 0
  double constraint_value = 0.0; // g(theta)
  double stationarity = 0.0;     // ||theta - theta_bar + mu * grad g(theta) / 2||
  double complementarity = 0.0;  // |mu * g(theta)|
  int iterations = 0;
};

/// Projects onto {g <= 0} for a fixed quadratic constraint.
///
/// A is eigendecomposed once at construction; each projection then solves the
/// scalar dual equation g(theta(mu)) = 0, theta(mu) = (I + mu A)^{-1}(theta_bar + mu b),
/// in the eigenbasis by safeguarded Newton with a bisection fallback. The
/// function mu -> g(theta(mu)) is nonincreasing, so a bracket grown
/// geometrically from [0, 1] always exists for a nonempty set.
class QuadraticProjector {
 public:
  /// Throws infeasible when the sublevel set is empty.
  explicit QuadraticProjector(QuadraticConstraint constraint);

  const QuadraticConstraint& constraint() const { return con_; }
  double value(const VectorRef& theta) const { return con_.value(theta); }
  /// Infimum of g over R^d (-inf when b leaves range(A)).
  double min_value() const { return min_value_; }

  ProjectionResult project(const VectorRef& theta_bar, double tol = kQuadraticProjectionTol) const;

 private:
  QuadraticConstraint con_;
  SymmetricEigen eig_;
  Vector b_eig_;
  double rank_tol_ = 0.0;
  double min_value_ = 0.0;
};

ProjectionResult project_quadratic_sublevel(const VectorRef& theta_bar, const QuadraticConstraint& con,
                                            double tol = kQuadraticProjectionTol);

/// theta * min(1, radius / ||theta||)
Vector project_l2_ball(const VectorRef& theta, double radius);

/// A differentiable convex constraint functional g with a smoothness bound.
struct ConvexConstraint {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  double smoothness = 1.0;  // Lipschitz constant of grad g
};

/// Constraint R_hat(theta) - reference_risk - slack <= 0 for any loss.
ConvexConstraint risk_constraint(const LossModel& loss, const LabeledDataset& data, double reference_risk,
                                 double slack);

struct GeneralProjectionOptions {
  double tol = kGeneralProjectionTol;
  double mu_max = kGeneralMuMax;
  int max_inner_iterations = 200000;
  int max_outer_iterations = 200;
};

/// Projection onto {g <= 0} for general convex g.
///
/// Outer bisection on the multiplier mu in [0, mu_max]; the inner problem
/// min ||theta - theta_bar||^2 + mu g(theta) is solved by accelerated gradient
/// steps of size 1 / (2 + mu * smoothness) until its gradient norm is <= tol.
/// Only feasible bisection points are kept, so the result satisfies g <= 0;
/// when the constraint is active it also satisfies g >= -tol unless the
/// bracket collapses first.
ProjectionResult project_general_convex(const VectorRef& theta_bar, const ConvexConstraint& g,
                                        const GeneralProjectionOptions& options = {});

}  // namespace mixsgd
