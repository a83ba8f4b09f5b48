#include "mixsgd/projection.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "mixsgd/data.hpp"
#include "mixsgd/errors.hpp"
#include "mixsgd/losses.hpp"

namespace mixsgd {

double QuadraticConstraint::value(const VectorRef& theta) const {
  return theta.dot(A * theta) - 2.0 * b.dot(theta) + c;
}

Vector QuadraticConstraint::gradient(const VectorRef& theta) const { return 2.0 * (A * theta - b); }

QuadraticConstraint square_risk_constraint(const LabeledDataset& data, double reference_risk, double slack) {
  const double n = static_cast<double>(data.size());
  QuadraticConstraint con;
  con.A = empirical_covariance(data.X()).sigma_hat;
  con.b = data.X().transpose() * data.y() / n;
  con.c = data.y().squaredNorm() / n - reference_risk - slack;
  return con;
}

// ---------------------------------------------------------------------------
// Quadratic sublevel sets

QuadraticProjector::QuadraticProjector(QuadraticConstraint constraint) : con_(std::move(constraint)) {
  const Index d = con_.A.rows();
  if (d == 0 || con_.A.cols() != d || con_.b.size() != d) {
    throw Error(ErrorCode::invalid_data, "quadratic constraint shapes disagree");
  }
  if (!std::isfinite(con_.c) || !con_.b.allFinite()) throw Error(ErrorCode::invalid_data, "non-finite constraint");
  eig_ = symmetric_eigen(0.5 * (con_.A + con_.A.transpose()));
  rank_tol_ = rank_tolerance(eig_.values(0), d, kDefaultRankTolRel);
  if (eig_.values(d - 1) < -rank_tol_) throw Error(ErrorCode::invalid_data, "constraint matrix is not PSD");
  for (Index i = 0; i < d; ++i) {
    if (eig_.values(i) <= rank_tol_) eig_.values(i) = 0.0;
  }
  b_eig_ = eig_.vectors.transpose() * con_.b;

  // inf g = c - b^T A^+ b when b lies in range(A), otherwise -inf.
  const double null_tol = 1e-9 * std::max(1.0, con_.b.norm());
  min_value_ = con_.c;
  for (Index i = 0; i < d; ++i) {
    if (eig_.values(i) > 0.0) {
      min_value_ -= b_eig_(i) * b_eig_(i) / eig_.values(i);
    } else if (std::abs(b_eig_(i)) > null_tol) {
      min_value_ = -std::numeric_limits<double>::infinity();
      break;
    }
  }
  const double slack_tol = kQuadraticProjectionTol * std::max(1.0, std::abs(con_.c));
  if (min_value_ > slack_tol) {
    throw Error(ErrorCode::infeasible,
                "quadratic sublevel set is empty (minimum of g is " + std::to_string(min_value_) + ")");
  }
}

ProjectionResult QuadraticProjector::project(const VectorRef& theta_bar, double tol) const {
  const Index d = b_eig_.size();
  if (theta_bar.size() != d) throw Error(ErrorCode::invalid_data, "projection: shape mismatch");
  const Vector& lam = eig_.values;
  const Vector z = eig_.vectors.transpose() * theta_bar;
  const Vector& beta = b_eig_;

  // Residual r_i = lambda_i z_i - beta_i is the eigen-gradient of g at theta_bar (halved).
  const Vector r = lam.cwiseProduct(z) - beta;
  const auto g_at = [&](double mu, Vector& coords) {
    double g = con_.c;
    for (Index i = 0; i < d; ++i) {
      const double denom = 1.0 + mu * lam(i);
      coords(i) = (z(i) + mu * beta(i)) / denom;
      g += coords(i) * (lam(i) * coords(i) - 2.0 * beta(i));
    }
    return g;
  };
  const auto dg_at = [&](double mu) {
    double s = 0.0;
    for (Index i = 0; i < d; ++i) {
      const double denom = 1.0 + mu * lam(i);
      s += r(i) * r(i) / (denom * denom * denom);
    }
    return -2.0 * s;
  };

  ProjectionResult out;
  Vector coords(d);
  const double g0 = g_at(0.0, coords);
  const double scale = std::max(1.0, std::abs(con_.c));
  if (g0 <= tol) {
    out.theta = theta_bar;
    out.constraint_value = g0;
    return out;
  }

  // Bracket: g(lo) > 0 >= g(hi).
  double lo = 0.0;
  double hi = 1.0;
  int iterations = 0;
  while (g_at(hi, coords) > 0.0) {
    lo = hi;
    hi *= 2.0;
    ++iterations;
    if (hi > 1.0 / tol) {
      throw Error(ErrorCode::nonconvergence, "projection multiplier exceeded 1/tol without bracketing the root");
    }
  }

  // g is convex and decreasing in mu, so Newton started left of the root
  // increases monotonically toward it; the bracket guards round-off. Iterate
  // until the step stalls; tol only decides acceptance below.
  double mu = lo;
  double g = g_at(mu, coords);
  for (int k = 0; k < 200; ++k, ++iterations) {
    if (g == 0.0) break;
    if (g > 0.0) {
      lo = mu;
    } else {
      hi = mu;
    }
    const double slope = dg_at(mu);
    double next = slope < 0.0 ? mu - g / slope : 0.5 * (lo + hi);
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::abs(next - mu) <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, mu)) {
      mu = next;
      g = g_at(mu, coords);
      break;
    }
    mu = next;
    g = g_at(mu, coords);
  }
  if (g > tol * scale) {
    // Fall back to the feasible bracket end.
    mu = hi;
    g = g_at(mu, coords);
  }

  out.theta = eig_.vectors * coords;
  out.mu = mu;
  out.constraint_value = con_.value(out.theta);
  out.stationarity = (out.theta - theta_bar + mu * (con_.A * out.theta - con_.b)).norm();
  out.complementarity = std::abs(mu * out.constraint_value);
  out.iterations = iterations;
  return out;
}

ProjectionResult project_quadratic_sublevel(const VectorRef& theta_bar, const QuadraticConstraint& con, double tol) {
  return QuadraticProjector(con).project(theta_bar, tol);
}

Vector project_l2_ball(const VectorRef& theta, double radius) {
  if (!(radius > 0.0)) throw Error(ErrorCode::invalid_config, "ball radius must be positive");
  const double norm = theta.norm();
  if (norm <= radius) return theta;
  return theta * (radius / norm);
}

// ---------------------------------------------------------------------------
// General convex sublevel sets

ConvexConstraint risk_constraint(const LossModel& loss, const LabeledDataset& data, double reference_risk,
                                 double slack) {
  ConvexConstraint g;
  g.value = [&loss, &data, reference_risk, slack](const Vector& theta) {
    return empirical_risk(loss, data, theta) - reference_risk - slack;
  };
  g.gradient = [&loss, &data](const Vector& theta) { return empirical_risk_grad(loss, data, theta); };
  g.smoothness = loss.m2;
  return g;
}

namespace {

// Minimizes ||theta - theta_bar||^2 + mu g(theta) from a warm start.
Vector solve_penalized(const VectorRef& theta_bar, const ConvexConstraint& g, double mu, Vector theta,
                       const GeneralProjectionOptions& opt) {
  const double L = 2.0 + mu * g.smoothness;
  const double step = 1.0 / L;
  const double momentum = (std::sqrt(L) - std::sqrt(2.0)) / (std::sqrt(L) + std::sqrt(2.0));
  Vector prev = theta;
  Vector look = theta;
  double grad_norm = std::numeric_limits<double>::infinity();
  for (int k = 0; k < opt.max_inner_iterations; ++k) {
    const Vector grad = 2.0 * (look - theta_bar) + mu * g.gradient(look);
    grad_norm = grad.norm();
    if (grad_norm <= opt.tol) return look;
    prev = theta;
    theta = look - step * grad;
    look = theta + momentum * (theta - prev);
  }
  throw Error(ErrorCode::nonconvergence,
              "inner projection solve did not converge; last gradient norm " + std::to_string(grad_norm));
}

}  // namespace

ProjectionResult project_general_convex(const VectorRef& theta_bar, const ConvexConstraint& g,
                                        const GeneralProjectionOptions& opt) {
  ProjectionResult out;
  const Vector start = theta_bar;
  const double g0 = g.value(start);
  if (g0 <= 0.0) {
    out.theta = start;
    out.constraint_value = g0;
    return out;
  }

  double lo = 0.0;
  double hi = 1.0;
  Vector theta_hi = solve_penalized(theta_bar, g, hi, start, opt);
  double g_hi = g.value(theta_hi);
  int iterations = 1;
  while (g_hi > 0.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > opt.mu_max) {
      throw Error(ErrorCode::nonconvergence,
                  "projection multiplier exceeded mu_max; last constraint value " + std::to_string(g_hi));
    }
    theta_hi = solve_penalized(theta_bar, g, hi, theta_hi, opt);
    g_hi = g.value(theta_hi);
    ++iterations;
  }

  double mu = hi;
  Vector theta = theta_hi;
  double g_val = g_hi;
  for (int k = 0; k < opt.max_outer_iterations && g_val < -opt.tol; ++k, ++iterations) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    Vector candidate = solve_penalized(theta_bar, g, mid, theta, opt);
    const double g_mid = g.value(candidate);
    // Only feasible candidates are kept, so the result never violates g <= 0.
    if (g_mid > 0.0) {
      lo = mid;
    } else {
      hi = mid;
      mu = mid;
      theta = std::move(candidate);
      g_val = g_mid;
    }
  }

  out.theta = std::move(theta);
  out.mu = mu;
  out.constraint_value = g_val;
  out.stationarity = (out.theta - theta_bar + 0.5 * mu * g.gradient(out.theta)).norm();
  out.complementarity = std::abs(mu * g_val);
  out.iterations = iterations;
  return out;
}

}  // namespace mixsgd
