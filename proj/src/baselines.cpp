#include "mixsgd/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "mixsgd/errors.hpp"
#include "mixsgd/projection.hpp"
#include "mixsgd/rng.hpp"
#include "mixsgd/spectral.hpp"

namespace mixsgd {

namespace {

bool is_hinge(const LossModel& loss) {
  return loss.kind == LossKind::hinge || loss.kind == LossKind::weighted_hinge;
}

Vector clip(const Vector& theta, double radius) {
  return std::isfinite(radius) ? project_l2_ball(theta, radius) : theta;
}

// Projected gradient descent on R(theta) + beta ||theta - anchor||^2.
Vector smooth_descent(const LabeledDataset& data, const LossModel& loss, const Vector& anchor, double beta,
                      const ErmOptions& options) {
  const double step = 1.0 / (loss.m2 + 2.0 * beta);
  Vector theta = clip(Vector::Zero(data.dim()), options.ball_radius);
  for (std::int64_t k = 0; k < options.max_iterations; ++k) {
    Vector grad = empirical_risk_grad(loss, data, theta);
    if (beta > 0.0) grad += 2.0 * beta * (theta - anchor);
    Vector next = clip(theta - step * grad, options.ball_radius);
    const double mapping = (theta - next).norm() / step;
    if (!std::isfinite(mapping)) throw Error(ErrorCode::divergence, "gradient descent diverged");
    theta = std::move(next);
    if (mapping <= options.grad_tol) return theta;
  }
  throw Error(ErrorCode::nonconvergence, "gradient descent did not reach gradient norm " +
                                             std::to_string(options.grad_tol) + " within " +
                                             std::to_string(options.max_iterations) + " iterations");
}

Vector subgradient_descent(const LabeledDataset& data, const LossModel& loss, const Vector& anchor, double beta,
                           const ErmOptions& options) {
  const auto objective = [&](const Vector& th) {
    return empirical_risk(loss, data, th) + (beta > 0.0 ? beta * (th - anchor).squaredNorm() : 0.0);
  };
  const double scale = 1.0 / std::max(1e-12, data.max_feature_norm());
  const std::int64_t iterations = std::min<std::int64_t>(options.max_iterations, 20000);
  Vector theta = clip(Vector::Zero(data.dim()), options.ball_radius);
  Vector best = theta;
  double best_value = objective(theta);
  for (std::int64_t k = 0; k < iterations; ++k) {
    Vector grad = empirical_risk_grad(loss, data, theta);
    if (beta > 0.0) grad += 2.0 * beta * (theta - anchor);
    theta = clip(theta - (scale / std::sqrt(static_cast<double>(k + 1))) * grad, options.ball_radius);
    const double value = objective(theta);
    if (value < best_value) {
      best_value = value;
      best = theta;
    }
  }
  return best;
}

}  // namespace

Vector fit_erm(const LabeledDataset& data, const LossModel& loss, const ErmOptions& options) {
  check_labels(loss, data);
  if (loss.kind == LossKind::square && !std::isfinite(options.ball_radius)) {
    return min_norm_erm(data.X(), data.y());
  }
  const Vector zero = Vector::Zero(data.dim());
  return is_hinge(loss) ? subgradient_descent(data, loss, zero, 0.0, options)
                        : smooth_descent(data, loss, zero, 0.0, options);
}

std::vector<double> default_beta_grid() {
  std::vector<double> grid(13);
  for (int i = 0; i < 13; ++i) grid[static_cast<std::size_t>(i)] = std::pow(10.0, -4.0 + 0.5 * i);
  return grid;
}

Vector fit_biased(const LabeledDataset& S_Q, const LossModel& loss, const Vector& anchor, double beta,
                  const ErmOptions& options) {
  if (!(beta >= 0.0)) throw Error(ErrorCode::invalid_config, "beta must be nonnegative");
  if (beta == 0.0) return fit_erm(S_Q, loss, options);
  check_labels(loss, S_Q);
  if (loss.kind == LossKind::square && !std::isfinite(options.ball_radius)) {
    const double n = static_cast<double>(S_Q.size());
    Matrix lhs = S_Q.X().transpose() * S_Q.X() / n;
    lhs.diagonal().array() += beta;
    const Vector rhs = S_Q.X().transpose() * S_Q.y() / n + beta * anchor;
    return lhs.llt().solve(rhs);
  }
  return is_hinge(loss) ? subgradient_descent(S_Q, loss, anchor, beta, options)
                        : smooth_descent(S_Q, loss, anchor, beta, options);
}

HtlResult htl(const LabeledDataset& S_P, const LabeledDataset& S_Q, const LossModel& loss,
              const std::vector<double>& beta_grid, int folds, std::uint64_t seed, const ErmOptions& options) {
  if (beta_grid.empty()) throw Error(ErrorCode::invalid_config, "empty beta grid");
  if (folds < 2) throw Error(ErrorCode::invalid_config, "htl needs at least 2 folds");
  if (S_Q.size() < folds) throw Error(ErrorCode::invalid_config, "fewer target samples than folds");
  for (double beta : beta_grid) {
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw Error(ErrorCode::invalid_config, "beta must be finite and >= 0");
  }

  const Vector anchor = fit_erm(S_P, loss, options);
  // Validation uses a smooth surrogate for classification.
  const LossModel metric = loss.is_classification() ? LossModel{LossKind::logistic, 0.0, 1.0, 0.5} : loss;

  const auto order = permutation(S_Q.size(), seed);
  std::vector<std::vector<Index>> train(static_cast<std::size_t>(folds));
  std::vector<std::vector<Index>> valid(static_cast<std::size_t>(folds));
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto fold = static_cast<int>(i % static_cast<std::size_t>(folds));
    for (int k = 0; k < folds; ++k) {
      (k == fold ? valid : train)[static_cast<std::size_t>(k)].push_back(order[i]);
    }
  }

  HtlResult result;
  result.cv_risk.assign(beta_grid.size(), 0.0);
  for (int k = 0; k < folds; ++k) {
    const auto fit_set = S_Q.subset(train[static_cast<std::size_t>(k)]);
    const auto val_set = S_Q.subset(valid[static_cast<std::size_t>(k)]);
    for (std::size_t g = 0; g < beta_grid.size(); ++g) {
      const Vector theta = fit_biased(fit_set, loss, anchor, beta_grid[g], options);
      result.cv_risk[g] += empirical_risk(metric, val_set, theta) / folds;
    }
  }
  const auto best = std::min_element(result.cv_risk.begin(), result.cv_risk.end()) - result.cv_risk.begin();
  result.chosen_beta = beta_grid[static_cast<std::size_t>(best)];
  result.theta = fit_biased(S_Q, loss, anchor, result.chosen_beta, options);
  return result;
}

PsgdResult psgd(const LabeledDataset& S_P, const LabeledDataset& S_Q, const LossModel& loss, const HyperParams& hp,
                std::uint64_t seed) {
  if (loss.kind != LossKind::square) throw Error(ErrorCode::invalid_config, "psgd needs the square loss");
  if (S_P.dim() != S_Q.dim()) throw Error(ErrorCode::invalid_data, "source and target dimensions differ");
  hp.validate();
  const auto start = std::chrono::steady_clock::now();

  PsgdResult out;
  const Vector theta_Q = min_norm_erm(S_Q.X(), S_Q.y());
  out.reference_risk_Q = empirical_risk(loss, S_Q, theta_Q);
  const QuadraticProjector projector(square_risk_constraint(S_Q, out.reference_risk_Q, hp.lambda_slack));

  Rng rng(seed);
  const auto n_P = static_cast<std::uint64_t>(S_P.size());
  Vector theta = projector.project(Vector::Zero(S_P.dim())).theta;
  Vector sum = Vector::Zero(S_P.dim());
  for (std::int64_t t = 0; t < hp.T; ++t) {
    const auto i = static_cast<Index>(rng.uniform_index(n_P));
    const auto x = S_P.X().row(i).transpose();
    const double score = theta.dot(x);
    if (!std::isfinite(score)) {
      throw Error(ErrorCode::divergence, "psgd iterate became non-finite at step " + std::to_string(t));
    }
    theta.noalias() -= (hp.eta * loss.derivative_from_score(score, S_P.y()(i))) * x;
    auto proj = projector.project(theta);
    out.max_violation = std::max(out.max_violation, proj.constraint_value);
    theta = std::move(proj.theta);
    sum += theta;
  }
  out.theta_bar = sum / static_cast<double>(hp.T);
  auto final_proj = projector.project(out.theta_bar);
  out.max_violation = std::max(out.max_violation, final_proj.constraint_value);
  out.theta = std::move(final_proj.theta);
  out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace mixsgd
