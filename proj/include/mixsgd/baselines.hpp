#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "mixsgd/data.hpp"
#include "mixsgd/losses.hpp"
#include "mixsgd/solver.hpp"
#include "mixsgd/types.hpp"

namespace mixsgd {

struct ErmOptions {
  double ball_radius = std::numeric_limits<double>::infinity();
  double grad_tol = 1e-8;
  std::int64_t max_iterations = 500000;
};

/// Square loss: minimum-norm ERM. Other losses: projected full-batch gradient
/// descent from zero with step 1/m2 until the gradient mapping is below
/// grad_tol. Hinge losses are not differentiable, so they use a projected
/// subgradient method and return the best iterate seen.
Vector fit_erm(const LabeledDataset& data, const LossModel& loss, const ErmOptions& options = {});

inline Vector source_erm(const LabeledDataset& S_P, const LossModel& loss, const ErmOptions& options = {}) {
  return fit_erm(S_P, loss, options);
}
inline Vector target_erm(const LabeledDataset& S_Q, const LossModel& loss, const ErmOptions& options = {}) {
  return fit_erm(S_Q, loss, options);
}

/// 13 log-spaced values from 1e-4 to 1e2.
std::vector<double> default_beta_grid();

/// argmin R_Q(theta) + beta ||theta - anchor||^2 on one dataset.
Vector fit_biased(const LabeledDataset& S_Q, const LossModel& loss, const Vector& anchor, double beta,
                  const ErmOptions& options = {});

struct HtlResult {
  Vector theta;
  double chosen_beta = 0.0;
  std::vector<double> cv_risk;  // mean validation risk per grid entry
};

HtlResult htl(const LabeledDataset& S_P, const LabeledDataset& S_Q, const LossModel& loss,
              const std::vector<double>& beta_grid, int folds, std::uint64_t seed, const ErmOptions& options = {});

struct PsgdResult {
  Vector theta;                // final projection of the averaged iterates
  Vector theta_bar;            // average of projected iterates
  double reference_risk_Q = 0.0;
  double max_violation = 0.0;  // largest constraint value after any projection
  double wall_time = 0.0;      // seconds, whole fit
};

/// SGD on R_P with step hp.eta; after every step the iterate is projected onto
/// {R_Q(theta) <= R_Q(theta_hat_Q) + hp.lambda_slack}, theta_hat_Q the exact
/// minimum-norm ERM. Square loss only.
PsgdResult psgd(const LabeledDataset& S_P, const LabeledDataset& S_Q, const LossModel& loss, const HyperParams& hp,
                std::uint64_t seed);

}  // namespace mixsgd
