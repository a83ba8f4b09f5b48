#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string_view>
#include <vector>

#include "mixsgd/data.hpp"
#include "mixsgd/losses.hpp"
#include "mixsgd/spectral.hpp"
#include "mixsgd/types.hpp"

namespace mixsgd {

enum class SolverMode { square, general };

/// How eta and gamma are chosen once the sample-dependent constants are known.
///
/// theory: the four-term c_eta minimum with gamma = G_theta^2 c_eta / sqrt(T).
/// stable: eta = 1 / (m2 (1 + lambda_star_hat)) with m2 the per-example
///   smoothness, and gamma chosen so the total dual contraction gamma*eta*T
///   equals 1/8, the largest value the theory choice can produce.
enum class StepsizePolicy { theory, stable };

std::string_view to_string(StepsizePolicy policy);
StepsizePolicy parse_stepsize_policy(std::string_view name);

/// alpha_t = scale / (t + offset)
struct StepSchedule {
  double scale = 1.0;
  double offset = 1.0;
  double at(std::int64_t t) const { return scale / (static_cast<double>(t) + offset); }
};

/// Square loss: scale = 1 / lambda_min_plus(Sigma_Q), offset = 2 M_x^2 / lambda_min_plus(Sigma_Q).
///
/// The offset uses the per-example curvature bound M_x^2 >= lambda_max(Sigma_Q)
/// so that the first step alpha_0 * 2||x||^2 never exceeds 1.
StepSchedule square_loss_schedule(const CovarianceSummary& cov_Q, double max_feature_norm);
/// General loss: scale = 1 / m1, offset = 2 m2 / m1. Requires m1 > 0.
StepSchedule general_loss_schedule(const LossModel& loss);

struct Epsilons {
  double P = 0.0;
  double Q = 0.0;
};

/// eps_mu = c0 * sigma_y^2 * (d + ln(1/tau)) / n_mu
Epsilons compute_epsilons(Index d, Index n_P, Index n_Q, double sigma_y, double c0, double tau);

/// Residual standard deviation of the target min-norm fit with a
/// degrees-of-freedom correction. When fewer than max(5, n/10) residual degrees
/// of freedom remain, the label standard deviation is returned instead.
double estimate_sigma_y(const LabeledDataset& S_Q);

/// Target-only SGD from zero: N steps with the given schedule, optionally
/// projected onto an l2 ball.
Vector warmup(const LabeledDataset& S_Q, const LossModel& loss, const StepSchedule& schedule, std::int64_t N,
              std::uint64_t seed, double ball_radius = std::numeric_limits<double>::infinity());
/// Square-loss warm-up with the schedule derived from S_Q.
Vector warmup(const LabeledDataset& S_Q, const LossModel& loss, std::int64_t N, std::uint64_t seed);

/// Computable upper bound on rho = ||theta_tilde_PQ|| from a warm-up point:
///   rho^2 <= 1/2 ((||grad R_P||^2 + (lmax_P / lmin+_Q)^2 ||grad R_Q||^2) / lmin_P^2)^2
///            + 2 M_x^2 M_y^2 / lmin_P^2.
/// Sigma_P must be numerically invertible unless ridge_fallback adds 1e-8 * lmax_P.
double estimate_rho(const LabeledDataset& S_P, const LabeledDataset& S_Q, const Vector& theta_Q_N,
                    bool ridge_fallback = false);

/// G_theta <= 3 M_x^2 rho + M_x M_y
double estimate_g_theta(double rho, double M_x, double M_y_hat);

/// G_lambda <= 18 (M_x^2 rho^2 + M_y + M_x^4 M_y^2 (1 + ln(T + 2 kappa_Q))^2 / lmin+_Q^2) + 6 eps_Q
double estimate_g_lambda(double rho, double M_x, double M_y_hat, double T, double kappa_Q,
                         double lambda_min_plus_Q, double epsilon_Q);

/// lambda* <= lmax_P / lmin+_Q + ||grad R_P(theta_Q)|| / (2 sqrt(lmin+_Q eps_Q))
double estimate_lambda_star(const CovarianceSummary& cov_P, const CovarianceSummary& cov_Q,
                            double grad_P_at_theta_Q_norm, double epsilon_Q);

struct Stepsizes {
  double c_eta = 0.0;
  double eta = 0.0;
  double gamma = 0.0;
  double sigma_PQ = 0.0;
  double C_PQ = 0.0;
  std::array<double, 4> candidates{};  // the four terms of the c_eta minimum
};

/// c_eta = min{rho / (2 sqrt2 G_l), rho / (2 (1 + sqrt2 rho + l*) G_t),
///             rho / (16 sqrt6 sigma_PQ sqrt(ln(2/tau))), rho / (4 C_PQ)},
/// eta = c_eta / sqrt(T), gamma = G_t^2 c_eta / sqrt(T).
Stepsizes stepsizes_from_constants(double rho, double g_theta_hat, double g_lambda_hat, double lambda_star_hat,
                                   double sigma_PQ, double C_PQ, double tau, double T);

/// Fills sigma_PQ^2 = 256 (1 + l*^2 + rho^2) G_t^2,
/// sigma_Q^2 = (ln(T + 2 kappa_Q) M_x M_y / lmin+_Q)^2 and
/// C_PQ = (1 + 2 kappa_Q) M_x^2 M_y^2 + 6 sigma_Q^2 ln(2/tau) / lmin+_Q, then
/// applies stepsizes_from_constants.
Stepsizes derive_stepsizes(double rho, double g_theta_hat, double g_lambda_hat, double lambda_star_hat, double M_x,
                           double M_y_hat, double kappa_Q, double lambda_min_plus_Q, double tau, double T);

/// Every constant the solver needs.
struct HyperParams {
  SolverMode mode = SolverMode::square;
  StepsizePolicy policy = StepsizePolicy::stable;
  double epsilon_Q = 0.0;
  double epsilon_P = 0.0;
  double tau = 0.05;
  double c0 = 1.0;
  double sigma_y = 1.0;
  std::int64_t T = 0;
  double c_eta = 0.0;
  double eta = 0.0;
  double gamma = 0.0;
  StepSchedule alpha;
  double lambda_slack = 0.0;  // slack inside the dual update
  double proj_slack = 0.0;    // slack of the final projection
  double theta_ball_radius = std::numeric_limits<double>::infinity();

  // Sample-dependent estimates (square-loss lemmas; zero when not computed).
  double rho = 0.0;
  double g_theta_hat = 0.0;
  double g_lambda_hat = 0.0;
  double lambda_star_hat = 0.0;
  double sigma_PQ = 0.0;
  double C_PQ = 0.0;
  double theory_c_eta = 0.0;

  /// Throws invalid_config unless eta, gamma > 0, lambda_slack >= proj_slack > 0, T >= 1.
  void validate() const;
};

/// Knobs for the derivation chain; unset optionals take the defaults below.
struct HyperParamConfig {
  SolverMode mode = SolverMode::square;
  StepsizePolicy policy = StepsizePolicy::stable;
  double c0 = 1.0;
  double tau = 0.05;
  std::optional<double> sigma_y;    // default: estimate_sigma_y on S_Q
  std::optional<std::int64_t> T;    // default: iteration bound clamped to [1e4, 1e7]
  std::optional<double> epsilon_Q;  // default: compute_epsilons
  std::optional<double> epsilon_P;
  std::optional<double> lambda_slack_mult;  // default 6 (square) or 3 (general), times eps_Q
  std::optional<double> proj_slack_mult;    // default 3 (square) or 2 (general), times eps_Q
  std::optional<double> c_eta;              // overrides the policy
  // Stable policy: T at which the step cap is evaluated; c_eta is then held
  // fixed so eta = c_eta / sqrt(T) follows the usual 1/sqrt(T) scaling.
  std::optional<std::int64_t> stable_reference_T;
  double gamma_multiplier = 1.0;
  std::optional<double> lambda_star_hat;    // general mode only (default 1)
  std::int64_t warmup_steps = 0;            // 0: max(1000, 20 n_Q)
  bool ridge_fallback = false;
  double theta_ball_radius = std::numeric_limits<double>::infinity();
};

/// Runs warm-up -> rho -> G_theta -> G_lambda -> lambda* -> stepsizes.
HyperParams derive_hyperparams(const LabeledDataset& S_P, const LabeledDataset& S_Q, const LossModel& loss,
                               const HyperParamConfig& config, std::uint64_t seed);

/// Theorem-style iteration count evaluated at the estimated constants,
/// clamped to [1e4, 1e7].
std::int64_t default_iteration_count(const HyperParams& hp, double lambda_min_plus_Q);

struct RiskSample {
  std::int64_t t = 0;
  double risk_P = 0.0;
  double risk_Q = 0.0;
};

struct TransferSolution {
  Vector theta_hat_PQ;
  Vector theta_Q_final;
  Vector theta_bar;
  std::vector<double> lambda_trace;
  std::int64_t lambda_trace_stride = 1;
  std::vector<RiskSample> risk_trace;
  double lambda_final = 0.0;
  double source_fraction = 0.0;  // share of primal steps drawn from S_P
  double projection_mu = 0.0;
  double constraint_value = 0.0; // R_Q(theta_hat) - R_Q(theta_Q_final) - proj_slack
  double wall_time = 0.0;        // seconds
};

struct SolverOptions {
  int risk_trace_points = 64;
  double projection_tol = 0.0;  // 0: module default for the mode
};

/// Mixed-sample SGD. Each step draws xi ~ Bernoulli(1 / (1 + lambda)), takes a
/// primal step of size eta (1 + lambda) on a sample from S_P (xi = 1) or S_Q,
/// updates lambda with a fresh S_Q sample and advances the target iterate with
/// alpha_t on that same sample. The average iterate is finally projected onto
/// {R_Q(theta) - R_Q(theta_Q_T) <= proj_slack}. General mode additionally
/// projects the primal and target iterates onto the theta ball.
TransferSolution run_mixed_sample_sgd(const LabeledDataset& S_P, const LabeledDataset& S_Q, const LossModel& loss,
                                      const HyperParams& hp, std::uint64_t seed, const SolverOptions& options = {});

/// Saddle point of the limiting program
///   min R_P(theta)  s.t.  R_Q(theta) <= R_Q(theta_hat_Q) + slack_mult * eps_Q
/// for the square loss, with its KKT certificate.
struct CpSolution {
  double lambda_star = 0.0;
  Vector theta;
  double objective = 0.0;           // R_P(theta)
  double reference_risk_Q = 0.0;    // R_Q(theta_hat_Q)
  double slack = 0.0;
  double constraint_residual = 0.0; // R_Q(theta) - reference - slack
  double stationarity = 0.0;        // ||grad R_P + lambda* grad R_Q||
  double complementarity = 0.0;     // |lambda* * constraint_residual|
};

CpSolution solve_cp_exact(const LabeledDataset& S_P, const LabeledDataset& S_Q, double epsilon_Q, double slack_mult);

/// L(theta, lambda) = R_P(theta) + lambda (R_Q(theta) - reference - slack)
double cp_lagrangian(const LabeledDataset& S_P, const LabeledDataset& S_Q, const CpSolution& cp,
                     const VectorRef& theta, double lambda);

}  // namespace mixsgd
