#include "mixsgd/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <string>

#include "mixsgd/errors.hpp"
#include "mixsgd/projection.hpp"
#include "mixsgd/rng.hpp"

namespace mixsgd {

std::string_view to_string(StepsizePolicy policy) {
  return policy == StepsizePolicy::theory ? "theory" : "stable";
}

StepsizePolicy parse_stepsize_policy(std::string_view name) {
  if (name == "theory") return StepsizePolicy::theory;
  if (name == "stable") return StepsizePolicy::stable;
  throw Error(ErrorCode::invalid_config, "unknown stepsize policy '" + std::string(name) + "'");
}

StepSchedule square_loss_schedule(const CovarianceSummary& cov_Q, double max_feature_norm) {
  if (!(cov_Q.lambda_min_plus > 0.0)) {
    throw Error(ErrorCode::rank_deficiency, "target covariance has no eigenvalue above the rank tolerance");
  }
  const double curvature = std::max(cov_Q.lambda_max, max_feature_norm * max_feature_norm);
  return StepSchedule{1.0 / cov_Q.lambda_min_plus, 2.0 * curvature / cov_Q.lambda_min_plus};
}

StepSchedule general_loss_schedule(const LossModel& loss) {
  if (!(loss.m1 > 0.0)) throw Error(ErrorCode::invalid_config, "general-mode schedule needs m1 > 0");
  return StepSchedule{1.0 / loss.m1, 2.0 * loss.m2 / loss.m1};
}

Epsilons compute_epsilons(Index d, Index n_P, Index n_Q, double sigma_y, double c0, double tau) {
  if (d < 1 || n_P < 1 || n_Q < 1) throw Error(ErrorCode::invalid_config, "d and sample sizes must be >= 1");
  if (!(tau > 0.0 && tau < 1.0)) throw Error(ErrorCode::invalid_config, "tau must lie in (0, 1)");
  if (!(sigma_y > 0.0) || !(c0 > 0.0)) throw Error(ErrorCode::invalid_config, "sigma_y and c0 must be positive");
  const double numer = c0 * sigma_y * sigma_y * (static_cast<double>(d) + std::log(1.0 / tau));
  return Epsilons{numer / static_cast<double>(n_P), numer / static_cast<double>(n_Q)};
}

double estimate_sigma_y(const LabeledDataset& S_Q) {
  const auto cov = empirical_covariance(S_Q.X());
  const Index dof = S_Q.size() - cov.rank();
  if (dof >= std::max<Index>(5, S_Q.size() / 10)) {
    const Vector theta = min_norm_erm(S_Q.X(), S_Q.y());
    return std::sqrt((S_Q.X() * theta - S_Q.y()).squaredNorm() / static_cast<double>(dof));
  }
  // Too few residual degrees of freedom: fall back to the label spread, an
  // upper bound on the noise level.
  const double mean = S_Q.y().mean();
  return std::sqrt((S_Q.y().array() - mean).square().sum() / static_cast<double>(std::max<Index>(1, S_Q.size() - 1)));
}

// ---------------------------------------------------------------------------
// Warm-up

Vector warmup(const LabeledDataset& S_Q, const LossModel& loss, const StepSchedule& schedule, std::int64_t N,
              std::uint64_t seed, double ball_radius) {
  if (N < 1) throw Error(ErrorCode::invalid_config, "warm-up needs N >= 1");
  check_labels(loss, S_Q);
  Rng rng(seed);
  const auto n = static_cast<std::uint64_t>(S_Q.size());
  Vector theta = Vector::Zero(S_Q.dim());
  const bool bounded = std::isfinite(ball_radius);
  for (std::int64_t t = 0; t < N; ++t) {
    const auto i = static_cast<Index>(rng.uniform_index(n));
    const auto x = S_Q.X().row(i).transpose();
    const double score = theta.dot(x);
    if (!std::isfinite(score)) {
      throw Error(ErrorCode::divergence, "warm-up diverged at step " + std::to_string(t));
    }
    theta.noalias() -= (schedule.at(t) * loss.derivative_from_score(score, S_Q.y()(i))) * x;
    if (bounded) theta = project_l2_ball(theta, ball_radius);
  }
  return theta;
}

Vector warmup(const LabeledDataset& S_Q, const LossModel& loss, std::int64_t N, std::uint64_t seed) {
  const auto cov_Q = empirical_covariance(S_Q.X());
  return warmup(S_Q, loss, square_loss_schedule(cov_Q, S_Q.max_feature_norm()), N, seed);
}

// ---------------------------------------------------------------------------
// Sample-dependent constants

namespace {

Vector square_risk_grad(const CovarianceSummary& cov, const LabeledDataset& data, const Vector& theta) {
  return 2.0 * (cov.sigma_hat * theta - data.X().transpose() * data.y() / static_cast<double>(data.size()));
}

double joint_max_feature_norm(const LabeledDataset& a, const LabeledDataset& b) {
  return std::max(a.max_feature_norm(), b.max_feature_norm());
}

double joint_max_abs_label(const LabeledDataset& a, const LabeledDataset& b) {
  return std::max(a.max_abs_label(), b.max_abs_label());
}

}  // namespace

double estimate_rho(const LabeledDataset& S_P, const LabeledDataset& S_Q, const Vector& theta_Q_N,
                    bool ridge_fallback) {
  const auto cov_P = empirical_covariance(S_P.X());
  const auto cov_Q = empirical_covariance(S_Q.X());
  double lmin_P = cov_P.lambda_min();
  if (!cov_P.full_rank()) {
    if (!ridge_fallback) {
      throw Error(ErrorCode::rank_deficiency,
                  "source covariance is singular; enable the ridge fallback to regularize it");
    }
    lmin_P = std::max(lmin_P, 0.0) + 1e-8 * cov_P.lambda_max;
  }
  if (!(cov_Q.lambda_min_plus > 0.0)) throw Error(ErrorCode::rank_deficiency, "target covariance is zero");
  const double M_x = joint_max_feature_norm(S_P, S_Q);
  const double M_y = joint_max_abs_label(S_P, S_Q);
  const double grad_P = square_risk_grad(cov_P, S_P, theta_Q_N).squaredNorm();
  const double grad_Q = square_risk_grad(cov_Q, S_Q, theta_Q_N).squaredNorm();
  const double ratio = cov_P.lambda_max / cov_Q.lambda_min_plus;
  const double inner = (grad_P + ratio * ratio * grad_Q) / (lmin_P * lmin_P);
  const double rho_sq = 0.5 * inner * inner + 2.0 * M_x * M_x * M_y * M_y / (lmin_P * lmin_P);
  return std::sqrt(rho_sq);
}

double estimate_g_theta(double rho, double M_x, double M_y_hat) { return 3.0 * M_x * M_x * rho + M_x * M_y_hat; }

double estimate_g_lambda(double rho, double M_x, double M_y_hat, double T, double kappa_Q,
                         double lambda_min_plus_Q, double epsilon_Q) {
  const double log_term = 1.0 + std::log(T + 2.0 * kappa_Q);
  const double mx2 = M_x * M_x;
  const double tail = mx2 * mx2 * M_y_hat * M_y_hat * log_term * log_term / (lambda_min_plus_Q * lambda_min_plus_Q);
  return 18.0 * (mx2 * rho * rho + M_y_hat + tail) + 6.0 * epsilon_Q;
}

double estimate_lambda_star(const CovarianceSummary& cov_P, const CovarianceSummary& cov_Q,
                            double grad_P_at_theta_Q_norm, double epsilon_Q) {
  if (!(epsilon_Q > 0.0)) throw Error(ErrorCode::invalid_config, "epsilon_Q must be positive");
  if (!(cov_Q.lambda_min_plus > 0.0)) throw Error(ErrorCode::rank_deficiency, "target covariance is zero");
  return cov_P.lambda_max / cov_Q.lambda_min_plus +
         grad_P_at_theta_Q_norm / (2.0 * std::sqrt(cov_Q.lambda_min_plus * epsilon_Q));
}

Stepsizes stepsizes_from_constants(double rho, double g_theta_hat, double g_lambda_hat, double lambda_star_hat,
                                   double sigma_PQ, double C_PQ, double tau, double T) {
  if (!(T >= 1.0)) throw Error(ErrorCode::invalid_config, "T must be >= 1");
  Stepsizes s;
  s.sigma_PQ = sigma_PQ;
  s.C_PQ = C_PQ;
  const double sqrt2 = std::numbers::sqrt2;
  s.candidates = {
      rho / (2.0 * sqrt2 * g_lambda_hat),
      rho / (2.0 * (1.0 + sqrt2 * rho + lambda_star_hat) * g_theta_hat),
      rho / (16.0 * std::sqrt(6.0) * sigma_PQ * std::sqrt(std::log(2.0 / tau))),
      rho / (4.0 * C_PQ),
  };
  s.c_eta = *std::min_element(s.candidates.begin(), s.candidates.end());
  s.eta = s.c_eta / std::sqrt(T);
  s.gamma = g_theta_hat * g_theta_hat * s.c_eta / std::sqrt(T);
  return s;
}

Stepsizes derive_stepsizes(double rho, double g_theta_hat, double g_lambda_hat, double lambda_star_hat, double M_x,
                           double M_y_hat, double kappa_Q, double lambda_min_plus_Q, double tau, double T) {
  const double sigma_PQ =
      std::sqrt(256.0 * (1.0 + lambda_star_hat * lambda_star_hat + rho * rho)) * g_theta_hat;
  const double sigma_Q = std::log(T + 2.0 * kappa_Q) / lambda_min_plus_Q * M_x * M_y_hat;
  const double C_PQ = (1.0 + 2.0 * kappa_Q) * M_x * M_x * M_y_hat * M_y_hat +
                      6.0 * sigma_Q * sigma_Q * std::log(2.0 / tau) / lambda_min_plus_Q;
  return stepsizes_from_constants(rho, g_theta_hat, g_lambda_hat, lambda_star_hat, sigma_PQ, C_PQ, tau, T);
}

void HyperParams::validate() const {
  if (T < 1) throw Error(ErrorCode::invalid_config, "T must be >= 1");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw Error(ErrorCode::invalid_config, "eta must be positive and finite");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw Error(ErrorCode::invalid_config, "gamma must be positive and finite");
  if (!(proj_slack > 0.0)) throw Error(ErrorCode::invalid_config, "projection slack must be positive");
  if (!(lambda_slack >= proj_slack)) throw Error(ErrorCode::invalid_config, "lambda slack must be >= projection slack");
  if (!(alpha.scale > 0.0 && alpha.offset > 0.0)) throw Error(ErrorCode::invalid_config, "invalid alpha schedule");
}

std::int64_t default_iteration_count(const HyperParams& hp, double lambda_min_plus_Q) {
  constexpr double kMin = 1e4;
  constexpr double kMax = 1e7;
  const double c = hp.theory_c_eta;
  const double sl = std::sqrt(std::log(1.0 / hp.tau));
  const double gt = hp.g_theta_hat;
  const double gl = hp.g_lambda_hat;
  const double lead = (gt + gl * sl) * (gt + gl * sl);
  const double first = (gt * gt / c + gt * gl * sl) / (lambda_min_plus_Q * hp.epsilon_Q * hp.epsilon_P);
  const double second = (hp.lambda_star_hat * gl * sl + hp.rho * hp.rho / c) / hp.epsilon_P;
  const double bound = lead * (first + second) * (first + second);
  if (!std::isfinite(bound) || bound > kMax) return static_cast<std::int64_t>(kMax);
  return static_cast<std::int64_t>(std::max(kMin, std::ceil(bound)));
}

HyperParams derive_hyperparams(const LabeledDataset& S_P, const LabeledDataset& S_Q, const LossModel& loss,
                               const HyperParamConfig& config, std::uint64_t seed) {
  if (S_P.dim() != S_Q.dim()) throw Error(ErrorCode::invalid_data, "source and target dimensions differ");
  if (config.mode == SolverMode::square && loss.kind != LossKind::square) {
    throw Error(ErrorCode::invalid_config, "square mode requires the square loss");
  }
  check_labels(loss, S_P);
  check_labels(loss, S_Q);

  HyperParams hp;
  hp.mode = config.mode;
  hp.policy = config.policy;
  hp.tau = config.tau;
  hp.c0 = config.c0;
  hp.theta_ball_radius = config.theta_ball_radius;
  if (config.sigma_y) {
    hp.sigma_y = *config.sigma_y;
  } else {
    // Labels of classification losses are +-1, so their scale is 1.
    hp.sigma_y = loss.is_classification() ? 1.0 : estimate_sigma_y(S_Q);
  }
  if (!(hp.sigma_y > 0.0)) hp.sigma_y = 1e-6;

  const auto eps = compute_epsilons(S_P.dim(), S_P.size(), S_Q.size(), hp.sigma_y, hp.c0, hp.tau);
  hp.epsilon_Q = config.epsilon_Q.value_or(eps.Q);
  hp.epsilon_P = config.epsilon_P.value_or(eps.P);

  const bool square = config.mode == SolverMode::square;
  hp.lambda_slack = config.lambda_slack_mult.value_or(square ? 6.0 : 3.0) * hp.epsilon_Q;
  hp.proj_slack = config.proj_slack_mult.value_or(square ? 3.0 : 2.0) * hp.epsilon_Q;

  const double M_x = joint_max_feature_norm(S_P, S_Q);
  const double M_y = joint_max_abs_label(S_P, S_Q);
  const std::int64_t warmup_steps =
      config.warmup_steps > 0 ? config.warmup_steps : std::max<std::int64_t>(1000, 20 * S_Q.size());

  if (square) {
    const auto cov_P = empirical_covariance(S_P.X());
    const auto cov_Q = empirical_covariance(S_Q.X());
    hp.alpha = square_loss_schedule(cov_Q, S_Q.max_feature_norm());
    const Vector theta_Q_N = warmup(S_Q, loss, hp.alpha, warmup_steps, Rng::derive_seed(seed, 12));
    hp.rho = estimate_rho(S_P, S_Q, theta_Q_N, config.ridge_fallback);
    hp.g_theta_hat = estimate_g_theta(hp.rho, M_x, M_y);
    const double grad_P_norm = square_risk_grad(cov_P, S_P, theta_Q_N).norm();
    hp.lambda_star_hat = estimate_lambda_star(cov_P, cov_Q, grad_P_norm, hp.epsilon_Q);

    // The log(T) terms couple T and the constants; a few fixed-point rounds settle it.
    double T = config.T ? static_cast<double>(*config.T) : 1e4;
    const int rounds = config.T ? 1 : 3;
    for (int r = 0; r < rounds; ++r) {
      hp.g_lambda_hat = estimate_g_lambda(hp.rho, M_x, M_y, T, cov_Q.kappa, cov_Q.lambda_min_plus, hp.epsilon_Q);
      const auto steps = derive_stepsizes(hp.rho, hp.g_theta_hat, hp.g_lambda_hat, hp.lambda_star_hat, M_x, M_y,
                                          cov_Q.kappa, cov_Q.lambda_min_plus, hp.tau, T);
      hp.theory_c_eta = steps.c_eta;
      hp.sigma_PQ = steps.sigma_PQ;
      hp.C_PQ = steps.C_PQ;
      if (!config.T) {
        hp.T = default_iteration_count(hp, cov_Q.lambda_min_plus);
        T = static_cast<double>(hp.T);
      }
    }
    hp.T = static_cast<std::int64_t>(T);
  } else {
    hp.alpha = general_loss_schedule(loss);
    hp.lambda_star_hat = config.lambda_star_hat.value_or(1.0);
    hp.T = config.T.value_or(100000);
    if (config.policy == StepsizePolicy::theory && !config.c_eta) {
      throw Error(ErrorCode::invalid_config, "the theory stepsize policy is only available for the square loss");
    }
  }

  const double sqrtT = std::sqrt(static_cast<double>(hp.T));
  if (config.c_eta) {
    hp.c_eta = *config.c_eta;
  } else if (config.policy == StepsizePolicy::theory) {
    hp.c_eta = hp.theory_c_eta;
  } else {
    const double reference_T = static_cast<double>(config.stable_reference_T.value_or(hp.T));
    if (!(reference_T >= 1.0)) throw Error(ErrorCode::invalid_config, "stable_reference_T must be >= 1");
    hp.c_eta = std::sqrt(reference_T) / (loss.m2 * (1.0 + hp.lambda_star_hat));
  }
  hp.eta = hp.c_eta / sqrtT;
  if (config.policy == StepsizePolicy::theory) {
    hp.gamma = config.gamma_multiplier * hp.g_theta_hat * hp.g_theta_hat * hp.c_eta / sqrtT;
  } else {
    hp.gamma = config.gamma_multiplier / (8.0 * hp.eta * static_cast<double>(hp.T));
  }
  hp.validate();
  return hp;
}

// ---------------------------------------------------------------------------
// Mixed-sample SGD

TransferSolution run_mixed_sample_sgd(const LabeledDataset& S_P, const LabeledDataset& S_Q, const LossModel& loss,
                                      const HyperParams& hp, std::uint64_t seed, const SolverOptions& options) {
  hp.validate();
  if (S_P.dim() != S_Q.dim()) throw Error(ErrorCode::invalid_data, "source and target dimensions differ");
  if (hp.mode == SolverMode::square && loss.kind != LossKind::square) {
    throw Error(ErrorCode::invalid_config, "square mode requires the square loss");
  }
  check_labels(loss, S_P);
  check_labels(loss, S_Q);
  const bool bounded = hp.mode == SolverMode::general && std::isfinite(hp.theta_ball_radius);

  const auto start = std::chrono::steady_clock::now();
  const Index d = S_P.dim();
  const auto n_P = static_cast<std::uint64_t>(S_P.size());
  const auto n_Q = static_cast<std::uint64_t>(S_Q.size());
  const RowMatrix& X_P = S_P.X();
  const RowMatrix& X_Q = S_Q.X();

  Rng rng(seed);
  Vector theta = Vector::Zero(d);
  Vector theta_Q = Vector::Zero(d);
  Vector theta_sum = Vector::Zero(d);
  double lambda = 0.0;
  const double decay = 1.0 - hp.gamma * hp.eta;

  TransferSolution sol;
  sol.lambda_trace_stride = std::max<std::int64_t>(1, hp.T / 10000);
  sol.lambda_trace.reserve(static_cast<std::size_t>(hp.T / sol.lambda_trace_stride + 1));
  const std::int64_t risk_stride =
      options.risk_trace_points > 0 ? std::max<std::int64_t>(1, hp.T / options.risk_trace_points) : 0;
  std::int64_t source_steps = 0;

  for (std::int64_t t = 0; t < hp.T; ++t) {
    if (t % sol.lambda_trace_stride == 0) sol.lambda_trace.push_back(lambda);
    if (risk_stride > 0 && t % risk_stride == 0) {
      sol.risk_trace.push_back({t, empirical_risk(loss, S_P, theta), empirical_risk(loss, S_Q, theta)});
    }
    theta_sum += theta;

    // (i) primal step on a source or target sample.
    const bool from_source = rng.bernoulli(1.0 / (1.0 + lambda));
    const RowMatrix& X_step = from_source ? X_P : X_Q;
    const Vector& y_step = from_source ? S_P.y() : S_Q.y();
    const auto i = static_cast<Index>(rng.uniform_index(from_source ? n_P : n_Q));
    source_steps += from_source ? 1 : 0;
    const auto x = X_step.row(i).transpose();
    const double score = theta.dot(x);

    // (ii) dual step on a fresh target sample, evaluated at theta_t and theta_Q,t.
    const auto j = static_cast<Index>(rng.uniform_index(n_Q));
    const auto xq = X_Q.row(j).transpose();
    const double yq = S_Q.y()(j);
    const double score_t = theta.dot(xq);
    const double score_Q = theta_Q.dot(xq);
    if (!std::isfinite(score) || !std::isfinite(score_t) || !std::isfinite(score_Q) || !std::isfinite(lambda)) {
      throw Error(ErrorCode::divergence, "iterates became non-finite at step " + std::to_string(t) +
                                             " (|theta| = " + std::to_string(theta.norm()) +
                                             ", |theta_Q| = " + std::to_string(theta_Q.norm()) +
                                             ", lambda = " + std::to_string(lambda) + ")");
    }
    const double bracket = loss.value_from_score(score_t, yq) - loss.value_from_score(score_Q, yq) - hp.lambda_slack;

    theta.noalias() -= (hp.eta * (1.0 + lambda) * loss.derivative_from_score(score, y_step(i))) * x;
    lambda = std::max(0.0, decay * lambda + hp.eta * bracket);
    // (iii) target iterate on the same fresh sample.
    theta_Q.noalias() -= (hp.alpha.at(t) * loss.derivative_from_score(score_Q, yq)) * xq;
    if (bounded) {
      theta = project_l2_ball(theta, hp.theta_ball_radius);
      theta_Q = project_l2_ball(theta_Q, hp.theta_ball_radius);
    }
  }

  sol.theta_bar = theta_sum / static_cast<double>(hp.T);
  sol.theta_Q_final = theta_Q;
  sol.lambda_final = lambda;
  sol.source_fraction = static_cast<double>(source_steps) / static_cast<double>(hp.T);
  if (!sol.theta_bar.allFinite() || !theta_Q.allFinite()) {
    throw Error(ErrorCode::divergence, "iterates became non-finite by step " + std::to_string(hp.T));
  }

  const double reference = empirical_risk(loss, S_Q, theta_Q);
  ProjectionResult proj;
  if (hp.mode == SolverMode::square) {
    QuadraticProjector projector(square_risk_constraint(S_Q, reference, hp.proj_slack));
    proj = projector.project(sol.theta_bar, options.projection_tol > 0.0 ? options.projection_tol
                                                                         : kQuadraticProjectionTol);
  } else {
    GeneralProjectionOptions opt;
    if (options.projection_tol > 0.0) opt.tol = options.projection_tol;
    proj = project_general_convex(sol.theta_bar, risk_constraint(loss, S_Q, reference, hp.proj_slack), opt);
  }
  sol.theta_hat_PQ = std::move(proj.theta);
  sol.projection_mu = proj.mu;
  sol.constraint_value = empirical_risk(loss, S_Q, sol.theta_hat_PQ) - reference - hp.proj_slack;
  sol.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return sol;
}

// ---------------------------------------------------------------------------
// Exact limiting program

namespace {

struct QuadraticRisk {
  Matrix sigma;
  Vector b;
  double y2 = 0.0;  // ||y||^2 / n
  CovarianceSummary cov;

  explicit QuadraticRisk(const LabeledDataset& data) : cov(empirical_covariance(data.X())) {
    const double n = static_cast<double>(data.size());
    sigma = cov.sigma_hat;
    b = data.X().transpose() * data.y() / n;
    y2 = data.y().squaredNorm() / n;
  }
  double value(const Vector& theta) const { return theta.dot(sigma * theta) - 2.0 * b.dot(theta) + y2; }
  Vector gradient(const Vector& theta) const { return 2.0 * (sigma * theta - b); }
};

// theta(lambda) = argmin R_P + lambda R_Q (minimum norm when the pencil is singular).
class Pencil {
 public:
  Pencil(const QuadraticRisk& P, const QuadraticRisk& Q) : P_(P), Q_(Q) {
    if (P.cov.full_rank()) {
      // Simultaneous diagonalization: W^T Sigma_P W = I, W^T Sigma_Q W = Gamma.
      const Eigen::LLT<Matrix> llt(P.sigma);
      const Matrix L = llt.matrixL();
      const Matrix Linv = L.triangularView<Eigen::Lower>().solve(Matrix::Identity(L.rows(), L.cols()));
      auto eig = symmetric_eigen(Linv * Q.sigma * Linv.transpose());
      W_ = Linv.transpose() * eig.vectors;
      gamma_ = eig.values.cwiseMax(0.0);
      p_ = W_.transpose() * P.b;
      q_ = W_.transpose() * Q.b;
      diagonal_ = true;
    }
  }

  Vector theta(double lambda) const {
    if (diagonal_) {
      Vector coords = (p_ + lambda * q_).cwiseQuotient((1.0 + lambda * gamma_.array()).matrix());
      return W_ * coords;
    }
    const auto cov = summarize_psd(P_.sigma + lambda * Q_.sigma);
    return pseudo_solve(cov, P_.b + lambda * Q_.b);
  }

  // d/dlambda of R_Q(theta(lambda)); only available on the diagonal path.
  std::optional<double> constraint_slope(double lambda) const {
    if (!diagonal_) return std::nullopt;
    double s = 0.0;
    for (Index i = 0; i < gamma_.size(); ++i) {
      const double r = gamma_(i) * p_(i) - q_(i);
      const double denom = 1.0 + lambda * gamma_(i);
      s += r * r / (denom * denom * denom);
    }
    return -2.0 * s;
  }

 private:
  const QuadraticRisk& P_;
  const QuadraticRisk& Q_;
  bool diagonal_ = false;
  Matrix W_;
  Vector gamma_, p_, q_;
};

}  // namespace

CpSolution solve_cp_exact(const LabeledDataset& S_P, const LabeledDataset& S_Q, double epsilon_Q, double slack_mult) {
  if (S_P.dim() != S_Q.dim()) throw Error(ErrorCode::invalid_data, "source and target dimensions differ");
  if (!(epsilon_Q >= 0.0) || !(slack_mult >= 0.0)) throw Error(ErrorCode::invalid_config, "negative slack");
  const QuadraticRisk P(S_P);
  const QuadraticRisk Q(S_Q);

  CpSolution cp;
  cp.slack = slack_mult * epsilon_Q;
  cp.reference_risk_Q = Q.value(pseudo_solve(Q.cov, Q.b));
  const auto residual = [&](const Vector& theta) { return Q.value(theta) - cp.reference_risk_Q - cp.slack; };

  const auto finish = [&](double lambda, Vector theta) {
    cp.lambda_star = lambda;
    cp.theta = std::move(theta);
    cp.objective = P.value(cp.theta);
    cp.constraint_residual = residual(cp.theta);
    cp.stationarity = (P.gradient(cp.theta) + lambda * Q.gradient(cp.theta)).norm();
    cp.complementarity = std::abs(lambda * cp.constraint_residual);
    return cp;
  };

  Vector theta_P = pseudo_solve(P.cov, P.b);
  if (residual(theta_P) <= 0.0) return finish(0.0, std::move(theta_P));

  const Pencil pencil(P, Q);
  double lo = 0.0;
  double hi = 1.0;
  while (residual(pencil.theta(hi)) > 0.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e14) throw Error(ErrorCode::degenerate_instance, "no multiplier makes the target constraint feasible");
  }

  // residual(theta(lambda)) is convex and decreasing on the diagonal path, so
  // Newton from the left is monotone; otherwise bisect to machine precision.
  const double scale = std::max(1.0, Q.y2);
  double lambda = lo;
  double r = residual(pencil.theta(lambda));
  for (int k = 0; k < 400; ++k) {
    if (std::abs(r) * std::max(1.0, lambda) <= 1e-12 * scale) break;
    if (r > 0.0) {
      lo = lambda;
    } else {
      hi = lambda;
    }
    double next = 0.5 * (lo + hi);
    if (const auto slope = pencil.constraint_slope(lambda); slope && *slope < 0.0) {
      const double newton = lambda - r / *slope;
      if (newton > lo && newton < hi) next = newton;
    }
    if (std::abs(next - lambda) <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, lambda)) break;
    lambda = next;
    r = residual(pencil.theta(lambda));
  }
  if (std::abs(r) > 1e-10 * scale) {
    throw Error(ErrorCode::degenerate_instance,
                "constraint residual " + std::to_string(r) + " did not reach tolerance; pencil is degenerate");
  }
  return finish(lambda, pencil.theta(lambda));
}

double cp_lagrangian(const LabeledDataset& S_P, const LabeledDataset& S_Q, const CpSolution& cp,
                     const VectorRef& theta, double lambda) {
  const LossModel sq{LossKind::square, 0.0, 1.0, 0.5};
  return empirical_risk(sq, S_P, theta) +
         lambda * (empirical_risk(sq, S_Q, theta) - cp.reference_risk_Q - cp.slack);
}

}  // namespace mixsgd
