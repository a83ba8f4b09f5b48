#include "mixsgd/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "mixsgd/baselines.hpp"
#include "mixsgd/errors.hpp"
#include "mixsgd/eval.hpp"
#include "mixsgd/experiment.hpp"
#include "mixsgd/projection.hpp"
#include "mixsgd/rng.hpp"
#include "mixsgd/solver.hpp"
#include "mixsgd/spectral.hpp"

namespace mixsgd::acceptance {

namespace {

std::string fmt(double v, int digits = 4) {
  std::ostringstream o;
  o.precision(digits);
  o << v;
  return o.str();
}

// Shared state: every returned theta_hat_PQ feeds criterion 4, and every
// timing-free experiment is replayed by criterion 10.
struct Ledger {
  std::size_t solutions = 0;
  std::size_t violations = 0;
  double worst = -INFINITY;
  struct Run {
    std::string name;
    ExperimentConfig config;
    std::string csv;
  };
  std::vector<Run> runs;

  void record(double constraint_value) {
    ++solutions;
    worst = std::max(worst, constraint_value);
    if (constraint_value > 1e-8) ++violations;
  }
};

struct Context {
  const SuiteOptions& options;
  Ledger ledger;

  void log(const std::string& line) const {
    if (options.log) *options.log << "  " << line << '\n' << std::flush;
  }
};

// mean over seeds of `metric`, keyed by (sweep value, method)
using Means = std::map<double, std::map<std::string, TrialSummary>>;

Means metric_means(const std::vector<ResultRow>& rows, const std::string& metric) {
  std::map<double, std::map<std::string, std::vector<double>>> raw;
  for (const auto& r : rows) {
    if (r.metric == metric) raw[r.sweep_value][r.method].push_back(r.value);
  }
  Means out;
  for (const auto& [x, by_method] : raw) {
    for (const auto& [m, values] : by_method) out[x][m] = aggregate_trials(values);
  }
  return out;
}

ExperimentResults run_config(Context& ctx, const std::string& file, const std::function<void(ExperimentConfig&)>& edit = {}) {
  auto cfg = load_experiment_config(ctx.options.config_dir / file);
  if (edit) edit(cfg);
  auto results = run_experiment(cfg, ctx.options.jobs);
  for (const auto& f : results.failures) {
    ctx.log("cell failed: " + file + " value=" + fmt(f.sweep_value) + " seed=" + std::to_string(f.seed) + " method=" +
            f.method + ": " + f.message);
  }
  for (const auto& r : results.rows) {
    if (r.method == "mixed" && r.metric == "constraint_value") ctx.ledger.record(r.value);
  }
  ctx.ledger.runs.push_back({file, cfg, results_csv_text(results.rows)});
  return results;
}

std::size_t failures_of(const ExperimentResults& res, const std::string& method) {
  return static_cast<std::size_t>(
      std::count_if(res.failures.begin(), res.failures.end(), [&](const CellFailure& f) { return f.method == method; }));
}

// ---------------------------------------------------------------------------
// 1. adaptivity

bool adaptivity_holds(Context& ctx, const ExperimentResults& res, std::string& detail) {
  bool ok = res.ok();
  const auto means = metric_means(res.rows, "excess_risk_q");
  for (const auto& [x, m] : means) {
    if (!m.count("mixed") || !m.count("source_erm") || !m.count("target_erm")) {
      ok = false;
      continue;
    }
    const double best = std::min(m.at("source_erm").mean, m.at("target_erm").mean);
    const double bound = 1.5 * best + 0.02;
    const double mixed = m.at("mixed").mean;
    const bool point_ok = mixed <= bound;
    ok = ok && point_ok;
    ctx.log(res.rows.front().sweep_var + "=" + fmt(x) + ": mixed " + fmt(mixed) + " source " +
            fmt(m.at("source_erm").mean) + " target " + fmt(m.at("target_erm").mean) + " bound " + fmt(bound) +
            (point_ok ? "" : "  <-- violated"));
    detail += " " + fmt(x) + ":" + fmt(mixed, 3) + "<=" + fmt(bound, 3) + (point_ok ? "" : "!");
  }
  return ok;
}

CriterionResult criterion_adaptivity(Context& ctx) {
  CriterionResult r{1, "adaptivity across n_P and optimum shift", true, false, "", 0};
  std::string da, db;
  const auto a = run_config(ctx, "fig1_left.toml");
  const bool ok_a = adaptivity_holds(ctx, a, da);
  const auto b = run_config(ctx, "fig1_right.toml");
  const bool ok_b = adaptivity_holds(ctx, b, db);
  r.passed = ok_a && ok_b;
  r.detail = "(a) n_P" + da + "; (b) gap" + db;
  return r;
}

// ---------------------------------------------------------------------------
// 2. low-rank target covariance

CriterionResult criterion_low_rank(Context& ctx) {
  CriterionResult r{2, "low-rank target covariance, unbounded constraint set", true, false, "", 0};
  const auto res = run_config(ctx, "fig2_low_rank.toml");
  const auto means = metric_means(res.rows, "excess_risk_q");
  const std::size_t failed = failures_of(res, "mixed");
  bool ok = failed == 0 && res.ok();
  std::string detail;
  for (const auto& [x, m] : means) {
    double best = INFINITY;
    for (const auto& [method, t] : m) {
      if (method != "mixed") best = std::min(best, t.mean);
    }
    const double bound = 2.0 * best + 0.05;
    const std::size_t completed = m.count("mixed") ? m.at("mixed").count : 0;
    const double mixed = m.count("mixed") ? m.at("mixed").mean : INFINITY;
    const bool point_ok = mixed <= bound && completed == ctx.ledger.runs.back().config.seeds.size();
    ok = ok && point_ok;
    ctx.log("n_P=" + fmt(x) + ": mixed " + fmt(mixed) + " on " + std::to_string(completed) + " seeds, best baseline " +
            fmt(best) + " bound " + fmt(bound));
    detail += " " + fmt(x) + ":" + fmt(mixed, 3) + "<=" + fmt(bound, 3) + "(" + std::to_string(completed) + " seeds)";
  }
  r.passed = ok;
  r.detail = "mixed failures " + std::to_string(failed) + ";" + detail;
  return r;
}

// ---------------------------------------------------------------------------
// 3. convergence rate against the exact program

CriterionResult criterion_rate(Context& ctx) {
  CriterionResult r{3, "1/sqrt(T) convergence of R_P to the exact constrained optimum", true, false, "", 0};
  const std::vector<std::int64_t> Ts{1000, 4000, 16000, 64000};
  const std::vector<std::uint64_t> seeds{500, 501, 502, 503, 504};
  std::vector<double> mean_gap(Ts.size(), 0.0);
  std::vector<double> xs, ys;
  bool positive = true;
  for (const auto seed : seeds) {
    SyntheticRegressionSpec spec;
    spec.n_P = 500;
    spec.n_Q = 100;
    spec.seed = seed;
    const auto inst = gen_synthetic_regression(spec);
    const double M_x = std::max(inst.source.max_feature_norm(), inst.target.max_feature_norm());
    const auto loss = LossModel::square(M_x, empirical_covariance(inst.target.X()).lambda_min_plus);
    HyperParamConfig cfg;
    cfg.sigma_y = 1.0;
    cfg.c0 = 0.5;
    cfg.stable_reference_T = Ts.front();
    std::string line = "seed " + std::to_string(seed) + " gaps:";
    for (std::size_t k = 0; k < Ts.size(); ++k) {
      cfg.T = Ts[k];
      const auto hp = derive_hyperparams(inst.source, inst.target, loss, cfg, Rng::derive_seed(seed, 21));
      const auto sol = run_mixed_sample_sgd(inst.source, inst.target, loss, hp, Rng::derive_seed(seed, 22));
      ctx.ledger.record(sol.constraint_value);
      const auto cp = solve_cp_exact(inst.source, inst.target, hp.epsilon_Q, 6.0);
      const double gap = empirical_risk(loss, inst.source, sol.theta_hat_PQ) - cp.objective;
      positive = positive && gap > 0.0;
      mean_gap[k] += gap / static_cast<double>(seeds.size());
      xs.push_back(std::log(static_cast<double>(Ts[k])));
      ys.push_back(std::log(std::max(gap, 1e-300)));
      line += " " + fmt(gap);
    }
    ctx.log(line);
  }
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  const double slope = sxy / sxx;
  const double ratio = mean_gap.back() / mean_gap.front();
  r.passed = positive && slope >= -0.9 && slope <= -0.25 && ratio <= 0.25;
  r.detail = "slope " + fmt(slope, 3) + " in [-0.9, -0.25], gap(64000)/gap(1000) = " + fmt(ratio, 3) + " <= 0.25";
  return r;
}

// ---------------------------------------------------------------------------
// 4. constraint satisfaction, aggregated

CriterionResult criterion_feasibility(Context& ctx) {
  CriterionResult r{4, "every returned solution satisfies the projection constraint", true, false, "", 0};
  r.passed = ctx.ledger.solutions > 0 && ctx.ledger.violations == 0;
  r.detail = std::to_string(ctx.ledger.violations) + " violations over " + std::to_string(ctx.ledger.solutions) +
             " solutions; worst constraint value " + fmt(ctx.ledger.worst, 3);
  return r;
}

// ---------------------------------------------------------------------------
// 5. projection correctness

Matrix random_psd(Rng& rng, Index d, Index rank) {
  Matrix B(d, rank);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < rank; ++j) B(i, j) = rng.normal();
  return B * B.transpose() / static_cast<double>(rank);
}

Vector random_vector(Rng& rng, Index d) {
  Vector v(d);
  for (Index i = 0; i < d; ++i) v(i) = rng.normal();
  return v;
}

CriterionResult criterion_projection(Context&) {
  CriterionResult r{5, "ellipsoid projection agrees with the general projector and is KKT", true, false, "", 0};
  const auto start = std::chrono::steady_clock::now();
  Rng rng(20250505);
  double worst_gap = 0.0, worst_kkt = 0.0;
  int deficient = 0, active = 0;
  for (int i = 0; i < 1000; ++i) {
    const Index d = 1 + i % 20;
    const Index rank = (i % 3 == 0 && d > 1) ? 1 + static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(d - 1))) : d;
    deficient += rank < d;
    QuadraticConstraint con;
    con.A = random_psd(rng, d, rank);
    const Vector center = random_vector(rng, d);
    con.b = con.A * center;
    const double radius_sq = 0.1 + 2.0 * rng.uniform01();
    con.c = center.dot(con.A * center) - radius_sq;
    const Vector theta_bar = center + 2.0 * random_vector(rng, d);

    const auto quad = project_quadratic_sublevel(theta_bar, con);
    ConvexConstraint general;
    general.value = [&](const Vector& t) { return con.value(t); };
    general.gradient = [&](const Vector& t) { return con.gradient(t); };
    general.smoothness = 2.0 * std::max(1e-12, symmetric_eigen(con.A).values(0));
    GeneralProjectionOptions opt;
    opt.tol = 1e-11;
    const auto gen = project_general_convex(theta_bar, general, opt);

    active += quad.mu > 0.0;
    worst_gap = std::max(worst_gap, (quad.theta - gen.theta).norm());
    worst_kkt = std::max({worst_kkt, quad.stationarity, quad.complementarity, std::max(0.0, quad.constraint_value)});
  }
  // Sphere: A = I, b = 0, c = -R^2 has the closed form R * theta_bar / |theta_bar|.
  double sphere_err = 0.0;
  for (Index d = 1; d <= 20; ++d) {
    QuadraticConstraint con{Matrix::Identity(d, d), Vector::Zero(d), -4.0};
    const Vector theta_bar = 6.0 * random_vector(rng, d).normalized();
    const auto p = project_quadratic_sublevel(theta_bar, con);
    sphere_err = std::max(sphere_err, (p.theta - 2.0 * theta_bar.normalized()).norm());
  }
  // Interior points come back untouched.
  bool interior_exact = true;
  for (Index d = 1; d <= 20; ++d) {
    QuadraticConstraint con{Matrix::Identity(d, d), Vector::Zero(d), -4.0};
    const Vector theta_bar = random_vector(rng, d).normalized();
    interior_exact = interior_exact && (project_quadratic_sublevel(theta_bar, con).theta.array() == theta_bar.array()).all();
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.passed = worst_gap <= 1e-5 && worst_kkt <= 1e-8 && sphere_err <= 1e-12 && interior_exact && seconds <= 30.0;
  r.detail = "1000 instances (" + std::to_string(deficient) + " rank-deficient, " + std::to_string(active) +
             " active): max |quad - general| " + fmt(worst_gap, 3) + ", max KKT residual " + fmt(worst_kkt, 3) +
             ", sphere error " + fmt(sphere_err, 3) + ", interior exact " + (interior_exact ? "yes" : "no") + ", " +
             fmt(seconds, 3) + " s";
  return r;
}

// ---------------------------------------------------------------------------
// 6. exact constrained program: KKT and saddle inequalities

LabeledDataset random_regression(Rng& rng, Index n, Index d, const Vector& theta, double noise) {
  RowMatrix X(n, d);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) X(i, j) = rng.normal();
    y(i) = X.row(i).dot(theta) + noise * rng.normal();
  }
  return LabeledDataset(std::move(X), std::move(y));
}

CriterionResult criterion_cp(Context&) {
  CriterionResult r{6, "exact constrained program satisfies KKT and saddle inequalities", true, false, "", 0};
  // d = 1 hand instance: R_P = (theta - 2)^2, R_Q = theta^2, theta^2 <= 1.
  RowMatrix one(1, 1);
  one(0, 0) = 1.0;
  const LabeledDataset P1(one, Vector::Constant(1, 2.0));
  const LabeledDataset Q1(one, Vector::Zero(1));
  const auto hand = solve_cp_exact(P1, Q1, 1.0, 1.0);
  const double hand_err = std::max(std::abs(hand.lambda_star - 1.0), std::abs(hand.theta(0) - 1.0));

  Rng rng(777);
  const LossModel sq{LossKind::square, 0.0, 1.0, 0.5};
  double worst_stat = 0.0, worst_comp = 0.0, worst_saddle = -INFINITY;
  int active = 0;
  for (int i = 0; i < 200; ++i) {
    const Index d = 1 + static_cast<Index>(rng.uniform_index(8));
    const Index n_P = d + 2 + static_cast<Index>(rng.uniform_index(30));
    const Index n_Q = 2 + static_cast<Index>(rng.uniform_index(30));
    const Vector theta_Q = random_vector(rng, d);
    const Vector theta_P = theta_Q + (0.5 + 2.0 * rng.uniform01()) * random_vector(rng, d);
    const auto S_P = random_regression(rng, n_P, d, theta_P, 0.5);
    const auto S_Q = random_regression(rng, n_Q, d, theta_Q, 0.5);
    const double eps = 0.01 + 0.3 * rng.uniform01();
    const auto cp = solve_cp_exact(S_P, S_Q, eps, 6.0);
    active += cp.lambda_star > 0.0;
    const Vector grad_P = empirical_risk_grad(sq, S_P, cp.theta);
    worst_stat = std::max(worst_stat, cp.stationarity / (1.0 + grad_P.norm()));
    worst_comp = std::max(worst_comp, cp.complementarity);
    const double L_star = cp_lagrangian(S_P, S_Q, cp, cp.theta, cp.lambda_star);
    for (int k = 0; k < 100; ++k) {
      const double lambda = cp.lambda_star * 3.0 * rng.uniform01() + 5.0 * rng.uniform01();
      const Vector theta = cp.theta + std::pow(10.0, -3.0 + 3.0 * rng.uniform01()) * random_vector(rng, d);
      const double left = cp_lagrangian(S_P, S_Q, cp, cp.theta, lambda) - L_star;
      const double right = L_star - cp_lagrangian(S_P, S_Q, cp, theta, cp.lambda_star);
      worst_saddle = std::max({worst_saddle, left, right});
    }
  }
  r.passed = hand_err <= 1e-10 && worst_stat <= 1e-8 && worst_comp <= 1e-8 && worst_saddle <= 1e-8;
  r.detail = "hand instance error " + fmt(hand_err, 3) + "; 200 instances (" + std::to_string(active) +
             " active): stationarity " + fmt(worst_stat, 3) + ", complementarity " + fmt(worst_comp, 3) +
             ", worst saddle excess " + fmt(worst_saddle, 3);
  return r;
}

// ---------------------------------------------------------------------------
// 7. gradient correctness

CriterionResult criterion_gradients(Context&) {
  CriterionResult r{7, "loss gradients match central finite differences", true, false, "", 0};
  Rng rng(4242);
  const std::vector<LossModel> losses{LossModel::square(3.0, 1.0), LossModel::logistic(3.0, 2.0),
                                      LossModel::hinge(3.0), LossModel::weighted_hinge(3.0, 0.7)};
  bool ok = true;
  std::string detail;
  for (const auto& loss : losses) {
    double worst = 0.0;
    int checked = 0;
    while (checked < 500) {
      const Index d = 1 + static_cast<Index>(rng.uniform_index(10));
      const Vector theta = random_vector(rng, d);
      const Vector x = random_vector(rng, d);
      const double y = loss.is_classification() ? (rng.bernoulli(0.5) ? 1.0 : -1.0) : 2.0 * rng.normal();
      if (loss.is_classification() && std::abs(y * theta.dot(x) - 1.0) < 1e-4) continue;
      const Vector g = loss_grad(loss, theta, x, y);
      Vector fd(d);
      for (Index j = 0; j < d; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(theta(j)));
        Vector tp = theta, tm = theta;
        tp(j) += h;
        tm(j) -= h;
        fd(j) = (loss_value(loss, tp, x, y) - loss_value(loss, tm, x, y)) / (2.0 * h);
      }
      const double denom = std::max(g.norm(), fd.norm());
      const double err = denom > 1e-12 ? (g - fd).norm() / denom : 0.0;
      worst = std::max(worst, err);
      ++checked;
    }
    ok = ok && worst <= 1e-5;
    detail += std::string(to_string(loss.kind)) + " " + fmt(worst, 3) + "; ";
  }
  r.passed = ok;
  r.detail = "max relative error over 500 points: " + detail;
  return r;
}

// ---------------------------------------------------------------------------
// 8. hyperparameter lemma soundness

Vector point_in_ball(Rng& rng, const Vector& center, double radius, bool boundary) {
  const Index d = center.size();
  Vector dir = random_vector(rng, d).normalized();
  const double u = boundary ? 1.0 : std::pow(rng.uniform01(), 1.0 / static_cast<double>(d));
  return center + radius * u * dir;
}

CriterionResult criterion_lemmas(Context&) {
  CriterionResult r{8, "estimated constants dominate their exact counterparts", true, false, "", 0};
  Rng rng(8080);
  int rho_fail = 0, lambda_fail = 0, gtheta_fail = 0, glambda_fail = 0;
  double rho_margin = INFINITY, lambda_margin = INFINITY, gt_margin = INFINITY, gl_margin = INFINITY;
  for (int i = 0; i < 50; ++i) {
    SyntheticRegressionSpec spec;
    spec.d = std::vector<Index>{5, 10, 20}[static_cast<std::size_t>(i % 3)];
    spec.n_P = 2 * spec.d + static_cast<Index>(rng.uniform_index(200));
    spec.n_Q = spec.d + static_cast<Index>(rng.uniform_index(100));
    spec.q_rank = 1 + static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(spec.d)));
    spec.lambda_max_ratio = 1.0 + 3.0 * rng.uniform01();
    spec.source_target_gap = 2.0 * rng.uniform01();
    spec.seed = 9000 + static_cast<std::uint64_t>(i);
    const auto inst = gen_synthetic_regression(spec);
    const auto cov_Q = empirical_covariance(inst.target.X());
    const double M_x = std::max(inst.source.max_feature_norm(), inst.target.max_feature_norm());
    const double M_y = std::max(inst.source.max_abs_label(), inst.target.max_abs_label());
    const auto loss = LossModel::square(M_x, cov_Q.lambda_min_plus);
    HyperParamConfig cfg;
    cfg.sigma_y = 1.0;
    cfg.T = 10000;
    const auto hp = derive_hyperparams(inst.source, inst.target, loss, cfg, spec.seed);
    const auto cp = solve_cp_exact(inst.source, inst.target, hp.epsilon_Q, 6.0);

    const double rho_true = cp.theta.norm();
    rho_fail += hp.rho < rho_true;
    rho_margin = std::min(rho_margin, hp.rho / std::max(rho_true, 1e-300));
    lambda_fail += hp.lambda_star_hat < cp.lambda_star;
    if (cp.lambda_star > 0.0) lambda_margin = std::min(lambda_margin, hp.lambda_star_hat / cp.lambda_star);

    // Domains: ||theta - theta_tilde||^2 <= 2 rho^2 and the theta_Q ball.
    const double radius = std::numbers::sqrt2 * rho_true;
    const double radius_Q =
        (1.0 + std::log(static_cast<double>(hp.T) + 2.0 * cov_Q.kappa)) / cov_Q.lambda_min_plus * M_x * M_y;
    double max_grad = 0.0, max_bracket = 0.0;
    for (int k = 0; k < 100; ++k) {
      const bool boundary = k % 2 == 0;
      const Vector theta = point_in_ball(rng, cp.theta, radius, boundary);
      const Vector theta_prime = point_in_ball(rng, Vector::Zero(spec.d), radius_Q, boundary);
      for (const auto* data : {&inst.source, &inst.target}) {
        const Vector s = data->X() * theta;
        const Vector s_prime = data->X() * theta_prime;
        for (Index j = 0; j < data->size(); ++j) {
          const double y = data->y()(j);
          const double norm_x = data->X().row(j).norm();
          max_grad = std::max(max_grad, std::abs(loss.derivative_from_score(s(j), y)) * norm_x);
          max_bracket = std::max(max_bracket, std::abs(loss.value_from_score(s(j), y) -
                                                       loss.value_from_score(s_prime(j), y) - 6.0 * hp.epsilon_Q));
        }
      }
    }
    gtheta_fail += max_grad > hp.g_theta_hat;
    glambda_fail += max_bracket > hp.g_lambda_hat;
    gt_margin = std::min(gt_margin, hp.g_theta_hat / max_grad);
    gl_margin = std::min(gl_margin, hp.g_lambda_hat / max_bracket);
  }
  r.passed = rho_fail + lambda_fail + gtheta_fail + glambda_fail == 0;
  r.detail = "50 instances; violations rho " + std::to_string(rho_fail) + ", lambda* " + std::to_string(lambda_fail) +
             ", G_theta " + std::to_string(gtheta_fail) + ", G_lambda " + std::to_string(glambda_fail) +
             "; smallest bound/actual ratios " + fmt(rho_margin, 3) + ", " + fmt(lambda_margin, 3) + ", " +
             fmt(gt_margin, 3) + ", " + fmt(gl_margin, 3);
  return r;
}

// ---------------------------------------------------------------------------
// 9. projected SGD parity and cost

CriterionResult criterion_psgd(Context& ctx) {
  CriterionResult r{9, "projected SGD parity at equal T and higher per-step cost", true, false, "", 0};
  const auto res = run_config(ctx, "fig3_psgd.toml");
  const auto risk = metric_means(res.rows, "excess_risk_q");
  std::map<std::string, std::vector<double>> per_step;
  double T = 0.0;
  for (const auto& row : res.rows) {
    if (row.metric == "excess_risk_q") {
      per_step[row.method].push_back(row.wall_time_s / row.sweep_value);
      T = row.sweep_value;
    }
  }
  if (!res.ok() || risk.empty() || !per_step.count("mixed") || !per_step.count("psgd")) {
    r.detail = "run incomplete";
    return r;
  }
  const auto& m = risk.begin()->second;
  const double mixed = m.at("mixed").mean;
  const double ps = m.at("psgd").mean;
  const double rel = std::abs(ps - mixed) / std::max(ps, mixed);
  const double t_mixed = aggregate_trials(per_step["mixed"]).mean;
  const double t_psgd = aggregate_trials(per_step["psgd"]).mean;
  r.passed = rel <= 0.1 && t_psgd >= 1.5 * t_mixed;
  r.detail = "T=" + fmt(T, 6) + ": E_Q mixed " + fmt(mixed) + ", psgd " + fmt(ps) + " (relative difference " + fmt(rel, 3) +
             " <= 0.1); per-step time psgd/mixed = " + fmt(t_psgd / t_mixed, 3) + " >= 1.5";
  return r;
}

// ---------------------------------------------------------------------------
// 10. determinism

CriterionResult criterion_determinism(Context& ctx) {
  CriterionResult r{10, "re-running acceptance configs reproduces the results CSV byte for byte", true, false, "", 0};
  bool ok = !ctx.ledger.runs.empty();
  std::string detail;
  const int other_jobs = ctx.options.jobs == 1 ? 4 : 1;
  for (const auto& run : ctx.ledger.runs) {
    std::string first = run.csv;
    const auto again = run_experiment(run.config, other_jobs);
    std::string second = results_csv_text(again.rows);
    if (run.config.record_timing) {
      // Timing-enabled runs: compare every column but the wall clock.
      const auto strip = [](const std::string& csv) {
        std::string out;
        std::istringstream in(csv);
        for (std::string line; std::getline(in, line);) out += line.substr(0, line.rfind(',')) + '\n';
        return out;
      };
      first = strip(first);
      second = strip(second);
    }
    const bool same = first == second;
    ok = ok && same;
    detail += " " + run.name + (run.config.record_timing ? " (timing column excluded)" : "") + (same ? " identical" : " DIFFERS") + ";";
    ctx.log(run.name + ": " + std::to_string(first.size()) + " bytes, jobs " + std::to_string(ctx.options.jobs) +
            " vs " + std::to_string(other_jobs) + (same ? ", identical" : ", different"));
  }
  r.passed = ok;
  r.detail = detail.empty() ? "no runs recorded" : detail.substr(1);
  return r;
}

// ---------------------------------------------------------------------------
// 11. general-loss mode

CriterionResult criterion_general(Context& ctx) {
  CriterionResult r{11, "general-loss mode on label-shifted classification", true, false, "", 0};
  const auto res = run_config(ctx, "classification_label_shift.toml");
  const auto means = metric_means(res.rows, "excess_risk_q");
  double worst_constraint = -INFINITY;
  for (const auto& row : res.rows) {
    if (row.method == "mixed" && row.metric == "constraint_value") worst_constraint = std::max(worst_constraint, row.value);
  }
  bool ok = res.ok() && worst_constraint <= 1e-8;
  std::string detail;
  for (const auto& [x, m] : means) {
    const double best = std::min(m.at("source_erm").mean, m.at("target_erm").mean);
    const double bound = 1.5 * best + 0.05;
    const double mixed = m.at("mixed").mean;
    const bool point_ok = mixed <= bound && m.at("mixed").count == ctx.ledger.runs.back().config.seeds.size();
    ok = ok && point_ok;
    ctx.log("n_P=" + fmt(x) + ": mixed " + fmt(mixed) + " source " + fmt(m.at("source_erm").mean) + " target " +
            fmt(m.at("target_erm").mean) + " bound " + fmt(bound));
    detail += " " + fmt(x) + ":" + fmt(mixed, 3) + "<=" + fmt(bound, 3) + (point_ok ? "" : "!");
  }
  r.passed = ok;
  r.detail = "cells failed " + std::to_string(res.failures.size()) + ", worst constraint value " +
             fmt(worst_constraint, 3) + ";" + detail;
  return r;
}

}  // namespace

std::vector<CriterionResult> run_suite(const SuiteOptions& options) {
  Context ctx{options, {}};
  const bool full = options.tier == Tier::full;
  const auto wanted = [&](int id) {
    return options.only.empty() || std::find(options.only.begin(), options.only.end(), id) != options.only.end();
  };

  using Fn = CriterionResult (*)(Context&);
  const std::vector<std::pair<int, Fn>> order{
      {1, criterion_adaptivity}, {2, criterion_low_rank}, {3, criterion_rate},    {9, criterion_psgd},
      {11, criterion_general},   {5, criterion_projection}, {6, criterion_cp},    {7, criterion_gradients},
      {8, criterion_lemmas},
  };
  const std::map<int, std::string> titles{
      {1, "adaptivity across n_P and optimum shift"},
      {2, "low-rank target covariance, unbounded constraint set"},
      {3, "1/sqrt(T) convergence of R_P to the exact constrained optimum"},
      {9, "projected SGD parity at equal T and higher per-step cost"},
      {11, "general-loss mode on label-shifted classification"},
  };
  const std::set<int> slow{1, 2, 3, 9, 11};

  std::map<int, CriterionResult> results;
  for (const auto& [id, fn] : order) {
    if (!wanted(id)) continue;
    if (!full && slow.count(id)) {
      results[id] = CriterionResult{id, titles.at(id), false, false, "skipped in the fast tier", 0};
      continue;
    }
    if (options.log) *options.log << "criterion " << id << " ...\n" << std::flush;
    const auto start = std::chrono::steady_clock::now();
    CriterionResult res;
    try {
      res = fn(ctx);
    } catch (const std::exception& e) {
      res = CriterionResult{id, titles.count(id) ? titles.at(id) : "", true, false, std::string("error: ") + e.what(), 0};
    }
    res.ran = true;
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    results[id] = res;
  }

  if (!full && (wanted(4) || wanted(10))) {
    // Reduced run feeding the feasibility and determinism checks.
    try {
      run_config(ctx, "fig1_left.toml", [](ExperimentConfig& c) {
        c.seeds = {1, 2, 3};
        c.solver.T = 20000;
      });
    } catch (const std::exception& e) {
      if (options.log) *options.log << "  reduced run failed: " << e.what() << '\n';
    }
  }
  for (const auto& [id, fn] : std::vector<std::pair<int, Fn>>{{4, criterion_feasibility}, {10, criterion_determinism}}) {
    if (!wanted(id)) continue;
    if (options.log) *options.log << "criterion " << id << " ...\n" << std::flush;
    const auto start = std::chrono::steady_clock::now();
    CriterionResult res;
    try {
      res = fn(ctx);
    } catch (const std::exception& e) {
      res = CriterionResult{id, "", true, false, std::string("error: ") + e.what(), 0};
    }
    res.ran = true;
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    results[id] = res;
  }

  std::vector<CriterionResult> out;
  for (auto& [id, res] : results) out.push_back(std::move(res));
  return out;
}

std::string format_line(const CriterionResult& r) {
  const char* status = !r.ran ? "SKIP" : (r.passed ? "PASS" : "FAIL");
  std::ostringstream o;
  o << status << " criterion " << r.id << ": " << r.title << " -- " << r.detail;
  if (r.ran) o << " [" << fmt(r.seconds, 3) << " s]";
  return o.str();
}

}  // namespace mixsgd::acceptance
