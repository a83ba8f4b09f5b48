#include "mixsgd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "mixsgd/baselines.hpp"
#include "mixsgd/errors.hpp"
#include "mixsgd/eval.hpp"
#include "mixsgd/rng.hpp"
#include "mixsgd/spectral.hpp"
#include "toml.hpp"

namespace mixsgd {

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::synthetic_regression: return "synthetic_regression";
    case ExperimentKind::synthetic_classification: return "synthetic_classification";
    case ExperimentKind::csv_regression: return "csv_regression";
    case ExperimentKind::csv_classification: return "csv_classification";
  }
  return "unknown";
}

std::string_view to_string(SweepVariable variable) {
  switch (variable) {
    case SweepVariable::n_P: return "n_P";
    case SweepVariable::n_Q: return "n_Q";
    case SweepVariable::lambda_max_ratio: return "lambda_max_ratio";
    case SweepVariable::source_target_gap: return "source_target_gap";
    case SweepVariable::T: return "T";
  }
  return "unknown";
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

[[noreturn]] void schema_error(const std::string& what) { throw Error(ErrorCode::schema, what); }

void check_keys(const toml::table& table, const std::string& section, const std::set<std::string>& allowed) {
  for (const auto& [key, node] : table) {
    if (!allowed.count(std::string(key.str()))) {
      schema_error("unknown key '" + std::string(key.str()) + "' in [" + section + "]");
    }
  }
}

const toml::table* section(const toml::table& root, const std::string& name) {
  const auto* node = root.get(name);
  if (!node) return nullptr;
  if (!node->is_table()) schema_error("'" + name + "' must be a table");
  return node->as_table();
}

std::optional<double> get_double(const toml::table& t, const std::string& key) {
  const auto* node = t.get(key);
  if (!node) return std::nullopt;
  if (const auto v = node->value<double>()) return *v;  // integers convert too
  schema_error("'" + key + "' must be a number");
}

std::optional<std::int64_t> get_int(const toml::table& t, const std::string& key) {
  const auto* node = t.get(key);
  if (!node) return std::nullopt;
  if (node->is_integer()) return node->as_integer()->get();
  if (node->is_floating_point()) {
    const double v = node->as_floating_point()->get();
    if (std::nearbyint(v) == v && std::abs(v) < 9e15) return static_cast<std::int64_t>(v);
  }
  schema_error("'" + key + "' must be an integer");
}

std::optional<std::string> get_string(const toml::table& t, const std::string& key) {
  const auto* node = t.get(key);
  if (!node) return std::nullopt;
  if (!node->is_string()) schema_error("'" + key + "' must be a string");
  return node->as_string()->get();
}

std::optional<bool> get_bool(const toml::table& t, const std::string& key) {
  const auto* node = t.get(key);
  if (!node) return std::nullopt;
  if (!node->is_boolean()) schema_error("'" + key + "' must be a boolean");
  return node->as_boolean()->get();
}

const toml::array* get_array(const toml::table& t, const std::string& key) {
  const auto* node = t.get(key);
  if (!node) return nullptr;
  if (!node->is_array()) schema_error("'" + key + "' must be an array");
  return node->as_array();
}

std::vector<double> double_array(const toml::table& t, const std::string& key) {
  std::vector<double> out;
  if (const auto* arr = get_array(t, key)) {
    for (const auto& el : *arr) {
      const auto v = el.value<double>();
      if (!v) schema_error("'" + key + "' must contain numbers");
      out.push_back(*v);
    }
  }
  return out;
}

std::vector<std::string> string_array(const toml::table& t, const std::string& key) {
  std::vector<std::string> out;
  if (const auto* arr = get_array(t, key)) {
    for (const auto& el : *arr) {
      if (!el.is_string()) schema_error("'" + key + "' must contain strings");
      out.push_back(el.as_string()->get());
    }
  }
  return out;
}

ExperimentKind parse_kind(const std::string& s) {
  if (s == "synthetic_regression") return ExperimentKind::synthetic_regression;
  if (s == "synthetic_classification") return ExperimentKind::synthetic_classification;
  if (s == "csv_regression") return ExperimentKind::csv_regression;
  if (s == "csv_classification") return ExperimentKind::csv_classification;
  schema_error("unknown experiment kind '" + s + "'");
}

SweepVariable parse_sweep(const std::string& s) {
  if (s == "n_P") return SweepVariable::n_P;
  if (s == "n_Q") return SweepVariable::n_Q;
  if (s == "lambda_max_ratio") return SweepVariable::lambda_max_ratio;
  if (s == "source_target_gap") return SweepVariable::source_target_gap;
  if (s == "T") return SweepVariable::T;
  schema_error("unknown sweep variable '" + s + "'");
}

Index to_index(std::int64_t v, const std::string& key) {
  if (v < 1) schema_error("'" + key + "' must be >= 1");
  return static_cast<Index>(v);
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& toml_text, const std::filesystem::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << e.description() << " at line " << e.source().begin.line << ", column " << e.source().begin.column;
    throw Error(ErrorCode::parse, msg.str());
  }
  check_keys(root, "top level", {"experiment", "sweep", "instance", "solver", "baselines"});

  ExperimentConfig cfg;
  const auto* exp = section(root, "experiment");
  if (!exp) schema_error("missing [experiment] section");
  check_keys(*exp, "experiment", {"name", "kind", "methods", "seeds", "output_dir", "record_timing"});
  cfg.name = get_string(*exp, "name").value_or(cfg.name);
  const auto kind = get_string(*exp, "kind");
  if (!kind) schema_error("[experiment] needs 'kind'");
  cfg.kind = parse_kind(*kind);
  cfg.methods = string_array(*exp, "methods");
  if (const auto* seeds = get_array(*exp, "seeds")) {
    for (const auto& el : *seeds) {
      if (!el.is_integer() || el.as_integer()->get() < 0) schema_error("'seeds' must contain nonnegative integers");
      cfg.seeds.push_back(static_cast<std::uint64_t>(el.as_integer()->get()));
    }
  }
  if (const auto out = get_string(*exp, "output_dir")) cfg.output_dir = *out;
  cfg.record_timing = get_bool(*exp, "record_timing").value_or(false);

  const auto* sweep = section(root, "sweep");
  if (!sweep) schema_error("missing [sweep] section");
  check_keys(*sweep, "sweep", {"variable", "values"});
  const auto var = get_string(*sweep, "variable");
  if (!var) schema_error("[sweep] needs 'variable'");
  cfg.sweep = parse_sweep(*var);
  cfg.grid = double_array(*sweep, "values");

  const bool classification =
      cfg.kind == ExperimentKind::synthetic_classification || cfg.kind == ExperimentKind::csv_classification;
  cfg.loss = classification ? LossKind::logistic : LossKind::square;

  if (const auto* inst = section(root, "instance")) {
    switch (cfg.kind) {
      case ExperimentKind::synthetic_regression: {
        check_keys(*inst, "instance", {"d", "n_P", "n_Q", "lambda_max_ratio", "source_target_gap", "sigma_y", "q_rank"});
        auto& r = cfg.regression;
        if (const auto v = get_int(*inst, "d")) r.d = to_index(*v, "d");
        if (const auto v = get_int(*inst, "n_P")) r.n_P = to_index(*v, "n_P");
        if (const auto v = get_int(*inst, "n_Q")) r.n_Q = to_index(*v, "n_Q");
        if (const auto v = get_int(*inst, "q_rank")) r.q_rank = to_index(*v, "q_rank");
        else if (const auto d = get_int(*inst, "d")) r.q_rank = to_index(*d, "d");
        r.lambda_max_ratio = get_double(*inst, "lambda_max_ratio").value_or(r.lambda_max_ratio);
        r.source_target_gap = get_double(*inst, "source_target_gap").value_or(r.source_target_gap);
        r.sigma_y = get_double(*inst, "sigma_y").value_or(r.sigma_y);
        break;
      }
      case ExperimentKind::synthetic_classification: {
        check_keys(*inst, "instance", {"d", "n_P", "n_Q", "pos_ratio_P", "pos_ratio_Q", "margin", "n_test"});
        auto& c = cfg.classification;
        if (const auto v = get_int(*inst, "d")) c.d = to_index(*v, "d");
        if (const auto v = get_int(*inst, "n_P")) c.n_P = to_index(*v, "n_P");
        if (const auto v = get_int(*inst, "n_Q")) c.n_Q = to_index(*v, "n_Q");
        if (const auto v = get_int(*inst, "n_test")) cfg.test_size = to_index(*v, "n_test");
        c.pos_ratio_P = get_double(*inst, "pos_ratio_P").value_or(c.pos_ratio_P);
        c.pos_ratio_Q = get_double(*inst, "pos_ratio_Q").value_or(c.pos_ratio_Q);
        c.margin = get_double(*inst, "margin").value_or(c.margin);
        break;
      }
      case ExperimentKind::csv_regression:
      case ExperimentKind::csv_classification: {
        check_keys(*inst, "instance",
                   {"source", "target", "test", "features", "label", "standardize", "test_fraction", "n_P", "n_Q"});
        auto& c = cfg.csv;
        const auto resolve = [&](const std::string& p) {
          const std::filesystem::path path(p);
          return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
        };
        if (const auto v = get_string(*inst, "source")) c.source = resolve(*v);
        if (const auto v = get_string(*inst, "target")) c.target = resolve(*v);
        if (const auto v = get_string(*inst, "test")) c.test = resolve(*v);
        c.features = string_array(*inst, "features");
        c.label = get_string(*inst, "label").value_or("");
        c.standardize = get_bool(*inst, "standardize").value_or(true);
        c.test_fraction = get_double(*inst, "test_fraction").value_or(c.test_fraction);
        // Optional subsample sizes; 0 keeps every row.
        cfg.regression.n_P = get_int(*inst, "n_P").value_or(0);
        cfg.regression.n_Q = get_int(*inst, "n_Q").value_or(0);
        break;
      }
    }
  } else if (cfg.kind == ExperimentKind::csv_regression || cfg.kind == ExperimentKind::csv_classification) {
    schema_error("csv experiments need an [instance] section");
  }

  if (const auto* sol = section(root, "solver")) {
    check_keys(*sol, "solver",
               {"loss", "mode", "policy", "c0", "tau", "sigma_y", "T", "epsilon_Q", "epsilon_P", "lambda_slack_mult",
                "proj_slack_mult", "c_eta", "gamma_multiplier", "lambda_star_hat", "warmup_steps", "ridge_fallback",
                "theta_ball_radius", "positive_weight", "stable_reference_T"});
    auto& s = cfg.solver;
    if (const auto v = get_string(*sol, "loss")) cfg.loss = parse_loss_kind(*v);
    if (const auto v = get_string(*sol, "policy")) s.policy = parse_stepsize_policy(*v);
    s.c0 = get_double(*sol, "c0").value_or(s.c0);
    s.tau = get_double(*sol, "tau").value_or(s.tau);
    s.sigma_y = get_double(*sol, "sigma_y");
    s.T = get_int(*sol, "T");
    s.epsilon_Q = get_double(*sol, "epsilon_Q");
    s.epsilon_P = get_double(*sol, "epsilon_P");
    s.lambda_slack_mult = get_double(*sol, "lambda_slack_mult");
    s.proj_slack_mult = get_double(*sol, "proj_slack_mult");
    s.c_eta = get_double(*sol, "c_eta");
    s.gamma_multiplier = get_double(*sol, "gamma_multiplier").value_or(s.gamma_multiplier);
    s.lambda_star_hat = get_double(*sol, "lambda_star_hat");
    s.warmup_steps = get_int(*sol, "warmup_steps").value_or(0);
    s.ridge_fallback = get_bool(*sol, "ridge_fallback").value_or(false);
    s.theta_ball_radius = get_double(*sol, "theta_ball_radius").value_or(s.theta_ball_radius);
    s.stable_reference_T = get_int(*sol, "stable_reference_T");
    cfg.positive_weight = get_double(*sol, "positive_weight").value_or(cfg.positive_weight);
    if (const auto v = get_string(*sol, "mode")) {
      if (*v == "square") s.mode = SolverMode::square;
      else if (*v == "general") s.mode = SolverMode::general;
      else schema_error("unknown solver mode '" + *v + "'");
    } else {
      s.mode = cfg.loss == LossKind::square ? SolverMode::square : SolverMode::general;
    }
  } else {
    cfg.solver.mode = cfg.loss == LossKind::square ? SolverMode::square : SolverMode::general;
  }

  cfg.beta_grid = default_beta_grid();
  if (const auto* base = section(root, "baselines")) {
    check_keys(*base, "baselines", {"beta_grid", "folds"});
    if (base->get("beta_grid")) cfg.beta_grid = double_array(*base, "beta_grid");
    if (const auto v = get_int(*base, "folds")) cfg.folds = static_cast<int>(*v);
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::invalid_config, "cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_experiment_config(text.str(), path.parent_path());
}

void validate_experiment_config(const ExperimentConfig& c) {
  const auto fail = [](const std::string& what) { throw Error(ErrorCode::invalid_config, what); };
  if (c.methods.empty()) fail("methods list is empty");
  std::set<std::string> seen;
  for (const auto& m : c.methods) {
    if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end()) {
      fail("unknown method '" + m + "'");
    }
    if (!seen.insert(m).second) fail("method '" + m + "' listed twice");
  }
  if (c.grid.empty()) fail("sweep grid is empty");
  if (c.seeds.empty()) fail("seeds list is empty");
  for (double v : c.grid) {
    if (!std::isfinite(v)) fail("sweep values must be finite");
    const bool integral = c.sweep == SweepVariable::n_P || c.sweep == SweepVariable::n_Q || c.sweep == SweepVariable::T;
    if (integral && (v < 1.0 || std::nearbyint(v) != v)) fail("sweep values for an integer variable must be integers >= 1");
    if (!integral && v < 0.0) fail("sweep values must be nonnegative");
  }
  const bool synthetic_reg = c.kind == ExperimentKind::synthetic_regression;
  if ((c.sweep == SweepVariable::lambda_max_ratio || c.sweep == SweepVariable::source_target_gap) && !synthetic_reg) {
    fail(std::string("sweep variable ") + std::string(to_string(c.sweep)) + " needs synthetic_regression");
  }
  if (c.is_classification() && c.loss == LossKind::square) fail("classification experiments need a classification loss");
  if (!c.is_classification() && c.loss != LossKind::square) fail("regression experiments need the square loss");
  if (c.solver.mode == SolverMode::square && c.loss != LossKind::square) fail("square mode requires the square loss");
  if (!(c.solver.tau > 0.0 && c.solver.tau < 1.0)) fail("tau must lie in (0, 1)");
  if (!(c.solver.c0 > 0.0)) fail("c0 must be positive");
  if (c.solver.T && *c.solver.T < 1) fail("T must be >= 1");
  if (!(c.solver.theta_ball_radius > 0.0)) fail("theta_ball_radius must be positive");
  if (std::find(c.methods.begin(), c.methods.end(), "psgd") != c.methods.end() && c.loss != LossKind::square) {
    fail("psgd needs the square loss");
  }
  if (std::find(c.methods.begin(), c.methods.end(), "htl") != c.methods.end()) {
    if (c.beta_grid.empty()) fail("beta_grid is empty");
    if (c.folds < 2) fail("folds must be >= 2");
  }
  if (synthetic_reg) {
    const auto& r = c.regression;
    if (r.q_rank > r.d) fail("q_rank must not exceed d");
    if (!(r.sigma_y >= 0.0)) fail("sigma_y must be nonnegative");
    if (!(r.lambda_max_ratio >= 1.0) && c.sweep != SweepVariable::lambda_max_ratio) fail("lambda_max_ratio must be >= 1");
  }
  if (c.kind == ExperimentKind::synthetic_classification) {
    const auto& s = c.classification;
    for (double r : {s.pos_ratio_P, s.pos_ratio_Q}) {
      if (!(r > 0.0 && r <= 1.0)) fail("pos ratios must lie in (0, 1]");
    }
  }
  if (c.kind == ExperimentKind::csv_regression || c.kind == ExperimentKind::csv_classification) {
    const auto& s = c.csv;
    if (s.features.empty()) fail("csv experiments need a features list");
    if (s.label.empty()) fail("csv experiments need a label column");
    for (const auto* p : {&s.source, &s.target}) {
      if (p->empty()) fail("csv experiments need source and target paths");
      if (!std::filesystem::exists(*p)) fail("file not found: " + p->string());
    }
    if (s.test && !std::filesystem::exists(*s.test)) fail("file not found: " + s.test->string());
    if (!s.test && !(s.test_fraction > 0.0 && s.test_fraction < 1.0)) fail("test_fraction must lie in (0, 1)");
  }
}

// ---------------------------------------------------------------------------
// Running

namespace {

struct Instance {
  std::optional<LabeledDataset> source;
  std::optional<LabeledDataset> target;
  std::optional<LabeledDataset> test;
  std::optional<SyntheticTruth> truth;
  LossModel loss;
  HyperParamConfig solver;
  ErmOptions erm;
  std::optional<Vector> reference;  // best in-class model on the test set
};

struct LoadedCsv {
  std::optional<LabeledDataset> source;
  std::optional<LabeledDataset> target;
  std::optional<LabeledDataset> test;
};

LabeledDataset first_rows(const LabeledDataset& data, Index n, std::uint64_t seed) {
  if (n <= 0 || n >= data.size()) return data;
  auto order = permutation(data.size(), seed);
  order.resize(static_cast<std::size_t>(n));
  return data.subset(order);
}

Instance build_instance(const ExperimentConfig& cfg, const LoadedCsv& csv, double value, std::uint64_t seed) {
  Instance inst;
  inst.solver = cfg.solver;
  const auto as_index = [](double v) { return static_cast<Index>(std::llround(v)); };
  switch (cfg.kind) {
    case ExperimentKind::synthetic_regression: {
      auto spec = cfg.regression;
      spec.seed = seed;
      if (cfg.sweep == SweepVariable::n_P) spec.n_P = as_index(value);
      if (cfg.sweep == SweepVariable::n_Q) spec.n_Q = as_index(value);
      if (cfg.sweep == SweepVariable::lambda_max_ratio) spec.lambda_max_ratio = value;
      if (cfg.sweep == SweepVariable::source_target_gap) spec.source_target_gap = value;
      auto gen = gen_synthetic_regression(spec);
      inst.source = std::move(gen.source);
      inst.target = std::move(gen.target);
      inst.truth = std::move(gen.truth);
      if (!inst.solver.sigma_y) inst.solver.sigma_y = spec.sigma_y > 0.0 ? spec.sigma_y : 1e-6;
      break;
    }
    case ExperimentKind::synthetic_classification: {
      auto spec = cfg.classification;
      spec.seed = seed;
      if (cfg.sweep == SweepVariable::n_P) spec.n_P = as_index(value);
      if (cfg.sweep == SweepVariable::n_Q) spec.n_Q = as_index(value);
      auto gen = gen_synthetic_classification(spec);
      inst.test = sample_classification(gen.direction, spec.margin, spec.pos_ratio_Q, cfg.test_size,
                                        Rng::derive_seed(seed, 31));
      inst.source = std::move(gen.source);
      inst.target = std::move(gen.target);
      break;
    }
    case ExperimentKind::csv_regression:
    case ExperimentKind::csv_classification: {
      LabeledDataset target_pool = *csv.target;
      if (csv.test) {
        inst.test = *csv.test;
      } else {
        auto parts = split(target_pool, {1.0 - cfg.csv.test_fraction, cfg.csv.test_fraction}, Rng::derive_seed(seed, 32));
        target_pool = std::move(parts[0]);
        inst.test = std::move(parts[1]);
      }
      Index n_P = cfg.regression.n_P;
      Index n_Q = cfg.regression.n_Q;
      if (cfg.sweep == SweepVariable::n_P) n_P = as_index(value);
      if (cfg.sweep == SweepVariable::n_Q) n_Q = as_index(value);
      if (n_P > csv.source->size()) throw Error(ErrorCode::invalid_config, "n_P exceeds the source rows");
      if (n_Q > target_pool.size()) throw Error(ErrorCode::invalid_config, "n_Q exceeds the target training rows");
      auto source = first_rows(*csv.source, n_P, Rng::derive_seed(seed, 33));
      auto target = first_rows(target_pool, n_Q, Rng::derive_seed(seed, 34));
      if (cfg.csv.standardize) {
        const auto z = Standardization::fit(target.X());
        source = z.apply(source);
        target = z.apply(target);
        inst.test = z.apply(*inst.test);
      }
      inst.source = std::move(source);
      inst.target = std::move(target);
      break;
    }
  }
  if (cfg.sweep == SweepVariable::T) {
    inst.solver.T = static_cast<std::int64_t>(std::llround(value));
    if (!inst.solver.stable_reference_T) {
      inst.solver.stable_reference_T =
          static_cast<std::int64_t>(std::llround(*std::min_element(cfg.grid.begin(), cfg.grid.end())));
    }
  }

  const double M_x = std::max(inst.source->max_feature_norm(), inst.target->max_feature_norm());
  switch (cfg.loss) {
    case LossKind::square:
      inst.loss = LossModel::square(M_x, empirical_covariance(inst.target->X()).lambda_min_plus);
      break;
    case LossKind::logistic: inst.loss = LossModel::logistic(M_x, cfg.solver.theta_ball_radius); break;
    case LossKind::hinge: inst.loss = LossModel::hinge(M_x); break;
    case LossKind::weighted_hinge: inst.loss = LossModel::weighted_hinge(M_x, cfg.positive_weight); break;
  }
  if (cfg.solver.mode == SolverMode::general) inst.erm.ball_radius = cfg.solver.theta_ball_radius;
  if (inst.test) {
    check_labels(inst.loss, *inst.test);
    inst.reference = fit_erm(*inst.test, inst.loss, inst.erm);
  }
  return inst;
}

struct Slot {
  std::once_flag once;
  std::shared_ptr<const Instance> instance;
  std::string error;
  std::once_flag hp_once;
  std::optional<HyperParams> hp;
  std::string hp_error;
};

struct Metric {
  std::string name;
  double value;
};

std::vector<Metric> model_metrics(const ExperimentConfig& cfg, const Instance& inst, const Vector& theta) {
  std::vector<Metric> out;
  if (inst.truth) {
    out.push_back({"excess_risk_q", population_excess_risk_q(theta, *inst.truth)});
  } else {
    out.push_back({"excess_risk_q", empirical_excess_risk(theta, *inst.test, inst.loss, *inst.reference)});
    out.push_back({"test_risk", empirical_risk(inst.loss, *inst.test, theta)});
    if (cfg.is_classification()) out.push_back({"misclassification", misclassification_rate(theta, *inst.test)});
  }
  return out;
}

}  // namespace

ExperimentResults run_experiment(const ExperimentConfig& cfg, int jobs) {
  validate_experiment_config(cfg);
  LoadedCsv csv;
  if (cfg.kind == ExperimentKind::csv_regression || cfg.kind == ExperimentKind::csv_classification) {
    csv.source = load_csv(cfg.csv.source, cfg.csv.features, cfg.csv.label, false).data;
    csv.target = load_csv(cfg.csv.target, cfg.csv.features, cfg.csv.label, false).data;
    if (cfg.csv.test) csv.test = load_csv(*cfg.csv.test, cfg.csv.features, cfg.csv.label, false).data;
  }

  const std::size_t n_grid = cfg.grid.size();
  const std::size_t n_seed = cfg.seeds.size();
  const std::size_t n_method = cfg.methods.size();
  const std::size_t n_cells = n_grid * n_seed * n_method;
  std::vector<Slot> slots(n_grid * n_seed);
  std::vector<std::vector<ResultRow>> cell_rows(n_cells);
  std::vector<std::optional<CellFailure>> cell_failures(n_cells);
  const std::string sweep_name(to_string(cfg.sweep));

  const auto run_cell = [&](std::size_t cell) {
    const std::size_t method_idx = cell % n_method;
    const std::size_t instance_idx = cell / n_method;
    const std::size_t grid_idx = instance_idx / n_seed;
    const std::size_t seed_idx = instance_idx % n_seed;
    const double value = cfg.grid[grid_idx];
    const std::uint64_t seed = cfg.seeds[seed_idx];
    const std::string& method = cfg.methods[method_idx];
    Slot& slot = slots[instance_idx];
    try {
      std::call_once(slot.once, [&] {
        try {
          slot.instance = std::make_shared<const Instance>(build_instance(cfg, csv, value, seed));
        } catch (const std::exception& e) {
          slot.error = e.what();
        }
      });
      if (!slot.instance) throw std::runtime_error("instance construction failed: " + slot.error);
      const Instance& inst = *slot.instance;

      const auto hyperparams = [&]() -> const HyperParams& {
        std::call_once(slot.hp_once, [&] {
          try {
            slot.hp = derive_hyperparams(*inst.source, *inst.target, inst.loss, inst.solver, Rng::derive_seed(seed, 21));
          } catch (const std::exception& e) {
            slot.hp_error = e.what();
          }
        });
        if (!slot.hp) throw std::runtime_error("hyperparameter derivation failed: " + slot.hp_error);
        return *slot.hp;
      };

      std::vector<Metric> metrics;
      double elapsed = 0.0;
      const auto timed = [&](auto&& fn) {
        const auto start = std::chrono::steady_clock::now();
        auto result = fn();
        elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return result;
      };
      if (method == "mixed") {
        const HyperParams& hp = hyperparams();
        const auto sol = timed([&] {
          return run_mixed_sample_sgd(*inst.source, *inst.target, inst.loss, hp, Rng::derive_seed(seed, 22));
        });
        metrics = model_metrics(cfg, inst, sol.theta_hat_PQ);
        metrics.push_back({"constraint_value", sol.constraint_value});
        metrics.push_back({"lambda_final", sol.lambda_final});
        metrics.push_back({"source_fraction", sol.source_fraction});
      } else if (method == "psgd") {
        const HyperParams& hp = hyperparams();
        const auto res = timed([&] { return psgd(*inst.source, *inst.target, inst.loss, hp, Rng::derive_seed(seed, 23)); });
        metrics = model_metrics(cfg, inst, res.theta);
        metrics.push_back({"max_violation", res.max_violation});
      } else if (method == "htl") {
        const auto res = timed([&] {
          return htl(*inst.source, *inst.target, inst.loss, cfg.beta_grid, cfg.folds, Rng::derive_seed(seed, 24), inst.erm);
        });
        metrics = model_metrics(cfg, inst, res.theta);
        metrics.push_back({"chosen_beta", res.chosen_beta});
      } else {
        const bool source = method == "source_erm";
        const Vector theta = timed([&] { return fit_erm(source ? *inst.source : *inst.target, inst.loss, inst.erm); });
        metrics = model_metrics(cfg, inst, theta);
      }
      for (const auto& m : metrics) {
        cell_rows[cell].push_back(
            {sweep_name, value, seed, method, m.name, m.value, cfg.record_timing ? elapsed : 0.0});
      }
    } catch (const std::exception& e) {
      cell_failures[cell] = CellFailure{value, seed, method, e.what()};
    }
  };

  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n_cells)));
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t cell = next++; cell < n_cells; cell = next++) run_cell(cell);
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  // Single collector: cell order, independent of scheduling.
  ExperimentResults results;
  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    for (auto& row : cell_rows[cell]) results.rows.push_back(std::move(row));
    if (cell_failures[cell]) results.failures.push_back(std::move(*cell_failures[cell]));
  }
  return results;
}

std::string results_csv_text(const std::vector<ResultRow>& rows) {
  std::string out = kResultsHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += r.sweep_var + ',' + format_double(r.sweep_value) + ',' + std::to_string(r.seed) + ',' + r.method + ',' +
           r.metric + ',' + format_double(r.value) + ',' + format_double(r.wall_time_s) + '\n';
  }
  return out;
}

void write_results_csv(const std::vector<ResultRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::invalid_config, "cannot write " + path.string());
  out << results_csv_text(rows);
}

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::invalid_config, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::schema, "empty results file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kResultsHeader) throw Error(ErrorCode::schema, "unexpected results header: " + line);
  std::vector<ResultRow> rows;
  std::size_t lineno = 1;
  const auto number = [&](const std::string& s, std::size_t col) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw Error(ErrorCode::parse, "bad number '" + s + "' at row " + std::to_string(lineno) + ", column " +
                                        std::to_string(col + 1));
    }
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw Error(ErrorCode::schema, "row " + std::to_string(lineno) + " does not have 7 fields");
    ResultRow r;
    r.sweep_var = f[0];
    r.sweep_value = number(f[1], 1);
    r.seed = static_cast<std::uint64_t>(number(f[2], 2));
    r.method = f[3];
    r.metric = f[4];
    r.value = number(f[5], 5);
    r.wall_time_s = number(f[6], 6);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace mixsgd
