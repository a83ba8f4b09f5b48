#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <set>
#include <thread>

#include "mixsgd/acceptance.hpp"
#include "mixsgd/errors.hpp"
#include "mixsgd/experiment.hpp"
#include "mixsgd/plot.hpp"

namespace fs = std::filesystem;

namespace {

int default_jobs() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

int cmd_run(const fs::path& config_path, int jobs, const std::optional<fs::path>& out_dir) {
  auto cfg = mixsgd::load_experiment_config(config_path);
  if (out_dir) cfg.output_dir = *out_dir;
  mixsgd::validate_experiment_config(cfg);
  const auto res = mixsgd::run_experiment(cfg, jobs);
  fs::create_directories(cfg.output_dir);
  const fs::path csv = cfg.output_dir / "results.csv";
  mixsgd::write_results_csv(res.rows, csv);
  std::set<std::string> metrics;
  for (const auto& r : res.rows) metrics.insert(r.metric);
  for (const auto& m : metrics) mixsgd::emit_plot(res.rows, m, cfg.output_dir / (m + ".svg"));
  std::cout << "wrote " << res.rows.size() << " rows to " << csv.string() << " and " << metrics.size() << " plots\n";
  for (const auto& f : res.failures) {
    std::cerr << "cell failed: value=" << mixsgd::format_double(f.sweep_value) << " seed=" << f.seed
              << " method=" << f.method << ": " << f.message << '\n';
  }
  return res.ok() ? 0 : 1;
}

int cmd_validate(const fs::path& config_path) {
  const auto cfg = mixsgd::load_experiment_config(config_path);
  mixsgd::validate_experiment_config(cfg);
  std::cout << config_path.string() << ": ok (" << mixsgd::to_string(cfg.kind) << ", sweep "
            << mixsgd::to_string(cfg.sweep) << " over " << cfg.grid.size() << " values, " << cfg.seeds.size()
            << " seeds, " << cfg.methods.size() << " methods)\n";
  return 0;
}

int cmd_plot(const fs::path& csv, const std::string& metric, const std::optional<fs::path>& out) {
  const auto rows = mixsgd::read_results_csv(csv);
  const fs::path path = out ? *out : csv.parent_path() / (metric + ".svg");
  mixsgd::emit_plot(rows, metric, path);
  std::cout << "wrote " << path.string() << '\n';
  return 0;
}

int cmd_acceptance(mixsgd::acceptance::Tier tier, int jobs, const fs::path& config_dir, bool quiet) {
  mixsgd::acceptance::SuiteOptions options;
  options.config_dir = config_dir;
  options.jobs = jobs;
  options.tier = tier;
  options.log = quiet ? nullptr : &std::cerr;
  bool failed = false;
  for (const auto& r : mixsgd::acceptance::run_suite(options)) {
    std::cout << mixsgd::acceptance::format_line(r) << std::endl;
    failed = failed || (r.ran && !r.passed);
  }
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-sample SGD for constrained transfer learning"};
  app.require_subcommand(1);

  int jobs = default_jobs();
  fs::path config_path, csv_path;
  std::optional<fs::path> out;
  std::string metric;
  fs::path config_dir = MIXSGD_CONFIG_DIR;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Run an experiment config; writes results.csv and one SVG per metric");
  run->add_option("config", config_path, "Experiment TOML")->required()->check(CLI::ExistingFile);
  run->add_option("--jobs,-j", jobs, "Worker threads")->check(CLI::PositiveNumber);
  run->add_option("--out,-o", out, "Output directory (overrides the config)");

  auto* validate = app.add_subcommand("validate", "Parse and check an experiment config");
  validate->add_option("config", config_path, "Experiment TOML")->required()->check(CLI::ExistingFile);

  auto* plot = app.add_subcommand("plot", "Render one metric of a results CSV as SVG");
  plot->add_option("results", csv_path, "results.csv")->required()->check(CLI::ExistingFile);
  plot->add_option("metric", metric, "Metric name")->required();
  plot->add_option("--out,-o", out, "SVG path (default: <metric>.svg next to the CSV)");

  auto* selftest = app.add_subcommand("selftest", "Fast acceptance tier");
  selftest->add_option("--jobs,-j", jobs, "Worker threads")->check(CLI::PositiveNumber);
  selftest->add_option("--configs", config_dir, "Config directory")->check(CLI::ExistingDirectory);
  selftest->add_flag("--quiet,-q", quiet, "Only print the result lines");

  auto* acceptance = app.add_subcommand("acceptance", "Full acceptance suite");
  acceptance->add_option("--jobs,-j", jobs, "Worker threads")->check(CLI::PositiveNumber);
  acceptance->add_option("--configs", config_dir, "Config directory")->check(CLI::ExistingDirectory);
  acceptance->add_flag("--quiet,-q", quiet, "Only print the result lines");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, jobs, out);
    if (*validate) return cmd_validate(config_path);
    if (*plot) return cmd_plot(csv_path, metric, out);
    if (*selftest) return cmd_acceptance(mixsgd::acceptance::Tier::fast, jobs, config_dir, quiet);
    if (*acceptance) return cmd_acceptance(mixsgd::acceptance::Tier::full, jobs, config_dir, quiet);
  } catch (const mixsgd::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
