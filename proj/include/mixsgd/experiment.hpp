#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mixsgd/data.hpp"
#include "mixsgd/losses.hpp"
#include "mixsgd/solver.hpp"

namespace mixsgd {

enum class ExperimentKind { synthetic_regression, synthetic_classification, csv_regression, csv_classification };
enum class SweepVariable { n_P, n_Q, lambda_max_ratio, source_target_gap, T };

std::string_view to_string(ExperimentKind kind);
std::string_view to_string(SweepVariable variable);

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods{"mixed", "source_erm", "target_erm", "htl", "psgd"};
  return methods;
}

struct CsvInstance {
  std::filesystem::path source;
  std::filesystem::path target;
  std::optional<std::filesystem::path> test;  // default: held out from the target file
  std::vector<std::string> features;
  std::string label;
  bool standardize = true;  // fitted on the target training rows
  double test_fraction = 0.5;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ExperimentKind kind = ExperimentKind::synthetic_regression;
  SweepVariable sweep = SweepVariable::n_P;
  std::vector<double> grid;
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir = "results";
  bool record_timing = false;  // off keeps results byte-reproducible

  SyntheticRegressionSpec regression;
  SyntheticClassificationSpec classification;
  Index test_size = 20000;  // synthetic classification held-out sample
  CsvInstance csv;

  LossKind loss = LossKind::square;
  double positive_weight = 0.5;  // weighted hinge only
  HyperParamConfig solver;

  std::vector<double> beta_grid;
  int folds = 5;

  bool is_classification() const {
    return kind == ExperimentKind::synthetic_classification || kind == ExperimentKind::csv_classification;
  }
};

/// Parses TOML text. Relative CSV paths resolve against base_dir. Unknown
/// sections or keys are schema errors.
ExperimentConfig parse_experiment_config(const std::string& toml_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Structural checks plus existence of referenced CSV files.
void validate_experiment_config(const ExperimentConfig& config);

struct ResultRow {
  std::string sweep_var;
  double sweep_value = 0.0;
  std::uint64_t seed = 0;
  std::string method;
  std::string metric;
  double value = 0.0;
  double wall_time_s = 0.0;
};

struct CellFailure {
  double sweep_value = 0.0;
  std::uint64_t seed = 0;
  std::string method;
  std::string message;
};

struct ExperimentResults {
  std::vector<ResultRow> rows;
  std::vector<CellFailure> failures;
  bool ok() const { return failures.empty(); }
};

/// Runs every grid point x seed x method cell on `jobs` workers. Rows come back
/// in grid, seed, method order regardless of scheduling.
ExperimentResults run_experiment(const ExperimentConfig& config, int jobs = 1);

inline constexpr const char* kResultsHeader = "sweep_var,sweep_value,seed,method,metric,value,wall_time_s";

/// Header plus one '\n'-terminated line per row.
std::string results_csv_text(const std::vector<ResultRow>& rows);
void write_results_csv(const std::vector<ResultRow>& rows, const std::filesystem::path& path);
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);

/// Shortest representation that parses back to the same double.
std::string format_double(double value);

}  // namespace mixsgd
