#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "mixsgd/data.hpp"
#include "mixsgd/errors.hpp"
#include "mixsgd/experiment.hpp"
#include "mixsgd/plot.hpp"
#include "mixsgd/rng.hpp"
#include "test_util.hpp"

using namespace mixsgd;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"(
[experiment]
kind = "synthetic_regression"
methods = ["target_erm"]
seeds = [1]

[sweep]
variable = "n_P"
values = [50]

[instance]
d = 5
n_Q = 20
)";

std::string replace(std::string s, const std::string& from, const std::string& to) {
  s.replace(s.find(from), from.size(), to);
  return s;
}

ErrorCode code_of(const std::string& toml) {
  try {
    validate_experiment_config(parse_experiment_config(toml));
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::invalid_data;
}

std::vector<ResultRow> sample_rows() {
  std::vector<ResultRow> rows;
  const double xs[] = {1.0, 2.0, 4.0};
  for (double x : xs)
    for (std::uint64_t s = 1; s <= 3; ++s) {
      rows.push_back({"n_P", x, s, "mixed", "excess_risk_q", 1.0 / x + 0.1 * static_cast<double>(s), 0.0});
      rows.push_back({"n_P", x, s, "target_erm", "excess_risk_q", 0.5 + 0.05 * static_cast<double>(s), 0.0});
    }
  return rows;
}

}  // namespace

TEST_CASE("config: minimal config parses with defaults") {
  const auto cfg = parse_experiment_config(kMinimal);
  CHECK(cfg.kind == ExperimentKind::synthetic_regression);
  CHECK(cfg.sweep == SweepVariable::n_P);
  CHECK(cfg.grid == std::vector<double>{50});
  CHECK(cfg.regression.d == 5);
  CHECK(cfg.solver.mode == SolverMode::square);
  CHECK_FALSE(cfg.record_timing);
  CHECK_NOTHROW(validate_experiment_config(cfg));
}

TEST_CASE("config: validation errors") {
  CHECK(code_of(replace(kMinimal, "methods = [\"target_erm\"]", "methods = []")) == ErrorCode::invalid_config);
  CHECK(code_of(replace(kMinimal, "seeds = [1]", "seeds = []")) == ErrorCode::invalid_config);
  CHECK(code_of(replace(kMinimal, "values = [50]", "values = []")) == ErrorCode::invalid_config);
  CHECK(code_of(replace(kMinimal, "d = 5", "d = 5\ntypo_key = 1")) == ErrorCode::schema);
  CHECK(code_of(std::string(kMinimal) + "\n[extra]\nx = 1\n") == ErrorCode::schema);
  CHECK(code_of(replace(kMinimal, "target_erm", "magic")) == ErrorCode::invalid_config);
  CHECK(code_of(replace(kMinimal, "d = 5", "d = 5\nq_rank = 9")) == ErrorCode::invalid_config);
  CHECK(code_of("[experiment\nkind=") == ErrorCode::parse);
}

TEST_CASE("config: shipped configs validate") {
  for (const auto& entry : fs::directory_iterator(MIXSGD_CONFIG_DIR)) {
    if (entry.path().extension() != ".toml") continue;
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(validate_experiment_config(load_experiment_config(entry.path())));
  }
}

TEST_CASE("run: one cell with one method gives exactly one data row") {
  const auto res = run_experiment(parse_experiment_config(kMinimal));
  REQUIRE(res.ok());
  const std::string csv = results_csv_text(res.rows);
  std::istringstream in(csv);
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "sweep_var,sweep_value,seed,method,metric,value,wall_time_s");
  int data_rows = 0;
  while (std::getline(in, line)) ++data_rows;
  CHECK(data_rows == 1);
  CHECK(res.rows[0].metric == "excess_risk_q");
  CHECK(res.rows[0].wall_time_s == 0.0);
}

TEST_CASE("run: results are independent of the worker count and round-trip through CSV") {
  auto cfg = parse_experiment_config(replace(replace(kMinimal, "[\"target_erm\"]", "[\"mixed\", \"source_erm\", \"htl\", \"psgd\"]"),
                                             "seeds = [1]", "seeds = [1, 2]"));
  cfg.grid = {40, 80};
  cfg.solver.T = 5000;
  const auto a = run_experiment(cfg, 1);
  const auto b = run_experiment(cfg, 3);
  REQUIRE(a.ok());
  CHECK(results_csv_text(a.rows) == results_csv_text(b.rows));
  const fs::path p = fs::temp_directory_path() / "mixsgd_unit" / "results.csv";
  write_results_csv(a.rows, p);
  const auto back = read_results_csv(p);
  REQUIRE(back.size() == a.rows.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].value == a.rows[i].value);
    CHECK(back[i].method == a.rows[i].method);
  }
}

TEST_CASE("run: failing cells are recorded and the run continues") {
  // n_P < d leaves the source covariance singular, so the mixed cell fails
  // in the constant estimation while target ERM still runs.
  auto cfg = parse_experiment_config(replace(replace(kMinimal, "values = [50]", "values = [3]"), "[\"target_erm\"]",
                                             "[\"mixed\", \"target_erm\"]"));
  const auto res = run_experiment(cfg);
  CHECK_FALSE(res.ok());
  REQUIRE(res.failures.size() == 1);
  CHECK(res.failures[0].method == "mixed");
  CHECK(res.rows.size() == 1);
  CHECK(res.rows[0].method == "target_erm");
}

TEST_CASE("run: csv regression end to end") {
  const fs::path dir = fs::temp_directory_path() / "mixsgd_unit" / "csvrun";
  fs::create_directories(dir);
  Rng rng(1);
  const Vector theta = mixsgd::test::random_vector(rng, 3);
  write_csv(mixsgd::test::linear_data(rng, 120, theta, 0.2), dir / "source.csv", {"a", "b", "c"}, "y");
  write_csv(mixsgd::test::linear_data(rng, 80, theta, 0.2), dir / "target.csv", {"a", "b", "c"}, "y");
  const std::string toml = R"(
[experiment]
kind = "csv_regression"
methods = ["mixed", "source_erm", "target_erm"]
seeds = [1, 2]
[sweep]
variable = "T"
values = [5000]
[instance]
source = "source.csv"
target = "target.csv"
features = ["a", "b", "c"]
label = "y"
)";
  const auto cfg = parse_experiment_config(toml, dir);
  validate_experiment_config(cfg);
  const auto res = run_experiment(cfg);
  CHECK(res.ok());
  CHECK(res.rows.size() == 2 * (3 * 2 + 3));  // excess + test risk per method, plus mixed extras
}

TEST_CASE("plot: single point has one marker and no band") {
  std::vector<ResultRow> rows{{"n_P", 3.0, 1, "mixed", "m", 0.5, 0.0}};
  const auto svg = render_plot_svg(rows, "m");
  CHECK(svg.find("class=\"band\"") == std::string::npos);
  std::size_t markers = 0;
  for (auto pos = svg.find("class=\"marker\""); pos != std::string::npos; pos = svg.find("class=\"marker\"", pos + 1))
    ++markers;
  CHECK(markers == 1);
  CHECK_THROWS_AS(render_plot_svg(rows, "other"), Error);
}

TEST_CASE("plot: deterministic bytes and padded viewBox") {
  const auto rows = sample_rows();
  const auto svg = render_plot_svg(rows, "excess_risk_q");
  CHECK(svg == render_plot_svg(rows, "excess_risk_q"));
  CHECK(svg.find("class=\"band\"") != std::string::npos);

  // Oracle: data extents over mean +- std of each (x, method) group.
  double ymin = INFINITY, ymax = -INFINITY;
  for (double x : {1.0, 2.0, 4.0}) {
    for (int m = 0; m < 2; ++m) {
      std::vector<double> v;
      for (const auto& r : rows)
        if (r.sweep_value == x && r.method == (m == 0 ? "mixed" : "target_erm")) v.push_back(r.value);
      const double mean = (v[0] + v[1] + v[2]) / 3.0;
      double ss = 0.0;
      for (double e : v) ss += (e - mean) * (e - mean);
      const double sd = std::sqrt(ss / 2.0);
      ymin = std::min(ymin, mean - sd);
      ymax = std::max(ymax, mean + sd);
    }
  }
  const std::regex vb("<svg x=[^>]*viewBox=\"([^ ]+) ([^ ]+) ([^ ]+) ([^ \"]+)\"");
  std::smatch m;
  REQUIRE(std::regex_search(svg, m, vb));
  const double x0 = std::stod(m[1]), y0 = std::stod(m[2]), w = std::stod(m[3]), h = std::stod(m[4]);
  CHECK(x0 == doctest::Approx(1.0 - 0.05 * 3.0).epsilon(1e-5));
  CHECK(w == doctest::Approx(3.0 * 1.1).epsilon(1e-5));
  const double span = ymax - ymin;
  CHECK(-y0 == doctest::Approx(ymax + 0.05 * span).epsilon(1e-5));
  CHECK(h == doctest::Approx(1.1 * span).epsilon(1e-5));

  const fs::path p = fs::temp_directory_path() / "mixsgd_unit" / "plot.svg";
  emit_plot(rows, "excess_risk_q", p);
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == svg);
}

TEST_CASE("format_double round-trips") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, static_cast<double>(rng.uniform_index(40)) - 20.0);
    CHECK(std::stod(format_double(v)) == v);
  }
}
