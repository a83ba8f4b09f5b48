#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace mixsgd::acceptance {

enum class Tier { fast, full };

struct CriterionResult {
  int id = 0;
  std::string title;
  bool ran = false;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct SuiteOptions {
  std::filesystem::path config_dir;
  int jobs = 1;
  Tier tier = Tier::full;
  std::vector<int> only;           // empty: every criterion of the tier
  std::ostream* log = nullptr;     // optional progress/diagnostic stream
};

/// Runs criteria 1-11. The fast tier skips the long sweeps (1, 2, 3, 9, 11)
/// and checks 4 and 10 on a reduced configuration.
std::vector<CriterionResult> run_suite(const SuiteOptions& options);

/// One line: "PASS|FAIL|SKIP criterion <id>: <title> -- <detail>".
std::string format_line(const CriterionResult& result);

}  // namespace mixsgd::acceptance
