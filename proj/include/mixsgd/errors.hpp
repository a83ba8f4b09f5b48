#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mixsgd {

enum class ErrorCode {
  invalid_data,
  empty_dataset,
  invalid_label,
  invalid_config,
  schema,
  parse,
  degenerate_split,
  infeasible,
  nonconvergence,
  rank_deficiency,
  divergence,
  degenerate_instance,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mixsgd
