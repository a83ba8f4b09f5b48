#include "mixsgd/errors.hpp"

namespace mixsgd {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_data: return "invalid-data";
    case ErrorCode::empty_dataset: return "empty-dataset";
    case ErrorCode::invalid_label: return "invalid-label";
    case ErrorCode::invalid_config: return "invalid-config";
    case ErrorCode::schema: return "schema";
    case ErrorCode::parse: return "parse";
    case ErrorCode::degenerate_split: return "degenerate-split";
    case ErrorCode::infeasible: return "infeasible";
    case ErrorCode::nonconvergence: return "nonconvergence";
    case ErrorCode::rank_deficiency: return "rank-deficiency";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::degenerate_instance: return "degenerate-instance";
  }
  return "unknown";
}

}  // namespace mixsgd
