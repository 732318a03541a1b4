#include "pdv/error.hpp"

namespace pdv {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_embedding: return "invalid_embedding";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::invalid_parameter: return "invalid_parameter";
    case ErrorCode::degenerate_query: return "degenerate_query";
    case ErrorCode::duplicate_id: return "duplicate_id";
    case ErrorCode::empty_gallery: return "empty_gallery";
    case ErrorCode::zero_query: return "zero_query";
    case ErrorCode::unknown_id: return "unknown_id";
    case ErrorCode::unknown_session: return "unknown_session";
    case ErrorCode::unknown_gallery: return "unknown_gallery";
    case ErrorCode::unknown_job: return "unknown_job";
    case ErrorCode::subset_not_in_gallery: return "subset_not_in_gallery";
    case ErrorCode::target_not_in_subset: return "target_not_in_subset";
    case ErrorCode::missing_target: return "missing_target";
    case ErrorCode::non_finite_objective: return "non_finite_objective";
    case ErrorCode::zero_pdv: return "zero_pdv";
    case ErrorCode::zero_gt: return "zero_gt";
    case ErrorCode::degenerate_composed: return "degenerate_composed";
    case ErrorCode::all_bundles_degenerate: return "all_bundles_degenerate";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::bad_header: return "bad_header";
    case ErrorCode::truncated_file: return "truncated_file";
    case ErrorCode::trailing_data: return "trailing_data";
    case ErrorCode::non_finite_value: return "non_finite_value";
    case ErrorCode::unresolved_key: return "unresolved_key";
    case ErrorCode::schema_violation: return "schema_violation";
    case ErrorCode::io_failure: return "io_failure";
  }
  return "unknown";
}

}  // namespace pdv
