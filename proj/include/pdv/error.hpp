#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pdv {

enum class ErrorCode {
  invalid_embedding,
  dimension_mismatch,
  invalid_parameter,
  degenerate_query,
  duplicate_id,
  empty_gallery,
  zero_query,
  unknown_id,
  unknown_session,
  unknown_gallery,
  unknown_job,
  subset_not_in_gallery,
  target_not_in_subset,
  missing_target,
  non_finite_objective,
  zero_pdv,
  zero_gt,
  degenerate_composed,
  all_bundles_degenerate,
  bad_magic,
  bad_header,
  truncated_file,
  trailing_data,
  non_finite_value,
  unresolved_key,
  schema_violation,
  io_failure,
};

/// Machine-readable snake_case name, used on the wire and in CLI messages.
std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view code_name() const noexcept { return error_code_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace pdv
