#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace circuit_lens {

enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  token_out_of_range,
  invalid_hook,
  malformed_header,
  shape_mismatch,
  truncated_blob,
  overlapping_offsets,
  lexicon_too_small,
  template_mismatch,
  zero_variance,
  non_finite,
  io_error,
  incompatible_shapes,
  model_mismatch,
  malformed_input,
  unknown_flag,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::token_out_of_range: return "token_out_of_range";
    case ErrorCode::invalid_hook: return "invalid_hook";
    case ErrorCode::malformed_header: return "malformed_header";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::truncated_blob: return "truncated_blob";
    case ErrorCode::overlapping_offsets: return "overlapping_offsets";
    case ErrorCode::lexicon_too_small: return "lexicon_too_small";
    case ErrorCode::template_mismatch: return "template_mismatch";
    case ErrorCode::zero_variance: return "zero_variance";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::incompatible_shapes: return "incompatible_shapes";
    case ErrorCode::model_mismatch: return "model_mismatch";
    case ErrorCode::malformed_input: return "malformed_input";
    case ErrorCode::unknown_flag: return "unknown_flag";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable code so the
/// CLI can report it as JSON.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace circuit_lens
