#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wps {

// Values double as CLI exit codes; 2 is reserved for usage errors.
enum class ErrorCode : int {
  kUsage = 2,
  kInvalidConfig = 10,
  kShapeMismatch = 11,
  kDimMismatch = 12,
  kDegenerateBox = 13,
  kOutOfBounds = 14,
  kTooManyParts = 15,
  kNonFinite = 16,
  kNonFiniteLoss = 17,
  kVersionMismatch = 18,
  kCorruptFile = 19,
  kMissingImage = 20,
  kMalformedAnnotation = 21,
  kEmptyEvaluation = 22,
  kInvalidFraction = 23,
  kTaintViolation = 24,
  kIOError = 25,
  kBackendError = 26,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace wps
