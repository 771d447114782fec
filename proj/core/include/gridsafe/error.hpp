#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gridsafe {

/// Broad failure class; the CLI maps these onto its exit codes.
enum class ErrorKind {
  kValidation,  ///< bad input document, option or shape
  kNumerical,   ///< solver breakdown, instability, divergence
};

/// Machine-checkable failure reason. The text form (see to_string) is the
/// stable identifier that appears at the front of every message.
enum class ErrorCode {
  kMalformedDocument,
  kMissingField,
  kInvalidParameter,
  kDisconnected,
  kDuplicateLine,
  kShapeMismatch,
  kUnstableClosedLoop,
  kLyapunovConditioning,
  kAreDivergence,
  kUnstableGain,
  kAdmmStabilityLoss,
  kAdmmMaxIters,
  kPolishStabilityLoss,
  kCbfConflict,
  kNumericalBlowup,
};

std::string_view to_string(ErrorCode code);
ErrorKind kind_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }
  ErrorKind kind() const noexcept { return kind_of(code_); }

 private:
  ErrorCode code_;
};

}  // namespace gridsafe
