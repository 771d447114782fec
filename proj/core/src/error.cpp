#include "gridsafe/error.hpp"

namespace gridsafe {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedDocument: return "malformed document";
    case ErrorCode::kMissingField: return "missing field";
    case ErrorCode::kInvalidParameter: return "invalid parameter";
    case ErrorCode::kDisconnected: return "disconnected";
    case ErrorCode::kDuplicateLine: return "duplicate line";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kUnstableClosedLoop: return "unstable closed loop";
    case ErrorCode::kLyapunovConditioning: return "lyapunov conditioning";
    case ErrorCode::kAreDivergence: return "are divergence";
    case ErrorCode::kUnstableGain: return "unstable gain";
    case ErrorCode::kAdmmStabilityLoss: return "admm stability loss";
    case ErrorCode::kAdmmMaxIters: return "admm max iters";
    case ErrorCode::kPolishStabilityLoss: return "polish stability loss";
    case ErrorCode::kCbfConflict: return "cbf conflict";
    case ErrorCode::kNumericalBlowup: return "numerical blowup";
  }
  return "unknown error";
}

ErrorKind kind_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedDocument:
    case ErrorCode::kMissingField:
    case ErrorCode::kInvalidParameter:
    case ErrorCode::kDisconnected:
    case ErrorCode::kDuplicateLine:
    case ErrorCode::kShapeMismatch:
      return ErrorKind::kValidation;
    default:
      return ErrorKind::kNumerical;
  }
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

}  // namespace gridsafe
