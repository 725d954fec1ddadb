#include "amgs/error.hpp"

namespace amgs {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kDomain: return "domain";
    case ErrorCode::kSingularity: return "singularity";
    case ErrorCode::kStepUnderflow: return "step_underflow";
    case ErrorCode::kMassFloor: return "mass_floor";
    case ErrorCode::kThrustBound: return "thrust_bound";
    case ErrorCode::kNonConvergence: return "non_convergence";
    case ErrorCode::kEvaluationFailure: return "evaluation_failure";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kHeaderMismatch: return "header_mismatch";
    case ErrorCode::kNonFinite: return "non_finite";
  }
  return "unknown";
}

}  // namespace amgs
