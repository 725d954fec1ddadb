#pragma once

#include <stdexcept>
#include <string>

namespace amgs {

// Mirrors the amgs_status codes of the C API one-to-one.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kDomain = 2,
  kSingularity = 3,
  kStepUnderflow = 4,
  kMassFloor = 5,
  kThrustBound = 6,
  kNonConvergence = 7,
  kEvaluationFailure = 8,
  kIo = 9,
  kParse = 10,
  kHeaderMismatch = 11,
  kNonFinite = 12,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace amgs
