#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hyperagg {

enum class ErrorCode {
  InvalidArgument,
  DegenerateDataset,
  ShapeMismatch,
  NonSquare,
  ZeroVariance,
  UndefinedCeiling,
  UndefinedNoise,
  IdMismatch,
  NotTimeResolved,
  Asymmetric,
  NonZeroDiagonal,
  NonFinite,
  DuplicateId,
  OpenFailed,
  BadMagic,
  UnsupportedVersion,
  Truncated,
  Malformed,
  Divergence,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace hyperagg
