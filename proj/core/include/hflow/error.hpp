#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hflow {

enum class ErrorCode {
  kInvalidArgument,
  kSingularHomography,
  kDegenerateProjection,
  kDegenerateConfiguration,
  kDimensionMismatch,
  kRankDeficient,
  kSingularBasis,
  kUnderdeterminedSystem,
  kNoTexture,
  kEmptyMask,
  kSpecInfeasible,
  kBadMagic,
  kTruncatedFile,
  kDimensionOverflow,
  kUnsupportedFormat,
  kBadHeader,
  kIoFailure,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported as hflow::Error carrying a code, so callers
// (the CLI in particular) can map them onto exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

}  // namespace hflow
