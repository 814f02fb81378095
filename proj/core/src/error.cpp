#include "hflow/error.hpp"

namespace hflow {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kSingularHomography: return "SingularHomography";
    case ErrorCode::kDegenerateProjection: return "DegenerateProjection";
    case ErrorCode::kDegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kRankDeficient: return "RankDeficient";
    case ErrorCode::kSingularBasis: return "SingularBasis";
    case ErrorCode::kUnderdeterminedSystem: return "UnderdeterminedSystem";
    case ErrorCode::kNoTexture: return "NoTexture";
    case ErrorCode::kEmptyMask: return "EmptyMask";
    case ErrorCode::kSpecInfeasible: return "SpecInfeasible";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kDimensionOverflow: return "DimensionOverflow";
    case ErrorCode::kUnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::kBadHeader: return "BadHeader";
    case ErrorCode::kIoFailure: return "IoFailure";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace hflow
