#include "routelab/error.hpp"

namespace routelab {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kChecksum: return "checksum";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kVersion: return "version";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kEmptySelection: return "empty_selection";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kSingleClass: return "single_class";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kLeakage: return "leakage";
    case ErrorCode::kConsumed: return "consumed";
    case ErrorCode::kMissingLayer: return "missing_layer";
    case ErrorCode::kEmptyBand: return "empty_band";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace routelab
