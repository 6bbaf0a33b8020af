#pragma once

#include <stdexcept>
#include <string>

namespace routelab {

// Stable numeric values; the C API forwards these unchanged.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kIo = 2,
  kFormat = 3,
  kChecksum = 4,
  kTruncated = 5,
  kVersion = 6,
  kNonFinite = 7,
  kEmptySelection = 8,
  kDimensionMismatch = 9,
  kSingleClass = 10,
  kDegenerate = 11,
  kLeakage = 12,
  kConsumed = 13,
  kMissingLayer = 14,
  kEmptyBand = 15,
  kInternal = 99,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace routelab
