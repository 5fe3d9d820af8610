#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace medground {

// Stable error kinds. The name of each kind is what the CLI reports in its
// error JSON, so do not rename entries.
enum class ErrorKind {
  kLengthMismatch,
  kMalformedRuns,
  kDimensionMismatch,
  kEmptyMask,
  kEmptyInput,
  kConfigMismatch,
  kParseError,
  kDuplicateLabel,
  kNotFound,
  kEmptyLabels,
  kUnknownLabel,
  kProviderError,
  kUngroundableAnswer,
  kBadRatios,
  kEmptySource,
  kOutOfBounds,
  kNonFinite,
  kIdMismatch,
  kInvalidArgument,
  kIoError,
};

std::string_view ErrorKindName(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace medground
