#include "medground/error.h"

namespace medground {

std::string_view ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kLengthMismatch: return "LengthMismatch";
    case ErrorKind::kMalformedRuns: return "MalformedRuns";
    case ErrorKind::kDimensionMismatch: return "DimensionMismatch";
    case ErrorKind::kEmptyMask: return "EmptyMask";
    case ErrorKind::kEmptyInput: return "EmptyInput";
    case ErrorKind::kConfigMismatch: return "ConfigMismatch";
    case ErrorKind::kParseError: return "ParseError";
    case ErrorKind::kDuplicateLabel: return "DuplicateLabel";
    case ErrorKind::kNotFound: return "NotFound";
    case ErrorKind::kEmptyLabels: return "EmptyLabels";
    case ErrorKind::kUnknownLabel: return "UnknownLabel";
    case ErrorKind::kProviderError: return "ProviderError";
    case ErrorKind::kUngroundableAnswer: return "UngroundableAnswer";
    case ErrorKind::kBadRatios: return "BadRatios";
    case ErrorKind::kEmptySource: return "EmptySource";
    case ErrorKind::kOutOfBounds: return "OutOfBounds";
    case ErrorKind::kNonFinite: return "NonFinite";
    case ErrorKind::kIdMismatch: return "IdMismatch";
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace medground
