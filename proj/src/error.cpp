#include "realm/error.hpp"

namespace realm {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::OutOfBoundsPixel: return "OutOfBoundsPixel";
    case ErrorCode::NonMonotoneTimestamp: return "NonMonotoneTimestamp";
    case ErrorCode::BadPolarity: return "BadPolarity";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::NonFiniteFeature: return "NonFiniteFeature";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::NoValidPixels: return "NoValidPixels";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::EmptyErrors: return "EmptyErrors";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InputSmallerThanTile: return "InputSmallerThanTile";
    case ErrorCode::InputLargerThanTarget: return "InputLargerThanTarget";
    case ErrorCode::TooFewCorrespondences: return "TooFewCorrespondences";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::NonRotation: return "NonRotation";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace realm
