#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace realm {

enum class ErrorCode {
  // event_io
  BadMagic,
  TruncatedFile,
  OutOfBoundsPixel,
  NonMonotoneTimestamp,
  BadPolarity,
  // representation / model
  DegenerateInput,
  ShapeMismatch,
  // distillation
  EmptyMask,
  NonFiniteFeature,
  EmptyBatch,
  // heads / metrics
  NoValidPixels,
  EmptyMatrix,
  EmptyErrors,
  EmptyInput,
  // inference
  InputSmallerThanTile,
  InputLargerThanTarget,
  // matching
  TooFewCorrespondences,
  DegenerateConfiguration,
  NonRotation,
  // plumbing
  InvalidArgument,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-checkable code. All library failures go
/// through this type so callers (and the CLI) can branch on `code()`.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace realm
