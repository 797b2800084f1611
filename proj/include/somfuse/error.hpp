#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace somfuse {

enum class ErrorCode {
  InvalidValue,
  InvalidShape,
  EmptyInput,
  EmptyMask,
  FormatError,
  DimensionMismatch,
  DuplicateRow,
  DegenerateColumn,
  NotFitted,
  MissingAttribute,
  MissingArtifact,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every library failure is reported through this type; `code()` lets callers
/// branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace somfuse
