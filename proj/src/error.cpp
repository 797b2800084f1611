#include "somfuse/error.hpp"

namespace somfuse {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidValue: return "InvalidValue";
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DuplicateRow: return "DuplicateRow";
    case ErrorCode::DegenerateColumn: return "DegenerateColumn";
    case ErrorCode::NotFitted: return "NotFitted";
    case ErrorCode::MissingAttribute: return "MissingAttribute";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace somfuse
