#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vea {

enum class ErrorCode {
  MalformedDocument,
  InvariantViolation,
  LengthMismatch,
  NegativeAttention,
  RowSumOutOfTolerance,
  MalformedRecord,
  EmptyAnswers,
  LayerOutOfRange,
  ZeroMass,
  EmptySection,
  RequiresFullPayload,
  DegenerateLabels,
  EmptyDiagnosticSet,
  MixedModels,
  LayerMismatch,
  DimensionError,
  DimensionMismatch,
  MaskOutOfRange,
  DegenerateSize,
  EmptyGoldList,
  NoPositives,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedDocument: return "MalformedDocument";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NegativeAttention: return "NegativeAttention";
    case ErrorCode::RowSumOutOfTolerance: return "RowSumOutOfTolerance";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::EmptyAnswers: return "EmptyAnswers";
    case ErrorCode::LayerOutOfRange: return "LayerOutOfRange";
    case ErrorCode::ZeroMass: return "ZeroMass";
    case ErrorCode::EmptySection: return "EmptySection";
    case ErrorCode::RequiresFullPayload: return "RequiresFullPayload";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::EmptyDiagnosticSet: return "EmptyDiagnosticSet";
    case ErrorCode::MixedModels: return "MixedModels";
    case ErrorCode::LayerMismatch: return "LayerMismatch";
    case ErrorCode::DimensionError: return "DimensionError";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::MaskOutOfRange: return "MaskOutOfRange";
    case ErrorCode::DegenerateSize: return "DegenerateSize";
    case ErrorCode::EmptyGoldList: return "EmptyGoldList";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as a vea::Error. `code()` is the
/// machine-checkable kind; `detail()` names the offending field, layer or
/// file where one exists.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string detail)
      : std::runtime_error(std::string(to_string(code)) + "(" + detail + ")"),
        code_(code),
        detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  bool is_io() const noexcept { return code_ == ErrorCode::Io; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace vea
