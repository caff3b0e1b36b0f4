#include "mtpfn/error.hpp"

namespace mtpfn {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::AllValuesEqual: return "AllValuesEqual";
    case ErrorCode::NonFiniteTarget: return "NonFiniteTarget";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::ZeroProbabilityUnderSupport: return "ZeroProbabilityUnderSupport";
    case ErrorCode::FeatureCountExceedsMax: return "FeatureCountExceedsMax";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::ZeroVarianceTask: return "ZeroVarianceTask";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::FeatureDimensionMismatch: return "FeatureDimensionMismatch";
    case ErrorCode::PreconditionFailed: return "PreconditionFailed";
    case ErrorCode::ZeroTrueValue: return "ZeroTrueValue";
    case ErrorCode::ZeroPredictedValue: return "ZeroPredictedValue";
    case ErrorCode::ZeroTargetVariance: return "ZeroTargetVariance";
    case ErrorCode::ZeroBaseline: return "ZeroBaseline";
    case ErrorCode::DegenerateColumn: return "DegenerateColumn";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::NonNumericCell: return "NonNumericCell";
    case ErrorCode::TooFewColumns: return "TooFewColumns";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::CheckpointError: return "CheckpointError";
    case ErrorCode::MissingResults: return "MissingResults";
  }
  return "Unknown";
}

}  // namespace mtpfn
