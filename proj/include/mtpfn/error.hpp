#pragma once

#include <stdexcept>
#include <string>

namespace mtpfn {

enum class ErrorCode {
  // support_bar
  AllValuesEqual,
  NonFiniteTarget,
  NonFiniteInput,
  ZeroProbabilityUnderSupport,
  // pfn_core
  FeatureCountExceedsMax,
  InvalidConfig,
  ShapeMismatch,
  NonFiniteGradient,
  // prior_gen
  DivergenceDetected,
  // finetune
  ZeroVarianceTask,
  EmptyBatch,
  // inference
  FeatureDimensionMismatch,
  PreconditionFailed,
  // metrics
  ZeroTrueValue,
  ZeroPredictedValue,
  ZeroTargetVariance,
  ZeroBaseline,
  DegenerateColumn,
  // dataio
  MalformedRow,
  NonNumericCell,
  TooFewColumns,
  EmptyDataset,
  IoError,
  // bench_cli
  ConfigError,
  CheckpointError,
  MissingResults,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mtpfn
