#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dem {

enum class ErrorCode {
  invalid_spec,
  invalid_config,
  degenerate_labels,
  degenerate_pseudo_labels,
  too_few_samples,
  shape_mismatch,
  index_out_of_range,
  frozen_column,
  corrupt_checkpoint,
  empty_batch,
  empty_sample_set,
  empty_selection,
  single_parent,
  single_class,
  non_finite_gradient,
  non_finite_loss,
  non_finite_reward,
  io_failure,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_spec: return "InvalidSpec";
    case ErrorCode::invalid_config: return "InvalidConfig";
    case ErrorCode::degenerate_labels: return "DegenerateLabels";
    case ErrorCode::degenerate_pseudo_labels: return "DegeneratePseudoLabels";
    case ErrorCode::too_few_samples: return "TooFewSamples";
    case ErrorCode::shape_mismatch: return "ShapeMismatch";
    case ErrorCode::index_out_of_range: return "IndexOutOfRange";
    case ErrorCode::frozen_column: return "FrozenColumn";
    case ErrorCode::corrupt_checkpoint: return "CorruptCheckpoint";
    case ErrorCode::empty_batch: return "EmptyBatch";
    case ErrorCode::empty_sample_set: return "EmptySampleSet";
    case ErrorCode::empty_selection: return "EmptySelection";
    case ErrorCode::single_parent: return "SingleParent";
    case ErrorCode::single_class: return "SingleClass";
    case ErrorCode::non_finite_gradient: return "NonFiniteGradient";
    case ErrorCode::non_finite_loss: return "NonFiniteLoss";
    case ErrorCode::non_finite_reward: return "NonFiniteReward";
    case ErrorCode::io_failure: return "IoFailure";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// CLI exit codes: 2 invalid config, 3 data error, 4 numerical failure.
constexpr int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_spec:
    case ErrorCode::invalid_config:
      return 2;
    case ErrorCode::non_finite_gradient:
    case ErrorCode::non_finite_loss:
    case ErrorCode::non_finite_reward:
      return 4;
    default:
      return 3;
  }
}

}  // namespace dem
