#pragma once

// Confidence calibration with a protecting term (pull toward the current
// subset confidences) and a forgetting term (pull back toward the initial
// confidences), weighted by a sigmoid of the accuracy change.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "nn_core.hpp"

namespace dem {

struct ConfidenceState {
  Vector init;                    // C^init over all N target samples; never modified
  Vector prev;                    // C^prev, the running calibrated confidences
  std::vector<Index> index_map;   // I: positions of the latest subset in the full set
  Vector curr_subset;             // C^curr for the latest subset
  double lambda_scale = 10.0;     // k

  /// Initial confidence max(p, 1 - p) of the source-led model.
  static ConfidenceState from_probabilities(const Vector& probs, double lambda_scale = 10.0) {
    ConfidenceState s;
    s.init = probs.unaryExpr([](double p) { return std::max(p, 1.0 - p); });
    s.prev = s.init;
    s.lambda_scale = lambda_scale;
    return s;
  }

  Index size() const { return init.size(); }
};

/// lambda = 1 / (1 + exp(-k * delta_acc)).
inline double compute_lambda(double delta_acc, double k) {
  if (!(k > 0.0)) throw Error(ErrorCode::invalid_config, "lambda scale k must be > 0");
  return 1.0 / (1.0 + std::exp(-k * delta_acc));
}

/// C^prev + lambda (C^curr - C^prev)^2 - (1 - lambda) (C^prev - C^init)^2, before clamping.
inline double calibrated_confidence(double prev, double curr, double init, double lambda) {
  return prev + lambda * (curr - prev) * (curr - prev) - (1.0 - lambda) * (prev - init) * (prev - init);
}

/// Applies the update with an explicit lambda.  Samples outside the subset keep C^prev.
inline ConfidenceState update_confidences_with_lambda(const ConfidenceState& state, std::span<const Index> subset,
                                                      const Vector& curr_subset, double lambda) {
  if (static_cast<Index>(subset.size()) != curr_subset.size())
    throw Error(ErrorCode::shape_mismatch, "subset confidences not aligned with the index map");
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(state.size()), 0);
  for (Index i : subset) {
    if (i < 0 || i >= state.size()) throw Error(ErrorCode::index_out_of_range, "subset index " + std::to_string(i));
    if (seen[static_cast<std::size_t>(i)]++) throw Error(ErrorCode::index_out_of_range, "duplicate subset index " + std::to_string(i));
  }
  ConfidenceState next = state;
  next.index_map.assign(subset.begin(), subset.end());
  next.curr_subset = curr_subset;
  for (std::size_t j = 0; j < subset.size(); ++j) {
    const Index i = subset[j];
    const double updated = calibrated_confidence(state.prev(i), curr_subset(static_cast<Index>(j)), state.init(i), lambda);
    next.prev(i) = std::clamp(updated, 0.0, 1.0);
  }
  return next;
}

inline ConfidenceState update_confidences(const ConfidenceState& state, std::span<const Index> subset,
                                          const Vector& curr_subset, double delta_acc) {
  return update_confidences_with_lambda(state, subset, curr_subset, compute_lambda(delta_acc, state.lambda_scale));
}

/// Calibrated confidences, fed to the policy as a prior feature.
inline Vector screening_probabilities(const ConfidenceState& state) { return state.prev; }

}  // namespace dem
