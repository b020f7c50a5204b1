#pragma once

// Beam-search replay buffer: the best B candidates ordered by reward
// (descending), ties resolved in favour of the earlier birth iteration.

#include <algorithm>
#include <string>
#include <vector>

#include "calibration.hpp"
#include "policy.hpp"

namespace dem {

struct BeamCandidate {
  std::vector<int> pseudo_labels;  // over the target training pool
  Mask selection;                  // rows used to train the candidate column
  ConfidenceState confidence_state;
  double reward = 0.0;
  std::string checkpoint_ref;
  int birth_iteration = 0;
};

inline bool has_both_classes(const std::vector<int>& labels) {
  bool zero = false, one = false;
  for (int y : labels) (y == 1 ? one : zero) = true;
  return zero && one;
}

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t width = 5) : width_(width) {
    if (width == 0) throw Error(ErrorCode::invalid_config, "beam width must be >= 1");
  }

  /// Checks reward range, label-vector length and class coverage.
  void validate(const BeamCandidate& c) const {
    if (!(c.reward >= 0.0 && c.reward <= 1.0)) throw Error(ErrorCode::non_finite_reward, "candidate reward outside [0, 1]");
    if (!beam_.empty() && beam_.front().pseudo_labels.size() != c.pseudo_labels.size())
      throw Error(ErrorCode::shape_mismatch, "pseudo-label length differs from the beam");
    if (!has_both_classes(c.pseudo_labels))
      throw Error(ErrorCode::degenerate_pseudo_labels, "candidate pseudo-labels contain a single class");
  }

  /// Returns false when the candidate falls off the end of a full beam.
  bool insert(BeamCandidate c) {
    validate(c);
    auto pos = std::find_if(beam_.begin(), beam_.end(), [&](const BeamCandidate& e) {
      return e.reward < c.reward || (e.reward == c.reward && e.birth_iteration > c.birth_iteration);
    });
    const auto offset = pos - beam_.begin();
    beam_.insert(pos, std::move(c));
    if (beam_.size() > width_) beam_.pop_back();
    return static_cast<std::size_t>(offset) < width_;
  }

  const std::vector<BeamCandidate>& beam() const { return beam_; }
  const BeamCandidate& best() const {
    if (beam_.empty()) throw Error(ErrorCode::empty_batch, "replay buffer is empty");
    return beam_.front();
  }
  std::size_t size() const { return beam_.size(); }
  bool empty() const { return beam_.empty(); }
  std::size_t width() const { return width_; }

 private:
  std::size_t width_;
  std::vector<BeamCandidate> beam_;
};

}  // namespace dem
