#pragma once

// Continual backpropagation: contribution utility per extractor hidden unit and
// periodic reinitialization of mature, low-utility units.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "nn_core.hpp"

namespace dem {

struct LayerUtility {
  Vector utility;
  std::vector<std::uint64_t> age;
  double pending = 0.0;  // fractional replacements carried to the next step
};

struct UtilityState {
  std::array<LayerUtility, 2> layers;  // hidden1, hidden2
  double decay = 0.99;
  double replacement_rate = 1e-4;
  std::uint64_t maturity_threshold = 100;

  static UtilityState for_shape(const ColumnShape& shape, double decay = 0.99, double replacement_rate = 1e-4,
                                std::uint64_t maturity_threshold = 100) {
    UtilityState s;
    s.decay = decay;
    s.replacement_rate = replacement_rate;
    s.maturity_threshold = maturity_threshold;
    s.layers[0].utility = Vector::Zero(shape.hidden1);
    s.layers[0].age.assign(static_cast<std::size_t>(shape.hidden1), 0);
    s.layers[1].utility = Vector::Zero(shape.hidden2);
    s.layers[1].age.assign(static_cast<std::size_t>(shape.hidden2), 0);
    return s;
  }
};

struct ReplacedUnit {
  int layer = 0;
  Index unit = 0;
};

namespace detail {

inline Vector outgoing_magnitude(const ColumnParams& p, int layer) {
  if (layer == 0) return p.hidden2.weight.cwiseAbs().colwise().sum().transpose();
  return (p.head_a.weight.cwiseAbs() + p.head_b.weight.cwiseAbs() + p.discriminator.weight.cwiseAbs()).row(0).transpose();
}

inline void reinitialize_unit(ColumnParams& p, int layer, Index unit, Rng& rng) {
  Dense& incoming = layer == 0 ? p.hidden1 : p.hidden2;
  const double bound = 1.0 / std::sqrt(static_cast<double>(incoming.inputs()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index c = 0; c < incoming.inputs(); ++c) incoming.weight(unit, c) = dist(rng);
  incoming.bias(unit) = 0.0;
  if (layer == 0) {
    p.hidden2.weight.col(unit).setZero();
  } else {
    p.head_a.weight(0, unit) = 0.0;
    p.head_b.weight(0, unit) = 0.0;
    p.discriminator.weight(0, unit) = 0.0;
  }
}

}  // namespace detail

/// Updates utilities from the activations of the latest step, then replaces
/// the lowest-utility mature units.  Incoming weights are redrawn from the
/// initializer (bias reset to 0); outgoing weights are zeroed.
inline std::vector<ReplacedUnit> cbp_step(ModelColumn& column, UtilityState& state, const FeatureCache& cache, Rng& rng) {
  ColumnParams& p = column.mutable_params();
  std::vector<ReplacedUnit> replaced;
  for (int layer = 0; layer < 2; ++layer) {
    LayerUtility& lu = state.layers[static_cast<std::size_t>(layer)];
    const Matrix& act = layer == 0 ? cache.act1 : cache.act2;
    if (act.cols() != lu.utility.size()) throw Error(ErrorCode::shape_mismatch, "utility state does not match column");
    const Vector mean_abs = act.rows() > 0 ? Vector(act.cwiseAbs().colwise().mean().transpose()) : Vector::Zero(act.cols());
    const Vector contribution = mean_abs.cwiseProduct(detail::outgoing_magnitude(p, layer));
    lu.utility = state.decay * lu.utility + (1.0 - state.decay) * contribution;
    for (auto& a : lu.age) ++a;

    std::vector<Index> eligible;
    for (Index u = 0; u < lu.utility.size(); ++u)
      if (lu.age[static_cast<std::size_t>(u)] >= state.maturity_threshold) eligible.push_back(u);
    if (eligible.empty()) continue;
    lu.pending += state.replacement_rate * static_cast<double>(eligible.size());
    const auto count = static_cast<std::size_t>(std::floor(lu.pending));
    if (count == 0) continue;
    lu.pending -= static_cast<double>(count);
    std::stable_sort(eligible.begin(), eligible.end(), [&](Index a, Index b) { return lu.utility(a) < lu.utility(b); });
    for (std::size_t k = 0; k < std::min(count, eligible.size()); ++k) {
      const Index u = eligible[k];
      detail::reinitialize_unit(p, layer, u, rng);
      lu.utility(u) = 0.0;
      lu.age[static_cast<std::size_t>(u)] = 0;
      replaced.push_back({layer, u});
    }
  }
  return replaced;
}

/// Zeroes the Adam moments that belong to the reinitialized units.
inline void reset_moments(OptimizerState& opt, const ColumnParams& p, const std::vector<ReplacedUnit>& units) {
  auto zero = [&](Index k) {
    opt.first_moment(k) = 0.0;
    opt.second_moment(k) = 0.0;
  };
  for (const auto& ru : units) {
    const std::size_t in_layer = ru.layer == 0 ? 0 : 1;
    const Dense& incoming = ru.layer == 0 ? p.hidden1 : p.hidden2;
    const Index in_off = layer_offset(p, in_layer);
    for (Index c = 0; c < incoming.inputs(); ++c) zero(in_off + ru.unit * incoming.inputs() + c);
    zero(in_off + incoming.weight.size() + ru.unit);
    if (ru.layer == 0) {
      const Index off = layer_offset(p, 1);
      for (Index r = 0; r < p.hidden2.outputs(); ++r) zero(off + r * p.hidden2.inputs() + ru.unit);
    } else {
      for (std::size_t head = 2; head < 5; ++head) zero(layer_offset(p, head) + ru.unit);
    }
  }
}

}  // namespace dem
