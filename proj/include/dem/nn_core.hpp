#pragma once

// Compact differentiable model column: a two-layer ReLU feature extractor
// shared by two logistic classifier heads and a domain discriminator head.
// Gradients are written by hand; Adam works on flattened parameter vectors.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "random.hpp"

namespace dem {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Affine map y = x W^T + b applied row-wise.
struct Dense {
  Matrix weight;  // outputs x inputs
  Vector bias;    // outputs

  Index inputs() const { return weight.cols(); }
  Index outputs() const { return weight.rows(); }
  Index size() const { return weight.size() + bias.size(); }

  Matrix forward(const Matrix& x) const {
    if (x.cols() != inputs()) throw Error(ErrorCode::shape_mismatch, "dense layer input width");
    Matrix y = x * weight.transpose();
    y.rowwise() += bias.transpose();
    return y;
  }

  static Dense zeros(Index in, Index out) { return {Matrix::Zero(out, in), Vector::Zero(out)}; }

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  static Dense uniform(Index in, Index out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Dense layer = zeros(in, out);
    for (Index r = 0; r < out; ++r)
      for (Index c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
    for (Index r = 0; r < out; ++r) layer.bias(r) = dist(rng);
    return layer;
  }
};

struct ColumnShape {
  Index input = 0;
  Index hidden1 = 64;
  Index hidden2 = 32;

  bool operator==(const ColumnShape&) const = default;
};

/// Parameters in canonical order: extractor layers, classifier a, classifier b, discriminator.
struct ColumnParams {
  Dense hidden1, hidden2, head_a, head_b, discriminator;

  std::array<Dense*, 5> layers() { return {&hidden1, &hidden2, &head_a, &head_b, &discriminator}; }
  std::array<const Dense*, 5> layers() const { return {&hidden1, &hidden2, &head_a, &head_b, &discriminator}; }

  ColumnShape shape() const { return {hidden1.inputs(), hidden1.outputs(), hidden2.outputs()}; }

  Index size() const {
    Index n = 0;
    for (const Dense* l : layers()) n += l->size();
    return n;
  }

  static ColumnParams zeros(const ColumnShape& s) {
    return {Dense::zeros(s.input, s.hidden1), Dense::zeros(s.hidden1, s.hidden2), Dense::zeros(s.hidden2, 1),
            Dense::zeros(s.hidden2, 1), Dense::zeros(s.hidden2, 1)};
  }

  static ColumnParams random(const ColumnShape& s, Rng& rng) {
    ColumnParams p;
    p.hidden1 = Dense::uniform(s.input, s.hidden1, rng);
    p.hidden2 = Dense::uniform(s.hidden1, s.hidden2, rng);
    p.head_a = Dense::uniform(s.hidden2, 1, rng);
    p.head_b = Dense::uniform(s.hidden2, 1, rng);
    p.discriminator = Dense::uniform(s.hidden2, 1, rng);
    return p;
  }
};

/// Weights of each layer row-major, then its bias.
inline Vector flatten(const ColumnParams& p) {
  Vector flat(p.size());
  Index k = 0;
  for (const Dense* l : p.layers()) {
    for (Index r = 0; r < l->weight.rows(); ++r)
      for (Index c = 0; c < l->weight.cols(); ++c) flat(k++) = l->weight(r, c);
    for (Index r = 0; r < l->bias.size(); ++r) flat(k++) = l->bias(r);
  }
  return flat;
}

inline void unflatten(const Vector& flat, ColumnParams& p) {
  if (flat.size() != p.size()) throw Error(ErrorCode::shape_mismatch, "flat parameter length");
  Index k = 0;
  for (Dense* l : p.layers()) {
    for (Index r = 0; r < l->weight.rows(); ++r)
      for (Index c = 0; c < l->weight.cols(); ++c) l->weight(r, c) = flat(k++);
    for (Index r = 0; r < l->bias.size(); ++r) l->bias(r) = flat(k++);
  }
}

/// Offset of the first entry of layer `layer` (canonical order) in the flat vector.
inline Index layer_offset(const ColumnParams& p, std::size_t layer) {
  Index off = 0;
  auto ls = p.layers();
  for (std::size_t i = 0; i < layer; ++i) off += ls[i]->size();
  return off;
}

class ModelColumn {
 public:
  ModelColumn() = default;
  explicit ModelColumn(ColumnParams params) : params_(std::move(params)) {}

  static ModelColumn initialized(const ColumnShape& shape, Rng& rng) { return ModelColumn(ColumnParams::random(shape, rng)); }

  const ColumnParams& params() const { return params_; }

  /// Throws FrozenColumn once the column has been frozen.
  ColumnParams& mutable_params() {
    if (frozen_) throw Error(ErrorCode::frozen_column, "attempt to modify a frozen column");
    return params_;
  }

  ColumnShape shape() const { return params_.shape(); }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  /// Unfrozen deep copy.
  ModelColumn thawed_copy() const { return ModelColumn(params_); }

 private:
  ColumnParams params_;
  bool frozen_ = false;
};

struct FeatureCache {
  Matrix input, pre1, act1, pre2, act2;
};

inline FeatureCache forward_features_cached(const ModelColumn& column, const Matrix& x) {
  const auto& p = column.params();
  if (x.cols() != p.hidden1.inputs()) throw Error(ErrorCode::shape_mismatch, "feature batch width does not match column input");
  FeatureCache c;
  c.input = x;
  c.pre1 = p.hidden1.forward(x);
  c.act1 = c.pre1.cwiseMax(0.0);
  c.pre2 = p.hidden2.forward(c.act1);
  c.act2 = c.pre2.cwiseMax(0.0);
  return c;
}

inline Matrix forward_features(const ModelColumn& column, const Matrix& x) { return forward_features_cached(column, x).act2; }

inline Vector forward_logit(const Dense& head, const Matrix& hidden) {
  if (head.outputs() != 1) throw Error(ErrorCode::shape_mismatch, "head must have one output");
  return head.forward(hidden).col(0);
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Vector sigmoid(const Vector& z) { return z.unaryExpr([](double v) { return sigmoid(v); }); }

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

/// Mean of the two classifier probabilities: the column's prediction.
inline Vector predict_probabilities(const ModelColumn& column, const Matrix& x) {
  const Matrix h = forward_features(column, x);
  const Vector pa = sigmoid(forward_logit(column.params().head_a, h));
  const Vector pb = sigmoid(forward_logit(column.params().head_b, h));
  return 0.5 * (pa + pb);
}

struct HeadProbabilities {
  Vector a, b;
  Vector mean() const { return 0.5 * (a + b); }
};

inline HeadProbabilities predict_heads(const ModelColumn& column, const Matrix& x) {
  const Matrix h = forward_features(column, x);
  return {sigmoid(forward_logit(column.params().head_a, h)), sigmoid(forward_logit(column.params().head_b, h))};
}

/// Accumulates the gradient of a head given dL/dlogit; optionally adds dL/dhidden.
inline void backward_head(const Dense& head, const Matrix& hidden, const Vector& grad_logit, Dense& grad,
                          Matrix* grad_hidden) {
  grad.weight.row(0) += grad_logit.transpose() * hidden;
  grad.bias(0) += grad_logit.sum();
  if (grad_hidden) *grad_hidden += grad_logit * head.weight.row(0);
}

/// Backpropagates dL/d(extractor output) through both ReLU layers.
inline void backward_features(const ModelColumn& column, const FeatureCache& cache, const Matrix& grad_act2,
                              ColumnParams& grads) {
  const auto& p = column.params();
  const Matrix g2 = grad_act2.cwiseProduct((cache.pre2.array() > 0.0).cast<double>().matrix());
  grads.hidden2.weight += g2.transpose() * cache.act1;
  grads.hidden2.bias += g2.colwise().sum().transpose();
  const Matrix g1 = (g2 * p.hidden2.weight).cwiseProduct((cache.pre1.array() > 0.0).cast<double>().matrix());
  grads.hidden1.weight += g1.transpose() * cache.input;
  grads.hidden1.bias += g1.colwise().sum().transpose();
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

/// Adam accumulators over a flat parameter vector.
struct OptimizerState {
  Vector first_moment;
  Vector second_moment;
  std::uint64_t step_count = 0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerState for_size(Index n, double learning_rate = 1e-4) {
    OptimizerState s;
    s.first_moment = Vector::Zero(n);
    s.second_moment = Vector::Zero(n);
    s.learning_rate = learning_rate;
    return s;
  }
};

/// One bias-corrected Adam update in place.
inline void adam_step(Eigen::Ref<Vector> params, const Vector& grads, OptimizerState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw Error(ErrorCode::shape_mismatch, "adam_step shapes");
  if (!grads.allFinite()) throw Error(ErrorCode::non_finite_gradient, "gradient contains NaN or Inf");
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

inline void adam_step(ModelColumn& column, const ColumnParams& grads, OptimizerState& state) {
  ColumnParams& p = column.mutable_params();
  Vector flat = flatten(p);
  adam_step(flat, flatten(grads), state);
  unflatten(flat, p);
}

/// Order-sensitive FNV-1a hash over the raw bytes of every parameter.
inline std::uint64_t parameter_hash(const ColumnParams& p) {
  const Vector flat = flatten(p);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(flat.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(flat.size()) * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace dem
