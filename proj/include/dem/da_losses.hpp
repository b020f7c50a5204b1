#pragma once

// Domain-adaptation loss terms: discriminator, CORAL, classifier discrepancy
// and classification, plus their weighted combination.

#include <algorithm>
#include <cmath>
#include <span>

#include "nn_core.hpp"

namespace dem {

inline constexpr double kProbEpsilon = 1e-12;

struct LossWeights {
  double w_cls = 1.0;
  double w_disc = 1.0;
  double w_coral = 1.0;
  double w_mcd = 1.0;
  double w_prox = 1e-3;
  double grl_coefficient = 1.0;

  void validate() const {
    for (double w : {w_cls, w_disc, w_coral, w_mcd, w_prox})
      if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::invalid_config, "loss weights must be finite and >= 0");
    if (!(grl_coefficient >= 0.0 && grl_coefficient <= 1.0))
      throw Error(ErrorCode::invalid_config, "grl_coefficient must be in [0, 1]");
  }

  /// Same weights with the three alignment terms switched off.
  LossWeights without_adaptation() const {
    LossWeights w = *this;
    w.w_disc = w.w_coral = w.w_mcd = 0.0;
    return w;
  }
};

enum class Phase { source_pretrain, target_adapt };

inline double clamp_probability(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

/// L_D = -mean(log D_s) - mean(log(1 - D_t)).
inline double discriminator_loss(std::span<const double> d_probs_source, std::span<const double> d_probs_target) {
  if (d_probs_source.empty() || d_probs_target.empty()) throw Error(ErrorCode::empty_batch, "discriminator_loss");
  double s = 0.0, t = 0.0;
  for (double p : d_probs_source) s += std::log(clamp_probability(p));
  for (double p : d_probs_target) t += std::log(1.0 - clamp_probability(p));
  return -s / static_cast<double>(d_probs_source.size()) - t / static_cast<double>(d_probs_target.size());
}

/// Unbiased (1/(n-1)) covariance of mean-centred rows.
inline Matrix covariance(const Matrix& h) {
  const Matrix centered = h.rowwise() - h.colwise().mean();
  return (centered.transpose() * centered) / static_cast<double>(h.rows() - 1);
}

/// L_C = ||Cov(h_s) - Cov(h_t)||_F^2 / (4 d^2).
inline double coral_loss(const Matrix& h_source, const Matrix& h_target) {
  if (h_source.rows() < 2 || h_target.rows() < 2) throw Error(ErrorCode::too_few_samples, "coral_loss needs >= 2 rows per batch");
  if (h_source.cols() != h_target.cols()) throw Error(ErrorCode::shape_mismatch, "coral_loss widths differ");
  const double d = static_cast<double>(h_source.cols());
  return (covariance(h_source) - covariance(h_target)).squaredNorm() / (4.0 * d * d);
}

/// L_P = mean |p_a - p_b| over the same samples.
inline double discrepancy_loss(std::span<const double> probs_a, std::span<const double> probs_b) {
  if (probs_a.empty()) throw Error(ErrorCode::empty_batch, "discrepancy_loss");
  if (probs_a.size() != probs_b.size()) throw Error(ErrorCode::shape_mismatch, "discrepancy_loss lengths differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < probs_a.size(); ++i) acc += std::abs(probs_a[i] - probs_b[i]);
  return acc / static_cast<double>(probs_a.size());
}

/// Mean binary cross-entropy.
inline double classification_loss(std::span<const double> probs, std::span<const int> labels) {
  if (probs.empty()) throw Error(ErrorCode::empty_batch, "classification_loss");
  if (probs.size() != labels.size()) throw Error(ErrorCode::shape_mismatch, "classification_loss lengths differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_probability(probs[i]);
    acc += labels[i] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return -acc / static_cast<double>(probs.size());
}

struct LossTerms {
  double cls = 0.0;
  double disc = 0.0;
  double coral = 0.0;
  double mcd = 0.0;
  double prox = 0.0;
};

/// Weighted sum; the proximal term only counts during target adaptation.
inline double joint_loss(const LossTerms& t, const LossWeights& w, Phase phase) {
  double total = w.w_cls * t.cls + w.w_disc * t.disc + w.w_coral * t.coral + w.w_mcd * t.mcd;
  if (phase == Phase::target_adapt) total += w.w_prox * t.prox;
  return total;
}

}  // namespace dem
