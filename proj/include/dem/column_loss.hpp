#pragma once

// Column-level evaluation of the joint loss with exact analytic gradients.
//
// Rows from the source batch and the target batch pass through the trained
// column.  During target adaptation a frozen reference column supplies the
// source-side features of the discriminator and CORAL terms and anchors the
// proximal term.  With adversarial routing the extractor receives the
// discriminator gradient negated and scaled by grl_coefficient.

#include <vector>

#include "da_losses.hpp"

namespace dem {

struct JointBatch {
  Matrix source_x;
  std::vector<int> source_y;  // empty when the source rows are unlabeled
  Matrix target_x;
  std::vector<int> target_y;  // -1 marks an unlabeled row; empty means all unlabeled
};

enum class GradientRouting { plain, adversarial };

enum class LossTerm { bce, classification, discriminator, coral, discrepancy, prox, joint };

struct ColumnLoss {
  LossTerms terms;
  double total = 0.0;
  ColumnParams gradient;
  FeatureCache cache;
};

namespace detail {

inline Matrix coral_input_gradient(const Matrix& h, const Matrix& g) {
  const Matrix centered = h.rowwise() - h.colwise().mean();
  return (2.0 / static_cast<double>(h.rows() - 1)) * centered * g;
}

}  // namespace detail

inline ColumnLoss evaluate_column_loss(const ModelColumn& column, const JointBatch& batch, const LossWeights& w,
                                       Phase phase, const ModelColumn* reference, GradientRouting routing,
                                       bool with_gradient = true) {
  const ColumnParams& p = column.params();
  const Index ns = batch.source_x.rows();
  const Index nt = batch.target_x.rows();
  const Index n = ns + nt;
  if (n == 0) throw Error(ErrorCode::empty_batch, "joint batch has no rows");
  if (!batch.source_y.empty() && static_cast<Index>(batch.source_y.size()) != ns)
    throw Error(ErrorCode::shape_mismatch, "source labels length");
  if (!batch.target_y.empty() && static_cast<Index>(batch.target_y.size()) != nt)
    throw Error(ErrorCode::shape_mismatch, "target labels length");
  const bool use_reference = reference != nullptr && phase == Phase::target_adapt;

  Matrix x(n, p.hidden1.inputs());
  if (ns > 0) {
    if (batch.source_x.cols() != x.cols()) throw Error(ErrorCode::shape_mismatch, "source batch width");
    x.topRows(ns) = batch.source_x;
  }
  if (nt > 0) {
    if (batch.target_x.cols() != x.cols()) throw Error(ErrorCode::shape_mismatch, "target batch width");
    x.bottomRows(nt) = batch.target_x;
  }

  ColumnLoss out;
  out.cache = forward_features_cached(column, x);
  const Matrix& h = out.cache.act2;
  const Vector za = forward_logit(p.head_a, h);
  const Vector zb = forward_logit(p.head_b, h);

  Vector dza = Vector::Zero(n), dzb = Vector::Zero(n);
  Vector dzd_param = Vector::Zero(n);   // discriminator head, trained rows
  Vector dzd_hidden = Vector::Zero(n);  // routed into the extractor
  Matrix grad_h = Matrix::Zero(n, h.cols());
  if (with_gradient) out.gradient = ColumnParams::zeros(p.shape());

  if (w.w_cls > 0.0) {
    std::vector<std::pair<Index, int>> rows;
    for (Index i = 0; i < ns && !batch.source_y.empty(); ++i) rows.emplace_back(i, batch.source_y[static_cast<std::size_t>(i)]);
    for (Index i = 0; i < nt && !batch.target_y.empty(); ++i)
      if (batch.target_y[static_cast<std::size_t>(i)] >= 0) rows.emplace_back(ns + i, batch.target_y[static_cast<std::size_t>(i)]);
    if (rows.empty()) throw Error(ErrorCode::empty_batch, "no labeled rows for the classification term");
    const double m = static_cast<double>(rows.size());
    double loss = 0.0;
    for (auto [r, y] : rows) {
      loss += 0.5 * (softplus(za(r)) - y * za(r)) + 0.5 * (softplus(zb(r)) - y * zb(r));
      dza(r) += w.w_cls * 0.5 * (sigmoid(za(r)) - y) / m;
      dzb(r) += w.w_cls * 0.5 * (sigmoid(zb(r)) - y) / m;
    }
    out.terms.cls = loss / m;
  }

  Matrix h_ref_source;
  if (use_reference && (w.w_disc > 0.0 || w.w_coral > 0.0)) h_ref_source = forward_features(*reference, batch.source_x);

  if (w.w_disc > 0.0) {
    if (ns == 0 || nt == 0) throw Error(ErrorCode::empty_batch, "discriminator term needs source and target rows");
    const double route = routing == GradientRouting::adversarial ? -w.grl_coefficient : 1.0;
    const Vector zt = forward_logit(p.discriminator, h.bottomRows(nt));
    double loss_t = 0.0;
    for (Index i = 0; i < nt; ++i) {
      loss_t += softplus(zt(i));
      const double g = w.w_disc * sigmoid(zt(i)) / static_cast<double>(nt);
      dzd_param(ns + i) = g;
      dzd_hidden(ns + i) = route * g;
    }
    double loss_s = 0.0;
    if (use_reference) {
      const Vector zs = forward_logit(p.discriminator, h_ref_source);
      Vector dzs(ns);
      for (Index i = 0; i < ns; ++i) {
        loss_s += softplus(-zs(i));
        dzs(i) = w.w_disc * (sigmoid(zs(i)) - 1.0) / static_cast<double>(ns);
      }
      if (with_gradient) backward_head(p.discriminator, h_ref_source, dzs, out.gradient.discriminator, nullptr);
    } else {
      const Vector zs = forward_logit(p.discriminator, h.topRows(ns));
      for (Index i = 0; i < ns; ++i) {
        loss_s += softplus(-zs(i));
        const double g = w.w_disc * (sigmoid(zs(i)) - 1.0) / static_cast<double>(ns);
        dzd_param(i) = g;
        dzd_hidden(i) = route * g;
      }
    }
    out.terms.disc = loss_s / static_cast<double>(ns) + loss_t / static_cast<double>(nt);
  }

  if (w.w_coral > 0.0) {
    const Matrix hs = use_reference ? h_ref_source : Matrix(h.topRows(ns));
    const Matrix ht = h.bottomRows(nt);
    out.terms.coral = coral_loss(hs, ht);
    if (with_gradient) {
      const double d = static_cast<double>(h.cols());
      const Matrix diff = covariance(hs) - covariance(ht);
      const Matrix g = (w.w_coral / (2.0 * d * d)) * diff;
      grad_h.bottomRows(nt) -= detail::coral_input_gradient(ht, g);
      if (!use_reference) grad_h.topRows(ns) += detail::coral_input_gradient(hs, g);
    }
  }

  if (w.w_mcd > 0.0) {
    if (nt == 0) throw Error(ErrorCode::empty_batch, "discrepancy term needs target rows");
    double loss = 0.0;
    for (Index i = 0; i < nt; ++i) {
      const Index r = ns + i;
      const double pa = sigmoid(za(r)), pb = sigmoid(zb(r));
      const double diff = pa - pb;
      loss += std::abs(diff);
      const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      dza(r) += w.w_mcd * sign * pa * (1.0 - pa) / static_cast<double>(nt);
      dzb(r) -= w.w_mcd * sign * pb * (1.0 - pb) / static_cast<double>(nt);
    }
    out.terms.mcd = loss / static_cast<double>(nt);
  }

  Vector prox_gradient;
  if (phase == Phase::target_adapt && reference != nullptr && w.w_prox > 0.0) {
    const Vector diff = flatten(p) - flatten(reference->params());
    out.terms.prox = diff.squaredNorm();
    if (with_gradient) prox_gradient = 2.0 * w.w_prox * diff;
  }

  out.total = joint_loss(out.terms, w, phase);
  if (!std::isfinite(out.total)) throw Error(ErrorCode::non_finite_loss, "joint loss is not finite");

  if (with_gradient) {
    backward_head(p.head_a, h, dza, out.gradient.head_a, &grad_h);
    backward_head(p.head_b, h, dzb, out.gradient.head_b, &grad_h);
    out.gradient.discriminator.weight.row(0) += dzd_param.transpose() * h;
    out.gradient.discriminator.bias(0) += dzd_param.sum();
    grad_h += dzd_hidden * p.discriminator.weight.row(0);
    backward_features(column, out.cache, grad_h, out.gradient);
    if (prox_gradient.size() > 0) unflatten(flatten(out.gradient) + prox_gradient, out.gradient);
  }
  return out;
}

/// Weights that isolate a single term (plain BCE is the classification term on source rows).
inline LossWeights isolate(LossTerm term) {
  LossWeights w{0.0, 0.0, 0.0, 0.0, 0.0, 1.0};
  switch (term) {
    case LossTerm::bce:
    case LossTerm::classification: w.w_cls = 1.0; break;
    case LossTerm::discriminator: w.w_disc = 1.0; break;
    case LossTerm::coral: w.w_coral = 1.0; break;
    case LossTerm::discrepancy: w.w_mcd = 1.0; break;
    case LossTerm::prox: w.w_prox = 1.0; break;
    case LossTerm::joint: w = LossWeights{}; break;
  }
  return w;
}

/// Exact gradient of one loss term (or the unrouted joint loss) with respect to every column parameter.
inline ColumnParams gradient_of(LossTerm term, const ModelColumn& column, const JointBatch& batch,
                                const ModelColumn* reference = nullptr) {
  const Phase phase = reference ? Phase::target_adapt : Phase::source_pretrain;
  return evaluate_column_loss(column, batch, isolate(term), phase, reference, GradientRouting::plain).gradient;
}

inline double loss_value(LossTerm term, const ModelColumn& column, const JointBatch& batch,
                         const ModelColumn* reference = nullptr) {
  const Phase phase = reference ? Phase::target_adapt : Phase::source_pretrain;
  return evaluate_column_loss(column, batch, isolate(term), phase, reference, GradientRouting::plain, false).total;
}

}  // namespace dem
