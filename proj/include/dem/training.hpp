#pragma once

// Minibatch training loops built on evaluate_column_loss + adam_step:
// supervised BCE training with early stopping, source-led joint pretraining,
// and fixed-budget target adaptation with continual backpropagation.

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "cbp.hpp"
#include "column_loss.hpp"
#include "synth_domains.hpp"

namespace dem {

struct TrainConfig {
  int max_epochs = 100;
  int batch_size = 64;
  int patience = 20;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int epochs_run = 0;
  int best_epoch = 0;  // 1-based
  bool stopped_early = false;
};

namespace detail {

inline Matrix gather_rows(const Matrix& x, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = x.row(rows[i]);
  return out;
}

inline std::vector<int> gather(const std::vector<int>& v, std::span<const Index> rows) {
  std::vector<int> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = v[static_cast<std::size_t>(rows[i])];
  return out;
}

inline std::vector<Index> iota_rows(Index n) {
  std::vector<Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Index{0});
  return rows;
}

/// Endless shuffled cycle over row indices.
class RowCycler {
 public:
  RowCycler(std::vector<Index> rows, Rng& rng) : rows_(std::move(rows)), rng_(&rng) { reshuffle(); }

  std::vector<Index> next(std::size_t count) {
    std::vector<Index> out;
    out.reserve(count);
    while (out.size() < count && !rows_.empty()) {
      if (pos_ == rows_.size()) reshuffle();
      out.push_back(rows_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::shuffle(rows_.begin(), rows_.end(), *rng_);
    pos_ = 0;
  }
  std::vector<Index> rows_;
  Rng* rng_;
  std::size_t pos_ = 0;
};

inline void require_two_classes(const std::vector<int>& labels) {
  const bool has0 = std::find(labels.begin(), labels.end(), 0) != labels.end();
  const bool has1 = std::find(labels.begin(), labels.end(), 1) != labels.end();
  if (!has0 || !has1) throw Error(ErrorCode::degenerate_labels, "training labels contain a single class");
}

}  // namespace detail

/// Mean two-head BCE of the column on a labeled dataset.
inline double validation_loss(const ModelColumn& column, const DomainDataset& data) {
  if (!data.labeled()) throw Error(ErrorCode::degenerate_labels, "validation data must be labeled");
  JointBatch b{data.features, *data.labels, Matrix(0, data.dim()), {}};
  return evaluate_column_loss(column, b, isolate(LossTerm::bce), Phase::source_pretrain, nullptr,
                              GradientRouting::plain, false)
      .total;
}

inline double accuracy(const ModelColumn& column, const DomainDataset& data) {
  if (!data.labeled()) throw Error(ErrorCode::degenerate_labels, "accuracy needs labels");
  const Vector p = predict_probabilities(column, data.features);
  Index correct = 0;
  for (Index i = 0; i < p.size(); ++i) correct += ((p(i) > 0.5 ? 1 : 0) == (*data.labels)[static_cast<std::size_t>(i)]);
  return static_cast<double>(correct) / static_cast<double>(p.size());
}

/// Shared early-stopping driver: `epoch_fn` trains one epoch and returns its mean loss.
template <typename EpochFn>
TrainHistory run_with_early_stopping(ModelColumn& column, const DomainDataset& val, const TrainConfig& cfg,
                                     EpochFn&& epoch_fn) {
  TrainHistory hist;
  ColumnParams best = column.params();
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    hist.train_loss.push_back(epoch_fn());
    const double v = validation_loss(column, val);
    hist.val_loss.push_back(v);
    hist.epochs_run = epoch;
    if (v < best_val) {
      best_val = v;
      best = column.params();
      hist.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      hist.stopped_early = true;
      break;
    }
  }
  column.mutable_params() = best;
  return hist;
}

/// Minimizes two-head BCE; the column ends at its best-validation-loss parameters.
inline TrainHistory train_supervised(ModelColumn& column, const DomainDataset& train, const DomainDataset& val,
                                     const TrainConfig& cfg) {
  if (column.frozen()) throw Error(ErrorCode::frozen_column, "train_supervised on a frozen column");
  if (!train.labeled()) throw Error(ErrorCode::degenerate_labels, "training data must be labeled");
  detail::require_two_classes(*train.labels);
  Rng rng = make_rng(cfg.seed, 101);
  OptimizerState opt = OptimizerState::for_size(column.params().size(), cfg.learning_rate);
  std::vector<Index> rows = detail::iota_rows(train.size());
  const LossWeights w = isolate(LossTerm::bce);
  return run_with_early_stopping(column, val, cfg, [&] {
    std::shuffle(rows.begin(), rows.end(), rng);
    double total = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(rows.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const Index> idx(rows.data() + start, end - start);
      JointBatch b{detail::gather_rows(train.features, idx), detail::gather(*train.labels, idx), Matrix(0, train.dim()), {}};
      auto res = evaluate_column_loss(column, b, w, Phase::source_pretrain, nullptr, GradientRouting::plain);
      adam_step(column, res.gradient, opt);
      total += res.total;
      ++steps;
    }
    return total / std::max(steps, 1);
  });
}

/// Source-led joint pretraining: labeled source batches paired with unlabeled
/// target batches, adversarial routing, early stopping on source validation BCE.
inline TrainHistory train_source_led(ModelColumn& column, const DomainDataset& train, const DomainDataset& val,
                                     const Matrix& target_x, const LossWeights& weights, const TrainConfig& cfg) {
  if (column.frozen()) throw Error(ErrorCode::frozen_column, "pretraining a frozen column");
  if (!train.labeled()) throw Error(ErrorCode::degenerate_labels, "training data must be labeled");
  detail::require_two_classes(*train.labels);
  Rng rng = make_rng(cfg.seed, 102);
  OptimizerState opt = OptimizerState::for_size(column.params().size(), cfg.learning_rate);
  std::vector<Index> rows = detail::iota_rows(train.size());
  detail::RowCycler target_rows(detail::iota_rows(target_x.rows()), rng);
  const bool needs_target = weights.w_disc > 0.0 || weights.w_coral > 0.0 || weights.w_mcd > 0.0;
  return run_with_early_stopping(column, val, cfg, [&] {
    std::shuffle(rows.begin(), rows.end(), rng);
    double total = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(rows.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const Index> idx(rows.data() + start, end - start);
      JointBatch b{detail::gather_rows(train.features, idx), detail::gather(*train.labels, idx), Matrix(0, train.dim()), {}};
      if (needs_target) b.target_x = detail::gather_rows(target_x, target_rows.next(static_cast<std::size_t>(cfg.batch_size)));
      // CORAL needs two rows per side.
      if (b.source_x.rows() < 2) continue;
      auto res = evaluate_column_loss(column, b, weights, Phase::source_pretrain, nullptr, GradientRouting::adversarial);
      adam_step(column, res.gradient, opt);
      total += res.total;
      ++steps;
    }
    return total / std::max(steps, 1);
  });
}

struct AdaptOptions {
  int epochs = 5;
  int batch_size = 64;
  bool use_cbp = true;
  bool use_source = true;  // false: target rows only, no source batches
};

/// Trains `column` for a fixed number of epochs over the labeled target rows
/// (`target_labels[i] >= 0`).  Every step pairs them with a source batch and an
/// unlabeled batch from the whole target pool.  Returns the mean step loss.
inline double adapt_column(ModelColumn& column, OptimizerState& opt, UtilityState* utility, const DomainDataset& source,
                           const Matrix& target_x, const std::vector<int>& target_labels, const ModelColumn* reference,
                           const LossWeights& weights, const AdaptOptions& options, Rng& rng) {
  if (column.frozen()) throw Error(ErrorCode::frozen_column, "adapting a frozen column");
  if (static_cast<Index>(target_labels.size()) != target_x.rows()) throw Error(ErrorCode::shape_mismatch, "target labels length");
  std::vector<Index> labeled;
  for (std::size_t i = 0; i < target_labels.size(); ++i)
    if (target_labels[i] >= 0) labeled.push_back(static_cast<Index>(i));
  if (labeled.empty()) throw Error(ErrorCode::empty_selection, "no labeled target rows to adapt on");

  const bool alignment = options.use_source && (weights.w_disc > 0.0 || weights.w_coral > 0.0);
  const bool needs_pool = alignment || weights.w_mcd > 0.0;
  detail::RowCycler source_rows(detail::iota_rows(source.size()), rng);
  detail::RowCycler pool_rows(detail::iota_rows(target_x.rows()), rng);
  LossWeights w = weights;
  if (!options.use_source) w.w_disc = w.w_coral = 0.0;

  double total = 0.0;
  int steps = 0;
  const auto bs = static_cast<std::size_t>(options.batch_size);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(labeled.begin(), labeled.end(), rng);
    for (std::size_t start = 0; start < labeled.size(); start += bs) {
      const std::size_t end = std::min(labeled.size(), start + bs);
      std::vector<Index> trows(labeled.begin() + static_cast<std::ptrdiff_t>(start), labeled.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<int> ty = detail::gather(target_labels, trows);
      if (needs_pool) {
        for (Index r : pool_rows.next(bs)) {
          trows.push_back(r);
          ty.push_back(-1);
        }
      }
      JointBatch b;
      b.target_x = detail::gather_rows(target_x, trows);
      b.target_y = std::move(ty);
      if (options.use_source) {
        const auto srows = source_rows.next(bs);
        b.source_x = detail::gather_rows(source.features, srows);
        b.source_y = detail::gather(*source.labels, srows);
      } else {
        b.source_x = Matrix(0, target_x.cols());
      }
      auto res = evaluate_column_loss(column, b, w, Phase::target_adapt, reference, GradientRouting::adversarial);
      adam_step(column, res.gradient, opt);
      if (utility && options.use_cbp) {
        const auto replaced = cbp_step(column, *utility, res.cache, rng);
        if (!replaced.empty()) reset_moments(opt, column.params(), replaced);
      }
      total += res.total;
      ++steps;
    }
  }
  return total / std::max(steps, 1);
}

}  // namespace dem
