#pragma once

// Binary classification metrics, percentile-bootstrap intervals and a
// k-fold cross-validation driver.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "synth_domains.hpp"

namespace dem {

enum class Metric { accuracy, sensitivity, specificity, auc };

inline constexpr std::array<Metric, 4> kAllMetrics{Metric::accuracy, Metric::sensitivity, Metric::specificity, Metric::auc};

inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::accuracy: return "accuracy";
    case Metric::sensitivity: return "sensitivity";
    case Metric::specificity: return "specificity";
    case Metric::auc: return "auc";
  }
  return "?";
}

/// Point estimate with its interval.  `defined` is false when a class is
/// absent; the numbers are then zero and must not be read.
struct Estimate {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool defined = true;
};

/// accuracy, sensitivity and specificity are percentages; auc is in [0, 1].
struct MetricsReport {
  Estimate accuracy;
  Estimate sensitivity;
  Estimate specificity;
  Estimate auc;
  std::size_t n = 0;
  std::string dataset;
  std::string phase;
  std::uint64_t seed = 0;

  const Estimate& get(Metric m) const {
    switch (m) {
      case Metric::accuracy: return accuracy;
      case Metric::sensitivity: return sensitivity;
      case Metric::specificity: return specificity;
      case Metric::auc: return auc;
    }
    return accuracy;
  }
  Estimate& get(Metric m) { return const_cast<Estimate&>(std::as_const(*this).get(m)); }
};

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t positives() const { return tp + fn; }
  std::size_t negatives() const { return tn + fp; }
  std::size_t total() const { return tp + fp + tn + fn; }
};

namespace detail {

inline void require_aligned(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::shape_mismatch, "scores and labels differ in length");
  if (scores.empty()) throw Error(ErrorCode::empty_sample_set, "metrics over zero samples");
  for (int y : labels)
    if (y != 0 && y != 1) throw Error(ErrorCode::shape_mismatch, "labels must be 0 or 1");
}

}  // namespace detail

/// Predicted positive iff score >= threshold.
inline Confusion confusion(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5) {
  detail::require_aligned(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i] == 1) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  return c;
}

/// Mann-Whitney AUC with midranks: P(s_pos > s_neg) + 0.5 P(s_pos == s_neg).
inline double auc_rank(std::span<const double> scores, std::span<const int> labels) {
  detail::require_aligned(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) {
        rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorCode::single_class, "AUC needs both classes");
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

/// Metric value; nullopt when undefined for this sample (a class is absent).
inline std::optional<double> metric_value(Metric m, std::span<const double> scores, std::span<const int> labels,
                                          double threshold = 0.5) {
  const Confusion c = confusion(scores, labels, threshold);
  switch (m) {
    case Metric::accuracy:
      return 100.0 * static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    case Metric::sensitivity:
      if (c.positives() == 0) return std::nullopt;
      return 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.positives());
    case Metric::specificity:
      if (c.negatives() == 0) return std::nullopt;
      return 100.0 * static_cast<double>(c.tn) / static_cast<double>(c.negatives());
    case Metric::auc:
      if (c.positives() == 0 || c.negatives() == 0) return std::nullopt;
      return auc_rank(scores, labels);
  }
  return std::nullopt;
}

/// Point estimates only; intervals collapse onto the point.
inline MetricsReport compute_metrics(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5) {
  detail::require_aligned(scores, labels);
  MetricsReport r;
  r.n = scores.size();
  for (Metric m : kAllMetrics) {
    Estimate& e = r.get(m);
    if (auto v = metric_value(m, scores, labels, threshold)) e = {*v, *v, *v, true};
    else e = {0.0, 0.0, 0.0, false};
  }
  return r;
}

/// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorCode::empty_sample_set, "quantile of nothing");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

/// Percentile bootstrap (2.5th, 97.5th) over resamples drawn with replacement
/// within each class.  Each class is put in score order before resampling, so
/// the interval does not depend on the order of the input samples.
inline Interval bootstrap_ci(std::span<const double> scores, std::span<const int> labels, Metric metric,
                             int resamples = 2000, std::uint64_t seed = 0, double threshold = 0.5) {
  detail::require_aligned(scores, labels);
  if (scores.size() < 2) throw Error(ErrorCode::too_few_samples, "bootstrap needs at least two samples");
  if (resamples < 1) throw Error(ErrorCode::invalid_config, "resamples must be >= 1");
  std::array<std::vector<double>, 2> strata;
  for (std::size_t i = 0; i < scores.size(); ++i) strata[static_cast<std::size_t>(labels[i])].push_back(scores[i]);
  const bool needs_both = metric != Metric::accuracy;
  if (needs_both && (strata[0].empty() || strata[1].empty())) throw Error(ErrorCode::single_class, "metric undefined with one class");
  for (auto& s : strata) std::sort(s.begin(), s.end());

  Rng rng = make_rng(seed, 29);
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(resamples));
  std::vector<double> rs(scores.size());
  std::vector<int> rl(scores.size());
  for (int b = 0; b < resamples; ++b) {
    std::size_t k = 0;
    for (int c = 0; c < 2; ++c) {
      const auto& s = strata[static_cast<std::size_t>(c)];
      if (s.empty()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
      for (std::size_t i = 0; i < s.size(); ++i, ++k) {
        rs[k] = s[pick(rng)];
        rl[k] = c;
      }
    }
    values.push_back(*metric_value(metric, rs, rl, threshold));
  }
  std::sort(values.begin(), values.end());
  return {quantile_sorted(values, 0.025), quantile_sorted(values, 0.975)};
}

/// Point estimates plus bootstrap intervals.  Intervals are widened to contain
/// the point when the percentile interval misses it, so lower <= point <= upper.
inline MetricsReport evaluate_with_ci(std::span<const double> scores, std::span<const int> labels, int resamples,
                                      std::uint64_t seed, double threshold = 0.5) {
  MetricsReport r = compute_metrics(scores, labels, threshold);
  r.seed = seed;
  if (scores.size() < 2) return r;
  for (Metric m : kAllMetrics) {
    Estimate& e = r.get(m);
    if (!e.defined) continue;
    const Interval ci = bootstrap_ci(scores, labels, m, resamples, seed, threshold);
    e.lower = std::min(ci.lower, e.point);
    e.upper = std::max(ci.upper, e.point);
  }
  return r;
}

inline MetricsReport evaluate_with_ci(const Vector& scores, std::span<const int> labels, int resamples, std::uint64_t seed) {
  return evaluate_with_ci(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), labels,
                          resamples, seed);
}

/// Mean of each metric over reports; a metric undefined in any report is undefined in the mean.
/// Interval bounds are the means of the per-report bounds.
inline MetricsReport mean_report(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw Error(ErrorCode::empty_sample_set, "mean of zero reports");
  MetricsReport out;
  const double k = static_cast<double>(reports.size());
  for (Metric m : kAllMetrics) {
    Estimate& e = out.get(m);
    e = {0.0, 0.0, 0.0, true};
    for (const auto& r : reports) {
      const Estimate& x = r.get(m);
      e.defined = e.defined && x.defined;
      e.point += x.point / k;
      e.lower += x.lower / k;
      e.upper += x.upper / k;
    }
    if (!e.defined) e = {0.0, 0.0, 0.0, false};
  }
  for (const auto& r : reports) out.n += r.n;
  out.dataset = reports.front().dataset;
  out.phase = reports.front().phase;
  out.seed = reports.front().seed;
  return out;
}

struct CrossValidationResult {
  std::vector<MetricsReport> folds;
  MetricsReport mean;
};

/// Pipeline: (training fold, held-out fold) -> scores for the held-out rows.
using CvPipeline = std::function<Vector(const DomainDataset& train, const DomainDataset& held_out)>;

/// Stratified k-fold over all rows of a labeled dataset.
inline std::vector<int> stratified_folds(const DomainDataset& data, int k, std::uint64_t seed) {
  if (!data.labeled()) throw Error(ErrorCode::degenerate_labels, "cross-validation needs labels");
  if (k < 2) throw Error(ErrorCode::invalid_config, "k must be >= 2");
  if (data.size() < k) throw Error(ErrorCode::too_few_samples, "fewer rows than folds");
  std::array<std::vector<Index>, 2> strata;
  for (Index i = 0; i < data.size(); ++i) strata[static_cast<std::size_t>((*data.labels)[static_cast<std::size_t>(i)])].push_back(i);
  Rng rng = make_rng(seed, 23);
  std::vector<int> folds(static_cast<std::size_t>(data.size()), 0);
  std::size_t dealt = 0;
  for (auto& s : strata) {
    std::shuffle(s.begin(), s.end(), rng);
    for (Index i : s) folds[static_cast<std::size_t>(i)] = static_cast<int>(dealt++ % static_cast<std::size_t>(k));
  }
  return folds;
}

/// Runs the pipeline once per fold in the order given by `fold_order`
/// (default 0..k-1); fold reports are stored by fold index.
inline CrossValidationResult run_cross_validation(const DomainDataset& data, const CvPipeline& pipeline, int k = 5,
                                                  std::uint64_t seed = 0, std::vector<int> fold_order = {}) {
  const std::vector<int> folds = stratified_folds(data, k, seed);
  if (fold_order.empty())
    for (int f = 0; f < k; ++f) fold_order.push_back(f);
  CrossValidationResult result;
  result.folds.resize(static_cast<std::size_t>(k));
  for (int f : fold_order) {
    std::vector<Index> train_rows, held_rows;
    for (std::size_t i = 0; i < folds.size(); ++i) (folds[i] == f ? held_rows : train_rows).push_back(static_cast<Index>(i));
    const DomainDataset held = data.subset(held_rows);
    const Vector scores = pipeline(data.subset(train_rows), held);
    if (scores.size() != held.size()) throw Error(ErrorCode::shape_mismatch, "pipeline returned wrong score count");
    MetricsReport r = compute_metrics(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), *held.labels);
    r.phase = "fold" + std::to_string(f);
    r.seed = seed;
    result.folds[static_cast<std::size_t>(f)] = std::move(r);
  }
  result.mean = mean_report(result.folds);
  result.mean.phase = "mean";
  return result;
}

}  // namespace dem
