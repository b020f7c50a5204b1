#pragma once

// Synthetic source/target domain pairs with a controllable feature and label
// shift, median-split label binarization and stratified split planning.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "random.hpp"

namespace dem {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class Domain { source, target };

inline std::string_view to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

struct DomainDataset {
  Matrix features;                                   // n_samples x d
  std::optional<std::vector<int>> labels;            // {0,1}
  std::optional<std::vector<double>> continuous_outcome;
  Domain domain = Domain::source;
  std::vector<std::int64_t> sample_ids;

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }
  bool labeled() const { return labels.has_value(); }

  /// Rows in the given order; ids, labels and outcomes follow their rows.
  DomainDataset subset(std::span<const Index> rows) const {
    DomainDataset out;
    out.domain = domain;
    out.features.resize(static_cast<Index>(rows.size()), dim());
    out.sample_ids.reserve(rows.size());
    if (labels) out.labels.emplace();
    if (continuous_outcome) out.continuous_outcome.emplace();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Index r = rows[i];
      if (r < 0 || r >= size()) throw Error(ErrorCode::index_out_of_range, "subset row " + std::to_string(r));
      out.features.row(static_cast<Index>(i)) = features.row(r);
      out.sample_ids.push_back(sample_ids[static_cast<std::size_t>(r)]);
      if (labels) out.labels->push_back((*labels)[static_cast<std::size_t>(r)]);
      if (continuous_outcome) out.continuous_outcome->push_back((*continuous_outcome)[static_cast<std::size_t>(r)]);
    }
    return out;
  }

  DomainDataset without_labels() const {
    DomainDataset out = *this;
    out.labels.reset();
    return out;
  }
};

/// Shift parameters for one source/target pair.
///
/// Both domains are two-component Gaussian mixtures (unit isotropic noise).
/// Class 0 is centred at `class0_offset` on axis 0 and class 1 a further
/// `class_separation` along it.  The target is drawn the same way and then
/// rotated by `rotation_angle` in the (f0, f1) plane about the origin.
///
/// Under a quarter turn the two ways of matching target clusters to source
/// clusters have equal squared transport cost whatever the class means are.
/// Keeping class 0 near the pivot makes the correct matching the cheaper one
/// in unsquared distance, which is what unsupervised alignment follows.
struct ShiftSpec {
  std::int64_t d = 10;
  std::int64_t n_source = 2000;
  std::int64_t n_target = 2000;
  double rotation_angle = 0.0;
  double class_prior_target = 0.5;
  double label_flip_rate = 0.0;
  double noise_sigma = 0.5;
  std::uint64_t seed = 42;
  double class_separation = 8.0;
  double class0_offset = 2.0;

  void validate() const {
    auto fail = [](const std::string& why) { throw Error(ErrorCode::invalid_spec, why); };
    if (d < 2) fail("d must be >= 2");
    if (n_source < 2 || n_target < 2) fail("sample counts must be >= 2");
    if (!(rotation_angle >= 0.0 && rotation_angle < 2.0 * std::numbers::pi)) fail("rotation_angle must be in [0, 2pi)");
    if (!(class_prior_target > 0.0 && class_prior_target < 1.0)) fail("class_prior_target must be in (0, 1)");
    if (!(label_flip_rate >= 0.0 && label_flip_rate < 1.0)) fail("label_flip_rate must be in [0, 1)");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma must be >= 0");
    if (!(class_separation > 0.0) || !std::isfinite(class_separation)) fail("class_separation must be > 0");
    if (!std::isfinite(class0_offset)) fail("class0_offset must be finite");
  }
};

/// The rotation benchmark: target rotated by pi/2 with 10% of target labels flipped.
inline ShiftSpec benchmark_spec(std::uint64_t seed = 42) {
  ShiftSpec s;
  s.rotation_angle = std::numbers::pi / 2.0;
  s.label_flip_rate = 0.1;
  s.seed = seed;
  return s;
}

/// Label 1 iff the outcome is strictly above the median; ties go to 0.
inline std::vector<int> median_split_labels(std::span<const double> outcome) {
  if (outcome.size() < 2) throw Error(ErrorCode::degenerate_labels, "median split needs at least 2 outcomes");
  std::vector<double> sorted(outcome.begin(), outcome.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::vector<int> labels(n);
  std::size_t ones = 0;
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = outcome[i] > median ? 1 : 0;
    ones += static_cast<std::size_t>(labels[i]);
  }
  if (ones == 0 || ones == n) throw Error(ErrorCode::degenerate_labels, "median split produced a single class");
  return labels;
}

namespace detail {

struct MixtureDraw {
  Matrix features;
  std::vector<double> outcome;
};

// Draws the unrotated mixture.  The outcome is the signed distance to the
// class boundary (midway between the means) plus Gaussian noise.
inline MixtureDraw draw_mixture(const ShiftSpec& spec, Index n, double prior_one, Rng& rng) {
  MixtureDraw out;
  out.features.resize(n, spec.d);
  out.outcome.resize(static_cast<std::size_t>(n));
  const double boundary = spec.class0_offset + 0.5 * spec.class_separation;
  for (Index i = 0; i < n; ++i) {
    const bool one = uniform01(rng) < prior_one;
    for (Index j = 0; j < spec.d; ++j) out.features(i, j) = standard_normal(rng);
    out.features(i, 0) += spec.class0_offset + (one ? spec.class_separation : 0.0);
    out.outcome[static_cast<std::size_t>(i)] = out.features(i, 0) - boundary + spec.noise_sigma * standard_normal(rng);
  }
  return out;
}

}  // namespace detail

/// Returns (source, target).  Target labels are kept for evaluation only.
inline std::pair<DomainDataset, DomainDataset> generate_domain_pair(const ShiftSpec& spec) {
  spec.validate();
  Rng source_rng = make_rng(spec.seed, 1);
  Rng target_rng = make_rng(spec.seed, 2);
  Rng flip_rng = make_rng(spec.seed, 3);

  DomainDataset source;
  source.domain = Domain::source;
  auto src = detail::draw_mixture(spec, spec.n_source, 0.5, source_rng);
  source.features = std::move(src.features);
  source.labels = median_split_labels(src.outcome);
  source.continuous_outcome = std::move(src.outcome);
  source.sample_ids.resize(static_cast<std::size_t>(spec.n_source));
  std::iota(source.sample_ids.begin(), source.sample_ids.end(), std::int64_t{0});

  DomainDataset target;
  target.domain = Domain::target;
  auto tgt = detail::draw_mixture(spec, spec.n_target, spec.class_prior_target, target_rng);
  std::vector<int> labels(tgt.outcome.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = tgt.outcome[i] > 0.0 ? 1 : 0;

  const auto n_flip = static_cast<std::size_t>(std::llround(spec.label_flip_rate * static_cast<double>(spec.n_target)));
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), flip_rng);
  for (std::size_t k = 0; k < n_flip; ++k) labels[order[k]] = 1 - labels[order[k]];

  const double c = std::cos(spec.rotation_angle);
  const double s = std::sin(spec.rotation_angle);
  for (Index i = 0; i < spec.n_target; ++i) {
    const double x0 = tgt.features(i, 0);
    const double x1 = tgt.features(i, 1);
    tgt.features(i, 0) = c * x0 - s * x1;
    tgt.features(i, 1) = s * x0 + c * x1;
  }
  target.features = std::move(tgt.features);
  target.labels = std::move(labels);
  target.continuous_outcome = std::move(tgt.outcome);
  target.sample_ids.resize(static_cast<std::size_t>(spec.n_target));
  std::iota(target.sample_ids.begin(), target.sample_ids.end(), spec.n_source);
  return {std::move(source), std::move(target)};
}

struct SplitPlan {
  std::vector<Index> train_indices;
  std::vector<Index> val_indices;
  std::vector<Index> test_indices;
  std::vector<int> fold_assignments;  // per dataset row; -1 for test rows

  int k_folds() const {
    int k = 0;
    for (int f : fold_assignments) k = std::max(k, f + 1);
    return k;
  }

  std::vector<Index> fold(int f) const {
    std::vector<Index> rows;
    for (std::size_t i = 0; i < fold_assignments.size(); ++i)
      if (fold_assignments[i] == f) rows.push_back(static_cast<Index>(i));
    return rows;
  }

  /// Non-test rows outside fold f.
  std::vector<Index> outside_fold(int f) const {
    std::vector<Index> rows;
    for (std::size_t i = 0; i < fold_assignments.size(); ++i)
      if (fold_assignments[i] >= 0 && fold_assignments[i] != f) rows.push_back(static_cast<Index>(i));
    return rows;
  }
};

/// Stratified hold-out + k-fold plan.  Validation is fold 0, training the rest.
inline SplitPlan make_split(const DomainDataset& dataset, double test_fraction, int k_folds, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw Error(ErrorCode::invalid_spec, "test_fraction must be in (0, 1)");
  if (k_folds < 2) throw Error(ErrorCode::invalid_spec, "k_folds must be >= 2");
  const Index n = dataset.size();
  const auto n_test = static_cast<Index>(std::llround(static_cast<double>(n) * test_fraction));
  if (n_test < 1 || n - n_test < k_folds) throw Error(ErrorCode::too_few_samples, "not enough samples for the requested split");

  std::vector<std::vector<Index>> strata;
  if (dataset.labeled()) {
    strata.resize(2);
    for (Index i = 0; i < n; ++i) strata[static_cast<std::size_t>((*dataset.labels)[static_cast<std::size_t>(i)])].push_back(i);
  } else {
    strata.resize(1);
    for (Index i = 0; i < n; ++i) strata[0].push_back(i);
  }

  // Largest-remainder allocation of the test set across strata.
  std::vector<Index> test_counts(strata.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  Index allocated = 0;
  for (std::size_t c = 0; c < strata.size(); ++c) {
    const double exact = static_cast<double>(strata[c].size()) * static_cast<double>(n_test) / static_cast<double>(n);
    test_counts[c] = static_cast<Index>(std::floor(exact));
    allocated += test_counts[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; allocated < n_test; ++r, ++allocated) ++test_counts[remainders[r % remainders.size()].second];

  for (std::size_t c = 0; c < strata.size(); ++c) {
    const auto size = static_cast<Index>(strata[c].size());
    if (size == 0 || test_counts[c] < 1 || size - test_counts[c] < 1)
      throw Error(ErrorCode::too_few_samples, "class stratum would be empty in the test set or the folds");
  }

  Rng rng = make_rng(seed, 17);
  SplitPlan plan;
  plan.fold_assignments.assign(static_cast<std::size_t>(n), -1);
  std::vector<Index> remaining;
  for (std::size_t c = 0; c < strata.size(); ++c) {
    auto rows = strata[c];
    std::shuffle(rows.begin(), rows.end(), rng);
    plan.test_indices.insert(plan.test_indices.end(), rows.begin(), rows.begin() + test_counts[c]);
    remaining.insert(remaining.end(), rows.begin() + test_counts[c], rows.end());
  }
  // Round-robin dealing keeps folds stratified and within one sample of each other.
  for (std::size_t i = 0; i < remaining.size(); ++i)
    plan.fold_assignments[static_cast<std::size_t>(remaining[i])] = static_cast<int>(i % static_cast<std::size_t>(k_folds));
  for (Index i = 0; i < n; ++i) {
    const int f = plan.fold_assignments[static_cast<std::size_t>(i)];
    if (f == 0) plan.val_indices.push_back(i);
    else if (f > 0) plan.train_indices.push_back(i);
  }
  std::sort(plan.test_indices.begin(), plan.test_indices.end());
  return plan;
}

}  // namespace dem
