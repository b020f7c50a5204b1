#include <catch_amalgamated.hpp>

#include <algorithm>
#include <vector>

#include "dem/metrics.hpp"

using namespace dem;
using Catch::Matchers::WithinAbs;

namespace {

// All positive-negative pairs, ties counted one half.
double brute_force_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

struct Instance {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Scores quantized to a few levels so ties are common; both classes present.
Instance random_instance(Rng& rng, std::size_t n, int levels) {
  Instance in;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = i < 2 ? static_cast<int>(i) : static_cast<int>(uniform01(rng) < 0.4);
    const double raw = 0.3 * y + 0.7 * uniform01(rng);
    in.labels.push_back(y);
    in.scores.push_back(std::floor(raw * levels) / levels);
  }
  return in;
}

DomainDataset labeled(std::size_t positives, std::size_t negatives) {
  DomainDataset d;
  const auto n = static_cast<Index>(positives + negatives);
  d.features = Matrix::Zero(n, 1);
  d.labels.emplace();
  for (Index i = 0; i < n; ++i) {
    d.features(i, 0) = static_cast<double>(i);
    d.labels->push_back(static_cast<std::size_t>(i) < positives ? 1 : 0);
    d.sample_ids.push_back(i);
  }
  return d;
}

}  // namespace

TEST_CASE("compute_metrics examples", "[metrics][exact]") {
  const MetricsReport perfect = compute_metrics(std::vector{0.9, 0.8, 0.3, 0.2}, std::vector{1, 1, 0, 0});
  CHECK(perfect.accuracy.point == 100.0);
  CHECK(perfect.sensitivity.point == 100.0);
  CHECK(perfect.specificity.point == 100.0);
  CHECK(perfect.auc.point == 1.0);
  CHECK(perfect.n == 4);

  CHECK(compute_metrics(std::vector{0.4, 0.4, 0.4, 0.4}, std::vector{1, 0, 1, 0}).auc.point == 0.5);

  const MetricsReport reversed = compute_metrics(std::vector{0.2, 0.8}, std::vector{1, 0});
  CHECK(reversed.auc.point == 0.0);
  CHECK(reversed.accuracy.point == 0.0);
}

TEST_CASE("single-class metrics are flagged undefined", "[metrics][exact]") {
  const MetricsReport r = compute_metrics(std::vector{0.9, 0.2, 0.7}, std::vector{1, 1, 1});
  CHECK(r.accuracy.defined);
  CHECK_THAT(r.accuracy.point, WithinAbs(200.0 / 3.0, 1e-12));
  CHECK(r.sensitivity.defined);
  CHECK_FALSE(r.specificity.defined);
  CHECK_FALSE(r.auc.defined);
  CHECK_THROWS_AS(auc_rank(std::vector{0.1, 0.2}, std::vector{0, 0}), Error);
  CHECK_THROWS_AS(bootstrap_ci(std::vector{0.1, 0.2}, std::vector{0, 0}, Metric::auc), Error);
  CHECK_THROWS_AS(compute_metrics(std::vector<double>{}, std::vector<int>{}), Error);
  CHECK_THROWS_AS(compute_metrics(std::vector{0.5}, std::vector{2}), Error);
}

TEST_CASE("AUC equals the all-pairs oracle on tied instances", "[metrics][oracle]") {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * 60);
    const Instance in = random_instance(rng, n, 1 + static_cast<int>(uniform01(rng) * 8));
    INFO("trial " << trial);
    REQUIRE_THAT(auc_rank(in.scores, in.labels), WithinAbs(brute_force_auc(in.scores, in.labels), 1e-12));
  }
}

TEST_CASE("accuracy, sensitivity and specificity share one confusion matrix", "[metrics][property]") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Instance in = random_instance(rng, 40, 10);
    const Confusion c = confusion(in.scores, in.labels);
    const MetricsReport r = compute_metrics(in.scores, in.labels);
    const double error = 100.0 * static_cast<double>(c.fp + c.fn) / 40.0;
    CHECK_THAT(r.accuracy.point + error, WithinAbs(100.0, 1e-9));
    const double recomposed = (r.sensitivity.point * static_cast<double>(c.positives()) +
                               r.specificity.point * static_cast<double>(c.negatives())) / 40.0;
    CHECK_THAT(r.accuracy.point, WithinAbs(recomposed, 1e-9));
  }
}

TEST_CASE("confusion threshold is inclusive", "[metrics][exact]") {
  const Confusion c = confusion(std::vector{0.5, 0.49}, std::vector{1, 0});
  CHECK(c.tp == 1);
  CHECK(c.tn == 1);
}

TEST_CASE("quantile interpolation", "[metrics][exact]") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0, 5.0};
  CHECK(quantile_sorted(v, 0.0) == 1.0);
  CHECK(quantile_sorted(v, 1.0) == 5.0);
  CHECK(quantile_sorted(v, 0.5) == 3.0);
  CHECK_THAT(quantile_sorted(v, 0.025), WithinAbs(1.1, 1e-12));
}

TEST_CASE("bootstrap of a constant metric has zero width", "[metrics][exact]") {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.3, 0.2, 0.1};
  const std::vector<int> y{1, 1, 1, 0, 0, 0};
  for (Metric m : kAllMetrics) {
    const Interval ci = bootstrap_ci(s, y, m, 500, 3);
    const double expected = m == Metric::auc ? 1.0 : 100.0;
    CHECK(ci.lower == expected);
    CHECK(ci.upper == expected);
  }
}

TEST_CASE("bootstrap intervals contain the point estimate", "[metrics][property]") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Instance in = random_instance(rng, 60, 20);
    const MetricsReport p = compute_metrics(in.scores, in.labels);
    for (Metric m : {Metric::accuracy, Metric::auc}) {
      const Interval ci = bootstrap_ci(in.scores, in.labels, m, 2000, static_cast<std::uint64_t>(trial));
      INFO("trial " << trial << " metric " << to_string(m));
      CHECK(ci.lower <= p.get(m).point);
      CHECK(p.get(m).point <= ci.upper);
    }
  }
}

TEST_CASE("reported intervals always bracket the point", "[metrics][property]") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Instance in = random_instance(rng, 12, 3);
    const MetricsReport r = evaluate_with_ci(in.scores, in.labels, 200, static_cast<std::uint64_t>(trial));
    for (Metric m : kAllMetrics) {
      const Estimate& e = r.get(m);
      if (!e.defined) continue;
      CHECK(e.lower <= e.point);
      CHECK(e.point <= e.upper);
    }
  }
}

TEST_CASE("bootstrap is deterministic and order invariant", "[metrics][exact]") {
  Rng rng(6);
  Instance in = random_instance(rng, 80, 1000);
  const Interval a = bootstrap_ci(in.scores, in.labels, Metric::auc, 2000, 11);
  const Interval b = bootstrap_ci(in.scores, in.labels, Metric::auc, 2000, 11);
  CHECK(a.lower == b.lower);
  CHECK(a.upper == b.upper);
  std::vector<std::size_t> perm(in.scores.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Instance shuffled;
  for (auto i : perm) {
    shuffled.scores.push_back(in.scores[i]);
    shuffled.labels.push_back(in.labels[i]);
  }
  for (Metric m : kAllMetrics) {
    const Interval x = bootstrap_ci(in.scores, in.labels, m, 1000, 12);
    const Interval z = bootstrap_ci(shuffled.scores, shuffled.labels, m, 1000, 12);
    CHECK(x.lower == z.lower);
    CHECK(x.upper == z.upper);
  }
}

TEST_CASE("mean_report averages and propagates undefined metrics", "[metrics][exact]") {
  MetricsReport a, b;
  a.accuracy = {80.0, 70.0, 90.0, true};
  b.accuracy = {60.0, 50.0, 70.0, true};
  a.auc = {0.9, 0.8, 1.0, true};
  b.auc = {0.0, 0.0, 0.0, false};
  a.n = 10;
  b.n = 20;
  const std::vector<MetricsReport> both{a, b};
  const MetricsReport m = mean_report(both);
  CHECK(m.accuracy.point == 70.0);
  CHECK(m.accuracy.lower == 60.0);
  CHECK(m.accuracy.upper == 80.0);
  CHECK_FALSE(m.auc.defined);
  CHECK(m.n == 30);
}

TEST_CASE("cross-validation with a constant predictor recovers the class prior", "[metrics][exact]") {
  const DomainDataset d = labeled(30, 70);
  const CvPipeline always_positive = [](const DomainDataset&, const DomainDataset& held) {
    return Vector::Constant(held.size(), 1.0);
  };
  const CrossValidationResult r = run_cross_validation(d, always_positive, 5, 1);
  CHECK(r.folds.size() == 5);
  CHECK_THAT(r.mean.accuracy.point, WithinAbs(30.0, 1e-12));
  std::size_t total = 0;
  for (const auto& f : r.folds) total += f.n;
  CHECK(total == 100);
}

TEST_CASE("cross-validation does not depend on fold order", "[metrics][exact]") {
  const DomainDataset d = labeled(45, 55);
  // Scores depend on the training fold, so any leakage between folds would show.
  const CvPipeline pipeline = [](const DomainDataset& train, const DomainDataset& held) {
    const double shift = train.features.col(0).mean() / 100.0;
    Vector s(held.size());
    for (Index i = 0; i < held.size(); ++i) s(i) = std::fmod(held.features(i, 0) * 0.37 + shift, 1.0);
    return s;
  };
  const CrossValidationResult a = run_cross_validation(d, pipeline, 5, 7);
  const CrossValidationResult b = run_cross_validation(d, pipeline, 5, 7, {3, 1, 4, 0, 2});
  for (std::size_t f = 0; f < 5; ++f) {
    CHECK(a.folds[f].accuracy.point == b.folds[f].accuracy.point);
    CHECK(a.folds[f].auc.point == b.folds[f].auc.point);
  }
  CHECK(a.mean.accuracy.point == b.mean.accuracy.point);
}

TEST_CASE("stratified folds balance both classes", "[metrics][exact]") {
  const DomainDataset d = labeled(20, 30);
  const std::vector<int> folds = stratified_folds(d, 5, 3);
  std::vector<int> pos(5, 0), neg(5, 0);
  for (std::size_t i = 0; i < folds.size(); ++i) ((*d.labels)[i] ? pos : neg)[static_cast<std::size_t>(folds[i])]++;
  CHECK(pos == std::vector<int>(5, 4));
  CHECK(neg == std::vector<int>(5, 6));
  CHECK_THROWS_AS(stratified_folds(d, 1, 3), Error);
  CHECK_THROWS_AS(stratified_folds(labeled(1, 2), 5, 3), Error);
}
