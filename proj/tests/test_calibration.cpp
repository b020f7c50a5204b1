#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "dem/calibration.hpp"

using namespace dem;
using Catch::Matchers::WithinAbs;

namespace {

Vector uniform_vector(Index n, Rng& rng) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = uniform01(rng);
  return v;
}

ConfidenceState state_with(std::vector<double> init, std::vector<double> prev) {
  ConfidenceState s;
  s.init = Eigen::Map<Vector>(init.data(), static_cast<Index>(init.size()));
  s.prev = Eigen::Map<Vector>(prev.data(), static_cast<Index>(prev.size()));
  return s;
}

}  // namespace

TEST_CASE("compute_lambda examples", "[calibration][exact]") {
  CHECK(compute_lambda(0.0, 10.0) == 0.5);
  CHECK_THAT(compute_lambda(0.1, 10.0), WithinAbs(1.0 / (1.0 + std::exp(-1.0)), 1e-12));
  CHECK_THAT(compute_lambda(0.1, 10.0), WithinAbs(0.7311, 1e-4));
  CHECK(compute_lambda(std::numeric_limits<double>::infinity(), 10.0) == 1.0);
  CHECK(compute_lambda(1e6, 10.0) == 1.0);
  CHECK_THROWS_AS(compute_lambda(0.1, 0.0), Error);
}

TEST_CASE("update rule examples", "[calibration][exact]") {
  const ConfidenceState fixed = state_with({0.7, 0.6}, {0.7, 0.6});
  Vector curr(2);
  curr << 0.7, 0.6;
  const std::vector<Index> both{0, 1};
  CHECK(update_confidences(fixed, both, curr, 0.3).prev == fixed.prev);

  const ConfidenceState s = state_with({0.5}, {0.5});
  Vector c(1);
  c << 0.7;
  const std::vector<Index> first{0};
  CHECK_THAT(update_confidences_with_lambda(s, first, c, 1.0).prev(0), WithinAbs(0.54, 1e-12));

  const ConfidenceState f = state_with({0.5}, {0.6});
  c << 0.9;
  CHECK_THAT(update_confidences_with_lambda(f, first, c, 0.0).prev(0), WithinAbs(0.59, 1e-12));
}

TEST_CASE("update touches only the subset and records it", "[calibration][exact]") {
  const ConfidenceState s = state_with({0.6, 0.7, 0.8}, {0.65, 0.7, 0.75});
  Vector c(1);
  c << 0.9;
  const std::vector<Index> subset{1};
  const ConfidenceState n = update_confidences(s, subset, c, 0.05);
  CHECK(n.prev(0) == 0.65);
  CHECK(n.prev(2) == 0.75);
  CHECK(n.prev(1) != 0.7);
  CHECK(n.index_map == subset);
  CHECK(n.curr_subset == c);
}

TEST_CASE("update rejects bad index maps", "[calibration][exact]") {
  const ConfidenceState s = state_with({0.6, 0.7}, {0.6, 0.7});
  Vector c(1);
  c << 0.9;
  const std::vector<Index> out{2}, neg{-1};
  CHECK_THROWS_MATCHES(update_confidences(s, out, c, 0.0), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) { return e.code() == ErrorCode::index_out_of_range; }));
  CHECK_THROWS_AS(update_confidences(s, neg, c, 0.0), Error);
  Vector c2(2);
  c2 << 0.9, 0.8;
  const std::vector<Index> dup{0, 0};
  CHECK_THROWS_AS(update_confidences(s, dup, c2, 0.0), Error);
  const std::vector<Index> one{0};
  CHECK_THROWS_AS(update_confidences(s, one, c2, 0.0), Error);
}

TEST_CASE("screening priors pass calibrated confidences through", "[calibration][exact]") {
  Vector half = Vector::Constant(4, 0.5);
  CHECK(screening_probabilities(state_with({0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, 0.5, 0.5})) == half);
  Vector ends(2);
  ends << 1.0, 0.0;
  CHECK(screening_probabilities(state_with({1.0, 0.0}, {1.0, 0.0})) == ends);
  // Positive delta with C^prev = C^init: the forgetting term vanishes.
  const ConfidenceState s = state_with({0.6, 0.7}, {0.6, 0.7});
  Vector c(2);
  c << 0.8, 0.9;
  const std::vector<Index> both{0, 1};
  const Vector after = screening_probabilities(update_confidences(s, both, c, 0.2));
  CHECK(after(0) >= 0.6);
  CHECK(after(1) >= 0.7);
}

TEST_CASE("from_probabilities takes max(p, 1 - p)", "[calibration][exact]") {
  Vector p(4);
  p << 0.1, 0.5, 0.8, 1.0;
  const ConfidenceState s = ConfidenceState::from_probabilities(p);
  Vector expected(4);
  expected << 0.9, 0.5, 0.8, 1.0;
  CHECK(s.init == expected);
  CHECK(s.prev == expected);
  CHECK(s.lambda_scale == 10.0);
}

TEST_CASE("the update is the printed formula symbol for symbol", "[calibration][property]") {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const double prev = uniform01(rng), curr = uniform01(rng), init = uniform01(rng);
    const double delta = 2.0 * uniform01(rng) - 1.0;
    const double lambda = 1.0 / (1.0 + std::exp(-10.0 * delta));
    const double printed = prev + lambda * std::pow(curr - prev, 2) - (1.0 - lambda) * std::pow(prev - init, 2);
    CHECK_THAT(calibrated_confidence(prev, curr, init, compute_lambda(delta, 10.0)), WithinAbs(printed, 1e-12));
  }
}

TEST_CASE("zero accuracy change weighs both terms equally", "[calibration][property]") {
  CHECK(compute_lambda(0.0, 0.5) == 0.5);
  CHECK(compute_lambda(0.0, 100.0) == 0.5);
  CHECK(compute_lambda(-0.0, 10.0) == 0.5);
}

TEST_CASE("confidences stay in [0, 1] and init never changes", "[calibration][property]") {
  Rng rng(2);
  ConfidenceState s = ConfidenceState::from_probabilities(uniform_vector(50, rng));
  const Vector init = s.init;
  for (int step = 0; step < 500; ++step) {
    std::vector<Index> subset;
    for (Index i = 0; i < 50; ++i)
      if (uniform01(rng) < 0.3) subset.push_back(i);
    Vector curr = uniform_vector(static_cast<Index>(subset.size()), rng);
    // Extreme values exercise the clamp from both sides.
    if (step % 7 == 0) curr.setOnes();
    if (step % 11 == 0) curr.setZero();
    s = update_confidences(s, subset, curr, 4.0 * uniform01(rng) - 2.0);
    REQUIRE(s.prev.minCoeff() >= 0.0);
    REQUIRE(s.prev.maxCoeff() <= 1.0);
  }
  CHECK(s.init == init);
}
