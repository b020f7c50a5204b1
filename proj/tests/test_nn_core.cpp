#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dem/checkpoint.hpp"
#include "dem/training.hpp"

using namespace dem;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ModelColumn random_column(Index d, std::uint64_t seed, Index h1 = 64, Index h2 = 32) {
  Rng rng(seed);
  return ModelColumn::initialized(ColumnShape{d, h1, h2}, rng);
}

Matrix random_matrix(Index r, Index c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = standard_normal(rng);
  return m;
}

DomainDataset blobs(Index n, std::uint64_t seed) {
  Rng rng(seed);
  DomainDataset d;
  d.features.resize(n, 2);
  d.labels.emplace();
  for (Index i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    d.features(i, 0) = (y ? 3.0 : -3.0) + 0.5 * standard_normal(rng);
    d.features(i, 1) = 0.5 * standard_normal(rng);
    d.labels->push_back(y);
    d.sample_ids.push_back(i);
  }
  return d;
}

// Scalar reference Adam for one parameter.
struct ScalarAdam {
  double m = 0, v = 0;
  int t = 0;
  double step(double theta, double g, double lr) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    return theta - lr * mh / (std::sqrt(vh) + 1e-8);
  }
};

}  // namespace

TEST_CASE("forward_features: zero weights give a zero hidden batch", "[nn][exact]") {
  ModelColumn column(ColumnParams::zeros(ColumnShape{5}));
  const Matrix h = forward_features(column, random_matrix(7, 5, 1));
  CHECK(h.rows() == 7);
  CHECK(h.cols() == 32);
  CHECK(h.isZero(0.0));
}

TEST_CASE("forward_features: identity layers pass non-negative input through", "[nn][exact]") {
  ColumnParams p = ColumnParams::zeros(ColumnShape{4, 4, 4});
  p.hidden1.weight = Matrix::Identity(4, 4);
  p.hidden2.weight = Matrix::Identity(4, 4);
  const Matrix x = random_matrix(6, 4, 2).cwiseAbs();
  CHECK(forward_features(ModelColumn(p), x) == x);
}

TEST_CASE("forward_features: seeded init is reproducible and checks shapes", "[nn][exact]") {
  const Matrix x = random_matrix(5, 3, 3);
  CHECK(forward_features(random_column(3, 9), x) == forward_features(random_column(3, 9), x));
  CHECK_THROWS_MATCHES(forward_features(random_column(4, 9), x), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) { return e.code() == ErrorCode::shape_mismatch; }));
}

TEST_CASE("init draws weights within 1/sqrt(fan_in)", "[nn][exact]") {
  const ModelColumn c = random_column(10, 4);
  CHECK(c.params().hidden1.weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(10.0));
  CHECK(c.params().hidden2.weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(64.0));
  CHECK(c.params().head_a.weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(32.0));
}

TEST_CASE("forward_logit examples", "[nn][exact]") {
  Dense head = Dense::zeros(3, 1);
  const Matrix h = random_matrix(4, 3, 5);
  const Vector z0 = forward_logit(head, h);
  CHECK(z0.isZero(0.0));
  CHECK(sigmoid(z0(0)) == 0.5);

  head.weight(0, 0) = 1.0;
  Matrix one(1, 3);
  one << 2.0, 7.0, -1.0;
  const double z = forward_logit(head, one)(0);
  CHECK(z == 2.0);
  CHECK_THAT(sigmoid(z), WithinAbs(1.0 / (1.0 + std::exp(-2.0)), 1e-15));
  CHECK_THAT(sigmoid(z), WithinAbs(0.8808, 5e-5));

  Dense bias_only = Dense::zeros(3, 1);
  bias_only.bias(0) = -1.25;
  CHECK((forward_logit(bias_only, h).array() == -1.25).all());
  CHECK_THROWS_AS(forward_logit(Dense::zeros(2, 1), h), Error);
}

TEST_CASE("adam_step: zero gradient leaves parameters and counts the step", "[nn][exact]") {
  Vector p(3);
  p << 1.0, -2.0, 0.5;
  const Vector before = p;
  OptimizerState s = OptimizerState::for_size(3);
  adam_step(p, Vector::Zero(3), s);
  CHECK(p == before);
  CHECK(s.step_count == 1);
}

TEST_CASE("adam_step: first step moves by lr times the gradient sign", "[nn][exact]") {
  Vector p = Vector::Zero(1);
  OptimizerState s = OptimizerState::for_size(1, 1e-4);
  Vector g(1);
  g << 1.0;
  adam_step(p, g, s);
  // m_hat = v_hat = 1, so the move is lr / (1 + eps).
  CHECK_THAT(p(0), WithinAbs(-1e-4 / (1.0 + 1e-8), 1e-18));
  CHECK_THAT(p(0), WithinAbs(-1e-4, 1e-9));
}

TEST_CASE("adam_step: two steps differ from one step at double rate", "[nn][exact]") {
  // f(theta) = theta^2 / 2 so the second gradient sees the first update.
  const double lr = 0.1;
  Vector p = Vector::Ones(1);
  OptimizerState s = OptimizerState::for_size(1, lr);
  ScalarAdam ref;
  double theta = 1.0;
  for (int k = 0; k < 2; ++k) {
    adam_step(p, p, s);
    theta = ref.step(theta, theta, lr);
    CHECK_THAT(p(0), WithinAbs(theta, 1e-15));
  }
  Vector q = Vector::Ones(1);
  OptimizerState s2 = OptimizerState::for_size(1, 2 * lr);
  adam_step(q, q, s2);
  CHECK_THAT(q(0), WithinAbs(ScalarAdam{}.step(1.0, 1.0, 2 * lr), 1e-15));
  CHECK(std::abs(p(0) - q(0)) > 1e-4);
}

TEST_CASE("adam_step rejects non-finite gradients", "[nn][exact]") {
  Vector p = Vector::Zero(2);
  OptimizerState s = OptimizerState::for_size(2);
  Vector g(2);
  g << 1.0, std::nan("");
  CHECK_THROWS_MATCHES(adam_step(p, g, s), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) { return e.code() == ErrorCode::non_finite_gradient; }));
  CHECK(s.step_count == 0);
}

TEST_CASE("train_supervised separates linearly separable blobs", "[nn][exact]") {
  const DomainDataset train = blobs(200, 1), val = blobs(100, 2);
  ModelColumn column = random_column(2, 3);
  TrainConfig tc;
  tc.max_epochs = 100;
  tc.learning_rate = 1e-3;
  train_supervised(column, train, val, tc);
  CHECK(accuracy(column, train) >= 0.99);
}

TEST_CASE("early stopping halts after exactly `patience` non-improving epochs", "[nn][exact]") {
  ModelColumn column = random_column(2, 3);
  const DomainDataset val = blobs(20, 2);
  TrainConfig tc;
  tc.max_epochs = 100;
  tc.patience = 20;
  int calls = 0;
  const TrainHistory h = run_with_early_stopping(column, val, tc, [&] {
    ++calls;
    return 1.0;  // nothing changes: constant validation loss
  });
  CHECK(h.best_epoch == 1);
  CHECK(h.epochs_run == 21);
  CHECK(calls == 21);
  CHECK(h.stopped_early);
}

TEST_CASE("training refuses frozen columns and single-class data", "[nn][exact]") {
  ModelColumn column = random_column(2, 3);
  column.freeze();
  const auto same = [](ErrorCode want) {
    return Catch::Matchers::Predicate<Error>([want](const Error& e) { return e.code() == want; });
  };
  CHECK_THROWS_MATCHES(train_supervised(column, blobs(10, 1), blobs(10, 2), {}), Error, same(ErrorCode::frozen_column));
  CHECK_THROWS_MATCHES(column.mutable_params(), Error, same(ErrorCode::frozen_column));
  ModelColumn open = random_column(2, 3);
  DomainDataset one = blobs(10, 1);
  std::fill(one.labels->begin(), one.labels->end(), 1);
  CHECK_THROWS_MATCHES(train_supervised(open, one, blobs(10, 2), {}), Error, same(ErrorCode::degenerate_labels));
}

TEST_CASE("train_supervised is bit-deterministic", "[nn][exact]") {
  const DomainDataset train = blobs(100, 1), val = blobs(40, 2);
  TrainConfig tc;
  tc.max_epochs = 5;
  tc.seed = 77;
  ModelColumn a = random_column(2, 3), b = random_column(2, 3);
  const TrainHistory ha = train_supervised(a, train, val, tc);
  const TrainHistory hb = train_supervised(b, train, val, tc);
  CHECK(parameter_hash(a.params()) == parameter_hash(b.params()));
  CHECK(ha.train_loss == hb.train_loss);
}

TEST_CASE("cbp_step: zero replacement rate changes nothing", "[nn][cbp][exact]") {
  ModelColumn column = random_column(4, 5);
  UtilityState u = UtilityState::for_shape(column.shape(), 0.99, 0.0, 0);
  const auto before = parameter_hash(column.params());
  Rng rng(1);
  for (int s = 0; s < 50; ++s) {
    const FeatureCache cache = forward_features_cached(column, random_matrix(8, 4, static_cast<std::uint64_t>(s)));
    CHECK(cbp_step(column, u, cache, rng).empty());
  }
  CHECK(parameter_hash(column.params()) == before);
}

TEST_CASE("cbp_step: immature units are never replaced", "[nn][cbp][exact]") {
  ModelColumn column = random_column(4, 5);
  UtilityState u = UtilityState::for_shape(column.shape(), 0.99, 1.0, 100);
  const auto before = parameter_hash(column.params());
  Rng rng(1);
  for (int s = 0; s < 99; ++s) {
    const FeatureCache cache = forward_features_cached(column, random_matrix(8, 4, static_cast<std::uint64_t>(s)));
    CHECK(cbp_step(column, u, cache, rng).empty());
  }
  CHECK(parameter_hash(column.params()) == before);
  const FeatureCache cache = forward_features_cached(column, random_matrix(8, 4, 999));
  CHECK_FALSE(cbp_step(column, u, cache, rng).empty());
}

TEST_CASE("cbp_step: the lowest-utility unit gets zero outgoing weights", "[nn][cbp][exact]") {
  ModelColumn column = random_column(4, 5, 16, 32);
  // Only layer 2 is mature; exactly one replacement is due (32 * 1/32).
  UtilityState u = UtilityState::for_shape(column.shape(), 1.0, 1.0 / 32.0, 10);
  for (auto& a : u.layers[1].age) a = 10;
  for (Index k = 0; k < 32; ++k) u.layers[1].utility(k) = 1.0 + static_cast<double>(k);
  u.layers[1].utility(7) = 0.01;
  // decay 1 keeps the controlled utilities as they are.
  const ColumnParams before = column.params();
  Rng rng(3);
  const FeatureCache cache = forward_features_cached(column, random_matrix(8, 4, 1));
  const auto replaced = cbp_step(column, u, cache, rng);
  REQUIRE(replaced.size() == 1);
  CHECK(replaced[0].layer == 1);
  CHECK(replaced[0].unit == 7);
  const ColumnParams& p = column.params();
  CHECK(p.head_a.weight(0, 7) == 0.0);
  CHECK(p.head_b.weight(0, 7) == 0.0);
  CHECK(p.discriminator.weight(0, 7) == 0.0);
  CHECK(p.hidden2.weight.row(7) != before.hidden2.weight.row(7));
  CHECK(u.layers[1].age[7] == 0);
  CHECK(u.layers[1].utility(7) == 0.0);
  // Other units untouched.
  CHECK(p.head_a.weight(0, 6) == before.head_a.weight(0, 6));
  CHECK(p.hidden1.weight == before.hidden1.weight);
}

TEST_CASE("cbp_step accumulates fractional replacements", "[nn][cbp][exact]") {
  ModelColumn column = random_column(4, 5, 16, 32);
  UtilityState u = UtilityState::for_shape(column.shape(), 0.99, 0.01, 0);
  Rng rng(3);
  std::size_t total = 0;
  const int steps = 100;
  for (int s = 0; s < steps; ++s) {
    const FeatureCache cache = forward_features_cached(column, random_matrix(8, 4, static_cast<std::uint64_t>(s)));
    total += cbp_step(column, u, cache, rng).size();
  }
  // floor(0.01 * 16 * 100) + floor(0.01 * 32 * 100), up to floating accumulation.
  CHECK(total >= 46);
  CHECK(total <= 48);
  for (const auto& layer : u.layers) CHECK((layer.utility.array() >= 0.0).all());
}

TEST_CASE("cbp_step refuses frozen columns", "[nn][cbp][exact]") {
  ModelColumn column = random_column(4, 5);
  column.freeze();
  UtilityState u = UtilityState::for_shape(column.shape());
  Rng rng(1);
  const FeatureCache cache = forward_features_cached(column, random_matrix(2, 4, 1));
  CHECK_THROWS_AS(cbp_step(column, u, cache, rng), Error);
}

TEST_CASE("checkpoint round trip is bit-identical", "[nn][checkpoint][exact]") {
  ModelColumn column = random_column(6, 8);
  OptimizerState opt = OptimizerState::for_size(column.params().size(), 3e-4);
  opt.first_moment.setConstant(0.125);
  opt.second_moment.setConstant(1e-300);
  opt.step_count = 17;
  Rng rng(99);
  rng.discard(5);
  UtilityState u = UtilityState::for_shape(column.shape());
  u.layers[0].utility(3) = 0.5;
  u.layers[1].age[2] = 12;
  u.layers[1].pending = 0.375;
  const Checkpoint c = make_checkpoint(column, opt, rng, u);
  const std::string bytes = serialize_checkpoint(c);
  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(parameter_hash(back.column().params()) == parameter_hash(column.params()));
  CHECK(back.optimizer.first_moment == opt.first_moment);
  CHECK(back.optimizer.step_count == 17);
  Rng restored;
  restore_rng(restored, back.rng_state);
  CHECK(restored() == rng());
  CHECK(back.utility.layers[1].pending == 0.375);

  const auto path = std::filesystem::temp_directory_path() / "dem_test_roundtrip.ckpt";
  save_checkpoint(path.string(), c);
  CHECK(serialize_checkpoint(load_checkpoint(path.string())) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint byte layout", "[nn][checkpoint][exact]") {
  const ModelColumn column = random_column(3, 8, 5, 4);
  const Checkpoint c = make_checkpoint(column, OptimizerState::for_size(column.params().size()), Rng(1),
                                       UtilityState::for_shape(column.shape()));
  const std::string b = serialize_checkpoint(c);
  CHECK(b.substr(0, 8) == "DEMCKPT1");
  auto u32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int k = 3; k >= 0; --k) v = (v << 8) | static_cast<unsigned char>(b[at + static_cast<std::size_t>(k)]);
    return v;
  };
  CHECK(u32(8) == 1);   // version
  CHECK(u32(12) == 3);  // dimension count
  CHECK(u32(16) == 3);
  CHECK(u32(20) == 5);
  CHECK(u32(24) == 4);
  const std::uint64_t count = u32(28) | (static_cast<std::uint64_t>(u32(32)) << 32);
  CHECK(count == static_cast<std::uint64_t>(column.params().size()));
  double first = 0.0;
  std::memcpy(&first, b.data() + 36, 8);  // little-endian host
  CHECK(first == column.params().hidden1.weight(0, 0));
}

TEST_CASE("corrupt checkpoints are rejected", "[nn][checkpoint][exact]") {
  const ModelColumn column = random_column(3, 8);
  const std::string good = serialize_checkpoint(make_checkpoint(column, OptimizerState::for_size(column.params().size()), Rng(1),
                                                                UtilityState::for_shape(column.shape())));
  auto code = [](const std::string& bytes) {
    try {
      deserialize_checkpoint(bytes);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::io_failure;
  };
  CHECK(code(good.substr(0, good.size() - 1)) == ErrorCode::corrupt_checkpoint);
  CHECK(code(good.substr(0, 20)) == ErrorCode::corrupt_checkpoint);
  CHECK(code("") == ErrorCode::corrupt_checkpoint);
  std::string magic = good;
  magic[0] = 'X';
  CHECK(code(magic) == ErrorCode::corrupt_checkpoint);
  std::string version = good;
  version[8] = 2;
  CHECK(code(version) == ErrorCode::corrupt_checkpoint);
  CHECK(code(good + "x") == ErrorCode::corrupt_checkpoint);
  std::string huge = good;
  huge[35] = static_cast<char>(0x7f);  // parameter count far past the file end
  CHECK(code(huge) == ErrorCode::corrupt_checkpoint);
}
