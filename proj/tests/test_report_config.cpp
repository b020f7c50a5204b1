#include <catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "dem/ablation.hpp"
#include "dem/config.hpp"
#include "dem/report.hpp"

using namespace dem;

namespace {

bool has_code(const std::function<void()>& f, ErrorCode code) {
  try {
    f();
  } catch (const Error& e) {
    return e.code() == code;
  }
  return false;
}

MetricsReport sample_report(double acc, std::uint64_t seed) {
  MetricsReport r;
  r.accuracy = {acc, acc - 5.0, acc + 5.0, true};
  r.sensitivity = {80.0, 70.123, 90.0, true};
  r.specificity = {0.0, 0.0, 0.0, false};
  r.auc = {0.87654, 0.8, 0.95, true};
  r.n = 400;
  r.dataset = "target";
  r.phase = "evolving";
  r.seed = seed;
  return r;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

// Returns a report whose target accuracy encodes the variant config, so rows are traceable.
DemReport stub_runner(const ShiftSpec& spec, const LoopConfig& cfg, const LossWeights&) {
  DemReport r;
  const double tag = (cfg.source_column ? 1.0 : 0.0) + (cfg.adaptation_losses ? 2.0 : 0.0);
  r.evolving.target_test = sample_report(50.0 + tag, spec.seed);
  r.evolving.source_test = sample_report(90.0, spec.seed);
  return r;
}

}  // namespace

TEST_CASE("estimates print two decimals for percentages and three for AUC", "[report][exact]") {
  CHECK(format_estimate({72.456, 70.0, 74.999}, Metric::accuracy) == "72.46 (70.00-75.00)");
  CHECK(format_estimate({0.87654, 0.8, 0.95}, Metric::auc) == "0.877 (0.800-0.950)");
  CHECK(format_estimate({0.0, 0.0, 0.0, false}, Metric::specificity) == "NA");
}

TEST_CASE("results survive a JSON round trip", "[report][exact]") {
  ResultsTable t;
  t.rows.push_back({"target", "evolving", "DEM", sample_report(88.25, 3)});
  t.rows.push_back({"source", "screening", "RL", sample_report(97.5, 4)});
  const ResultsTable back = results_from_json(nlohmann::json::parse(results_to_json(t).dump()));
  REQUIRE(back.rows.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.rows[i].dataset == t.rows[i].dataset);
    CHECK(back.rows[i].phase == t.rows[i].phase);
    CHECK(back.rows[i].variant == t.rows[i].variant);
    CHECK(back.rows[i].metrics.seed == t.rows[i].metrics.seed);
    CHECK(back.rows[i].metrics.n == t.rows[i].metrics.n);
    for (Metric m : kAllMetrics) {
      CHECK(back.rows[i].metrics.get(m).defined == t.rows[i].metrics.get(m).defined);
      if (t.rows[i].metrics.get(m).defined) {
        CHECK(back.rows[i].metrics.get(m).point == t.rows[i].metrics.get(m).point);
        CHECK(back.rows[i].metrics.get(m).lower == t.rows[i].metrics.get(m).lower);
        CHECK(back.rows[i].metrics.get(m).upper == t.rows[i].metrics.get(m).upper);
      }
    }
  }
  nlohmann::json bad = results_to_json(t);
  bad["schema_version"] = 99;
  CHECK(has_code([&] { results_from_json(bad); }, ErrorCode::invalid_config));
}

TEST_CASE("CSV has one row per dataset, phase and variant", "[report][exact]") {
  ResultsTable t;
  for (const char* variant : {"RL", "CRL-no-adaptation", "DEM"})
    for (const char* dataset : {"source", "target"})
      for (const char* phase : {"pretrained", "screening", "evolving"}) t.rows.push_back({dataset, phase, variant, sample_report(70.0, 1)});
  const std::string csv = results_to_csv(t);
  CHECK(count_lines(csv) == 1 + 3 * 2 * 3);
  std::istringstream in(csv);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header.rfind("dataset,phase,variant,n,accuracy,accuracy_ci_low,accuracy_ci_high", 0) == 0);
  CHECK(first == "source,pretrained,RL,400,70.00,65.00,75.00,80.00,70.12,90.00,NA,NA,NA,0.877,0.800,0.950");
}

TEST_CASE("emit_report writes the requested formats", "[report][exact]") {
  const auto dir = std::filesystem::temp_directory_path() / "dem_report_test";
  std::filesystem::create_directories(dir);
  ResultsTable t;
  t.rows.push_back({"target", "evolving", "DEM", sample_report(88.0, 1)});
  const auto paths = emit_report(t, dir / "results", {"json", "csv"});
  REQUIRE(paths.size() == 2);
  CHECK(std::filesystem::exists(dir / "results.json"));
  CHECK(read_text_file(dir / "results.csv") == results_to_csv(t));
  CHECK(has_code([&] { emit_report(t, dir / "results", {"xml"}); }, ErrorCode::invalid_config));
  std::filesystem::remove_all(dir);
}

TEST_CASE("config round-trips through JSON", "[config][exact]") {
  RunConfig c;
  c.shift_spec.rotation_angle = 0.25;
  c.shift_spec.seed = 17;
  c.loop_config.beam_width = 5;
  c.loop_config.calibration = false;
  c.loss_weights.w_coral = 0.3;
  const RunConfig back = parse_config(config_to_json(c).dump());
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK(back.loop_config.beam_width == 5);
  CHECK_FALSE(back.loop_config.calibration);
}

TEST_CASE("config rejects unknown keys and bad values", "[config][exact]") {
  CHECK(has_code([] { parse_config(R"({"loop_config": {"beam_widht": 3}})"); }, ErrorCode::invalid_config));
  CHECK(has_code([] { parse_config(R"({"extras": {}})"); }, ErrorCode::invalid_config));
  CHECK(has_code([] { parse_config(R"({"loop_config": {"beam_width": "three"}})"); }, ErrorCode::invalid_config));
  CHECK(has_code([] { parse_config(R"({"loop_config": {"beam_width": -1}})"); }, ErrorCode::invalid_config));
  CHECK(has_code([] { parse_config(R"({"shift_spec": {"label_flip_rate": 1.5}})"); }, ErrorCode::invalid_config));
  CHECK(has_code([] { parse_config("{not json"); }, ErrorCode::invalid_config));
  CHECK(has_code([] { load_config("/nonexistent/dem.json"); }, ErrorCode::io_failure));
  // Missing sections keep their defaults.
  CHECK(config_to_json(parse_config("{}")) == config_to_json(RunConfig{}));
}

TEST_CASE("DEM_SEED replaces the loop seed", "[config][exact]") {
  RunConfig c;
  apply_seed_override(c, "1234");
  CHECK(c.loop_config.seed == 1234);
  apply_seed_override(c, nullptr);
  apply_seed_override(c, "");
  CHECK(c.loop_config.seed == 1234);
  CHECK(has_code([&] { apply_seed_override(c, "12x"); }, ErrorCode::invalid_config));
  CHECK(has_code([&] { apply_seed_override(c, "-3"); }, ErrorCode::invalid_config));
}

TEST_CASE("ablation suites list their variants with the reference last", "[ablation][exact]") {
  const LoopConfig base;
  const auto framework = suite_variants(Suite::framework, base);
  REQUIRE(framework.size() == 3);
  CHECK(framework[0].name == "RL");
  CHECK_FALSE(framework[0].config.source_column);
  CHECK_FALSE(framework[1].config.adaptation_losses);
  CHECK(framework[2].name == "DEM");
  const auto calib = suite_variants(Suite::calibration, base);
  CHECK_FALSE(calib[0].config.calibration);
  CHECK(calib[1].config.calibration);
  CHECK(suite_variants(Suite::reinit, base)[0].config.scratch);
  CHECK(has_code([] { parse_suite("bogus"); }, ErrorCode::invalid_config));
  CHECK(parse_suite("framework") == Suite::framework);
}

TEST_CASE("framework suite yields one row per variant and seed", "[ablation][exact]") {
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  const AblationResult a = run_ablation(Suite::framework, benchmark_spec(0), LoopConfig{}, LossWeights{}, seeds, stub_runner);
  CHECK(a.rows.size() == 3 * seeds.size());
  CHECK(a.rows_for("RL").size() == seeds.size());
  CHECK(a.mean_accuracy("RL", Domain::target) == 52.0);
  CHECK(a.mean_accuracy("CRL-no-adaptation", Domain::target) == 51.0);
  CHECK(a.mean_accuracy("DEM", Domain::target) == 53.0);
  for (const auto& r : a.rows) CHECK(r.target_test.seed == r.seed);
  const ResultsTable t = table_from_ablation(a);
  CHECK(t.rows.size() == 3 * 2);
  CHECK(count_lines(results_to_csv(t)) == 1 + 6);
  CHECK(has_code([&] { a.mean_accuracy("nope", Domain::target); }, ErrorCode::empty_sample_set));
}

TEST_CASE("calibration control: identical configs give identical results", "[ablation][e2e]") {
  LoopConfig base;
  base.pretrain_epochs = 100;
  base.screening_iterations = 6;
  base.evolving_iterations = 6;
  base.actions_per_iteration = 3;
  base.action_epochs = 1;
  base.bootstrap_resamples = 50;
  ShiftSpec spec = benchmark_spec(0);
  spec.d = 4;
  spec.n_source = 200;
  spec.n_target = 200;
  spec.rotation_angle = 0.3;
  // The control: the RF slot runs with calibration switched back on.
  std::vector<Variant> control = suite_variants(Suite::calibration, base);
  control[0].config.calibration = true;
  const std::vector<std::uint64_t> seeds{5};
  const AblationResult a = run_variants("calibration-control", control, spec, LossWeights{}, seeds);
  REQUIRE(a.rows.size() == 2);
  for (Metric m : kAllMetrics) {
    CHECK(a.rows[0].target_test.get(m).point == a.rows[1].target_test.get(m).point);
    CHECK(a.rows[0].source_test.get(m).point == a.rows[1].source_test.get(m).point);
  }
}
