#pragma once

// Ablation suites: each suite is a list of named LoopConfig variants run over
// the same benchmark and seeds.

#include <functional>
#include <string>
#include <vector>

#include "evolution.hpp"

namespace dem {

enum class Suite { framework, reinit, calibration };

inline std::string_view to_string(Suite s) {
  switch (s) {
    case Suite::framework: return "framework";
    case Suite::reinit: return "reinit";
    case Suite::calibration: return "calibration";
  }
  return "?";
}

inline Suite parse_suite(std::string_view name) {
  if (name == "framework") return Suite::framework;
  if (name == "reinit") return Suite::reinit;
  if (name == "calibration") return Suite::calibration;
  throw Error(ErrorCode::invalid_config, "unknown ablation suite " + std::string(name));
}

struct Variant {
  std::string name;
  LoopConfig config;
};

/// The reference variant (full DEM) is always last.
inline std::vector<Variant> suite_variants(Suite suite, const LoopConfig& base) {
  auto with = [&](std::string name, auto edit) {
    LoopConfig c = base;
    edit(c);
    return Variant{std::move(name), c};
  };
  auto full = [](LoopConfig&) {};
  switch (suite) {
    case Suite::framework:
      return {with("RL", [](LoopConfig& c) { c.source_column = false; }),
              with("CRL-no-adaptation", [](LoopConfig& c) { c.adaptation_losses = false; }), with("DEM", full)};
    case Suite::reinit:
      return {with("scratch", [](LoopConfig& c) { c.scratch = true; }), with("CBP", full)};
    case Suite::calibration:
      return {with("RF", [](LoopConfig& c) { c.calibration = false; }), with("CC", full)};
  }
  return {};
}

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  MetricsReport source_test;
  MetricsReport target_test;
};

struct AblationResult {
  std::string suite;
  std::vector<std::string> variants;
  std::vector<AblationRow> rows;

  std::vector<const AblationRow*> rows_for(const std::string& variant) const {
    std::vector<const AblationRow*> out;
    for (const auto& r : rows)
      if (r.variant == variant) out.push_back(&r);
    return out;
  }

  double mean_accuracy(const std::string& variant, Domain domain) const {
    const auto rs = rows_for(variant);
    if (rs.empty()) throw Error(ErrorCode::empty_sample_set, "no rows for variant " + variant);
    double total = 0.0;
    for (const auto* r : rs) total += (domain == Domain::source ? r->source_test : r->target_test).accuracy.point;
    return total / static_cast<double>(rs.size());
  }
};

/// (benchmark spec with seed set, variant config with seed set, weights) -> report.
using VariantRunner = std::function<DemReport(const ShiftSpec&, const LoopConfig&, const LossWeights&)>;

inline DemReport run_variant_default(const ShiftSpec& spec, const LoopConfig& cfg, const LossWeights& w) {
  const auto [source, target] = generate_domain_pair(spec);
  return run_dem(source, target, cfg, w);
}

/// Runs every variant on every seed; the seed drives both data generation and the loop.
inline AblationResult run_variants(std::string suite_name, const std::vector<Variant>& variants, const ShiftSpec& bench,
                                   const LossWeights& weights, std::span<const std::uint64_t> seeds,
                                   const VariantRunner& runner = run_variant_default) {
  if (variants.empty()) throw Error(ErrorCode::invalid_config, "no variants to run");
  if (seeds.empty()) throw Error(ErrorCode::invalid_config, "no seeds given");
  AblationResult result;
  result.suite = std::move(suite_name);
  for (const auto& v : variants) result.variants.push_back(v.name);
  for (std::uint64_t seed : seeds) {
    ShiftSpec spec = bench;
    spec.seed = seed;
    for (const auto& v : variants) {
      LoopConfig cfg = v.config;
      cfg.seed = seed;
      const DemReport rep = runner(spec, cfg, weights);
      result.rows.push_back({v.name, seed, rep.evolving.source_test, rep.evolving.target_test});
    }
  }
  return result;
}

inline AblationResult run_ablation(Suite suite, const ShiftSpec& bench, const LoopConfig& base, const LossWeights& weights,
                                   std::span<const std::uint64_t> seeds, const VariantRunner& runner = run_variant_default) {
  return run_variants(std::string(to_string(suite)), suite_variants(suite, base), bench, weights, seeds, runner);
}

}  // namespace dem
