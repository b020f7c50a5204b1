#pragma once

// Result persistence: schema-versioned JSON and table-shaped CSV.
// Percentages print with 2 decimals and AUC with 3, e.g. "70.73 (68.42-73.03)".

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ablation.hpp"
#include "config.hpp"
#include "dataset_io.hpp"

namespace dem {

inline constexpr int kReportSchemaVersion = 1;

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline int decimals_for(Metric m) { return m == Metric::auc ? 3 : 2; }

/// "point (lower-upper)", or "NA" when undefined.
inline std::string format_estimate(const Estimate& e, Metric m) {
  if (!e.defined) return "NA";
  const int d = decimals_for(m);
  return format_fixed(e.point, d) + " (" + format_fixed(e.lower, d) + "-" + format_fixed(e.upper, d) + ")";
}

struct ResultRow {
  std::string dataset;
  std::string phase;
  std::string variant;
  MetricsReport metrics;
};

struct ResultsTable {
  std::vector<ResultRow> rows;
};

inline nlohmann::ordered_json estimate_to_json(const Estimate& e) {
  nlohmann::ordered_json j;
  j["defined"] = e.defined;
  j["point"] = e.point;
  j["lower"] = e.lower;
  j["upper"] = e.upper;
  return j;
}

inline Estimate estimate_from_json(const nlohmann::json& j) {
  return {j.at("point").get<double>(), j.at("lower").get<double>(), j.at("upper").get<double>(), j.at("defined").get<bool>()};
}

inline nlohmann::ordered_json metrics_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["dataset"] = r.dataset;
  j["phase"] = r.phase;
  j["seed"] = r.seed;
  j["n"] = r.n;
  for (Metric m : kAllMetrics) j[std::string(to_string(m))] = estimate_to_json(r.get(m));
  return j;
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.dataset = j.at("dataset").get<std::string>();
  r.phase = j.at("phase").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.n = j.at("n").get<std::size_t>();
  for (Metric m : kAllMetrics) r.get(m) = estimate_from_json(j.at(std::string(to_string(m))));
  return r;
}

inline nlohmann::ordered_json results_to_json(const ResultsTable& t) {
  nlohmann::ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : t.rows) {
    nlohmann::ordered_json r;
    r["dataset"] = row.dataset;
    r["phase"] = row.phase;
    r["variant"] = row.variant;
    r["metrics"] = metrics_to_json(row.metrics);
    j["rows"].push_back(std::move(r));
  }
  return j;
}

inline ResultsTable results_from_json(const nlohmann::json& j) {
  if (j.at("schema_version").get<int>() != kReportSchemaVersion)
    throw Error(ErrorCode::invalid_config, "unsupported results schema version");
  ResultsTable t;
  for (const auto& r : j.at("rows"))
    t.rows.push_back({r.at("dataset").get<std::string>(), r.at("phase").get<std::string>(), r.at("variant").get<std::string>(),
                      metrics_from_json(r.at("metrics"))});
  return t;
}

/// One row per (dataset, phase, variant); each metric contributes point, ci_low and ci_high columns.
inline std::string results_to_csv(const ResultsTable& t) {
  std::ostringstream out;
  out << "dataset,phase,variant,n";
  for (Metric m : kAllMetrics) out << ',' << to_string(m) << ',' << to_string(m) << "_ci_low," << to_string(m) << "_ci_high";
  out << '\n';
  for (const auto& row : t.rows) {
    out << row.dataset << ',' << row.phase << ',' << row.variant << ',' << row.metrics.n;
    for (Metric m : kAllMetrics) {
      const Estimate& e = row.metrics.get(m);
      if (!e.defined) {
        out << ",NA,NA,NA";
        continue;
      }
      const int d = decimals_for(m);
      out << ',' << format_fixed(e.point, d) << ',' << format_fixed(e.lower, d) << ',' << format_fixed(e.upper, d);
    }
    out << '\n';
  }
  return out.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_failure, "cannot open " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::io_failure, "write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

/// Writes `<base>.json` and/or `<base>.csv`; returns the paths written.
inline std::vector<std::filesystem::path> emit_report(const ResultsTable& t, const std::filesystem::path& base,
                                                      const std::vector<std::string>& formats) {
  std::vector<std::filesystem::path> written;
  for (const auto& f : formats) {
    std::filesystem::path p = base;
    if (f == "json") {
      p += ".json";
      write_text_file(p, results_to_json(t).dump(2) + "\n");
    } else if (f == "csv") {
      p += ".csv";
      write_text_file(p, results_to_csv(t));
    } else {
      throw Error(ErrorCode::invalid_config, "unknown report format " + f);
    }
    written.push_back(p);
  }
  return written;
}

/// Rows for one DEM run: {source, target} x {pretrained, screening, evolving}.
inline ResultsTable table_from_report(const DemReport& r, const std::string& variant = "DEM") {
  ResultsTable t;
  t.rows.push_back({"source", "pretrained", variant, r.source_column_source_test});
  t.rows.push_back({"target", "pretrained", variant, r.source_column_target_test});
  for (const PhaseResult* p : {&r.screening, &r.evolving}) {
    t.rows.push_back({"source", p->name, variant, p->source_test});
    t.rows.push_back({"target", p->name, variant, p->target_test});
  }
  return t;
}

/// Seed-averaged rows per (dataset, variant) for an ablation.
inline ResultsTable table_from_ablation(const AblationResult& a) {
  ResultsTable t;
  for (const auto& v : a.variants) {
    std::vector<MetricsReport> src, tgt;
    for (const auto* r : a.rows_for(v)) {
      src.push_back(r->source_test);
      tgt.push_back(r->target_test);
    }
    MetricsReport ms = mean_report(src), mt = mean_report(tgt);
    ms.dataset = "source";
    mt.dataset = "target";
    ms.phase = mt.phase = "final";
    t.rows.push_back({"source", "final", v, ms});
    t.rows.push_back({"target", "final", v, mt});
  }
  return t;
}

inline nlohmann::ordered_json ablation_to_json(const AblationResult& a) {
  nlohmann::ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["suite"] = a.suite;
  j["variants"] = a.variants;
  j["runs"] = nlohmann::ordered_json::array();
  for (const auto& r : a.rows) {
    nlohmann::ordered_json x;
    x["variant"] = r.variant;
    x["seed"] = r.seed;
    x["source_test"] = metrics_to_json(r.source_test);
    x["target_test"] = metrics_to_json(r.target_test);
    j["runs"].push_back(std::move(x));
  }
  j["summary"] = results_to_json(table_from_ablation(a))["rows"];
  return j;
}

inline nlohmann::ordered_json iteration_to_json(const IterationLog& l) {
  nlohmann::ordered_json j;
  j["phase"] = l.phase;
  j["iteration"] = l.iteration;
  j["rewards"] = l.rewards;
  j["best_reward"] = l.best_reward;
  j["beam_best_reward"] = l.beam_best_reward;
  j["beam_size"] = l.beam_size;
  j["delta_acc"] = l.delta_acc;
  j["lambda"] = l.lambda;
  j["mean_confidence"] = l.mean_confidence;
  j["pseudo_label_accuracy"] = l.pseudo_label_accuracy;
  return j;
}

/// Contents of phase_metrics.json.  No timestamps: equal runs give equal bytes.
inline nlohmann::ordered_json phase_metrics_json(const DemReport& r) {
  RunConfig rc;
  rc.loop_config = r.config;
  rc.loss_weights = r.weights;
  nlohmann::ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["loop_config"] = config_to_json(rc)["loop_config"];
  j["loss_weights"] = config_to_json(rc)["loss_weights"];
  j["pretrain"] = {{"epochs_run", r.pretrain_history.epochs_run},
                   {"best_epoch", r.pretrain_history.best_epoch},
                   {"initial_pseudo_label_accuracy", r.initial_pseudo_label_accuracy}};
  nlohmann::ordered_json phases;
  phases["pretrained"] = {{"source_test", metrics_to_json(r.source_column_source_test)},
                          {"target_test", metrics_to_json(r.source_column_target_test)}};
  for (const PhaseResult* p : {&r.screening, &r.evolving})
    phases[p->name] = {{"iterations_run", p->iterations_run},
                       {"stopped_by_patience", p->stopped_by_patience},
                       {"source_test", metrics_to_json(p->source_test)},
                       {"target_test", metrics_to_json(p->target_test)}};
  j["phases"] = std::move(phases);
  j["iterations"] = nlohmann::ordered_json::array();
  for (const auto& l : r.iterations) j["iterations"].push_back(iteration_to_json(l));
  j["beam"] = nlohmann::ordered_json::array();
  for (const auto& [ref, bytes] : r.beam_checkpoints) j["beam"].push_back(ref);
  return j;
}

/// Table rows recovered from a phase_metrics.json document.
inline ResultsTable table_from_phase_metrics(const nlohmann::json& j, const std::string& variant = "DEM") {
  if (j.at("schema_version").get<int>() != kReportSchemaVersion)
    throw Error(ErrorCode::invalid_config, "unsupported phase metrics schema version");
  ResultsTable t;
  for (const char* phase : {"pretrained", "screening", "evolving"}) {
    const auto& p = j.at("phases").at(phase);
    t.rows.push_back({"source", phase, variant, metrics_from_json(p.at("source_test"))});
    t.rows.push_back({"target", phase, variant, metrics_from_json(p.at("target_test"))});
  }
  return t;
}

/// pseudo_labels_final.csv: id,label,confidence.
inline std::string pseudo_labels_csv(std::span<const std::int64_t> ids, std::span<const int> labels, const Vector& confidence) {
  if (ids.size() != labels.size() || static_cast<Index>(ids.size()) != confidence.size())
    throw Error(ErrorCode::shape_mismatch, "pseudo-label columns differ in length");
  std::string out = "id,label,confidence\n";
  for (std::size_t i = 0; i < ids.size(); ++i)
    out += std::to_string(ids[i]) + ',' + std::to_string(labels[i]) + ',' + format_double(confidence(static_cast<Index>(i))) + '\n';
  return out;
}

}  // namespace dem
