// Command-line driver.  Exit codes: 0 success, 2 invalid config, 3 data
// error, 4 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <sstream>

#include <CLI11.hpp>

#include "dem/dem.hpp"

namespace fs = std::filesystem;
using namespace dem;

namespace {

RunConfig load_or_default(const std::string& path) {
  RunConfig c = path.empty() ? RunConfig{} : load_config(path);
  apply_seed_override(c);
  return c;
}

nlohmann::ordered_json ids_to_json(const SplitIds& s) {
  nlohmann::ordered_json j;
  j["source_train"] = s.source_train;
  j["source_val"] = s.source_val;
  j["source_test"] = s.source_test;
  j["target_pool"] = s.target_pool;
  j["target_test"] = s.target_test;
  return j;
}

SplitIds ids_from_json(const nlohmann::json& j) {
  auto get = [&](const char* key) {
    if (!j.contains(key)) throw Error(ErrorCode::invalid_config, std::string("split.json lacks ") + key);
    return j.at(key).get<std::vector<std::int64_t>>();
  };
  return {get("source_train"), get("source_val"), get("source_test"), get("target_pool"), get("target_test")};
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io_failure, "cannot create " + dir.string() + ": " + ec.message());
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_config, path.string() + " is not valid JSON: " + e.what());
  }
}

int cmd_gen(const std::string& spec_path, const std::string& out_source, const std::string& out_target) {
  const RunConfig c = load_or_default(spec_path);
  const auto [source, target] = generate_domain_pair(c.shift_spec);
  save_dataset_csv(out_source, source);
  save_dataset_csv(out_target, target);
  std::printf("wrote %lld source and %lld target rows\n", static_cast<long long>(source.size()),
              static_cast<long long>(target.size()));
  return 0;
}

int cmd_pretrain(const std::string& source_path, const std::string& target_path, const std::string& out,
                 const std::string& config_path) {
  const RunConfig c = load_or_default(config_path);
  const DomainDataset source = load_dataset_csv(source_path);
  const DomainDataset target = load_dataset_csv(target_path);
  const PreparedData data = prepare_data(source, target, c.loop_config);
  const PretrainResult r = pretrain_source_led(data.source_train, data.source_val, data.target_pool, c.loop_config, c.loss_weights);

  const fs::path dir(out);
  ensure_dir(dir);
  write_text_file(dir / "config.json", config_to_json(c).dump(2) + "\n");
  write_text_file(dir / "split.json", ids_to_json(split_ids(data)).dump() + "\n");
  save_dataset_csv((dir / "source.csv").string(), source);
  save_dataset_csv((dir / "target.csv").string(), target);
  Rng rng = make_rng(c.loop_config.seed, 41);
  const OptimizerState opt = OptimizerState::for_size(r.source_column.params().size(), c.loop_config.learning_rate);
  save_checkpoint((dir / "source_column.ckpt").string(),
                  make_checkpoint(r.source_column, opt, rng, UtilityState::for_shape(r.source_column.shape())));
  write_text_file(dir / "pseudo_labels_init.csv", pseudo_labels_csv(data.target_pool.sample_ids, r.pseudo_labels, r.confidence.init));

  const MetricsReport src = evaluate_column(r.source_column, data.source_test, "source", "pretrained", c.loop_config);
  nlohmann::ordered_json pm;
  pm["schema_version"] = kReportSchemaVersion;
  pm["epochs_run"] = r.history.epochs_run;
  pm["best_epoch"] = r.history.best_epoch;
  pm["source_test"] = metrics_to_json(src);
  write_text_file(dir / "pretrain_metrics.json", pm.dump(2) + "\n");
  std::printf("source test ACC %s after %d epochs\n", format_estimate(src.accuracy, Metric::accuracy).c_str(),
              r.history.epochs_run);
  return 0;
}

int cmd_adapt(const std::string& run_dir, bool scratch, bool no_calibration, bool no_adaptation) {
  const fs::path dir(run_dir);
  RunConfig c = config_from_json(read_json(dir / "config.json"));
  apply_seed_override(c);
  if (scratch) c.loop_config.scratch = true;
  if (no_calibration) c.loop_config.calibration = false;
  if (no_adaptation) c.loop_config.adaptation_losses = false;
  c.loop_config.validate();

  const DomainDataset source = load_dataset_csv((dir / "source.csv").string());
  const DomainDataset target = load_dataset_csv((dir / "target.csv").string());
  PreparedData data = prepare_data_from_ids(source, target, ids_from_json(read_json(dir / "split.json")));

  ModelColumn column = load_checkpoint((dir / "source_column.ckpt").string()).column();
  column.freeze();
  const Vector p = predict_probabilities(column, data.target_pool.features);
  PretrainResult pre{std::move(column), threshold_labels(p), ConfidenceState::from_probabilities(p, c.loop_config.lambda_scale), {}};
  const nlohmann::json pm = read_json(dir / "pretrain_metrics.json");
  pre.history.epochs_run = pm.at("epochs_run").get<int>();
  pre.history.best_epoch = pm.at("best_epoch").get<int>();

  DemRun run(std::move(data), c.loop_config, c.loss_weights);
  run.install_pretrained(std::move(pre));
  const DemReport rep = run.run();

  write_text_file(dir / "config.json", config_to_json(c).dump(2) + "\n");
  write_text_file(dir / "phase_metrics.json", phase_metrics_json(rep).dump(2) + "\n");
  const fs::path beam = dir / "beam";
  std::error_code ec;
  fs::remove_all(beam, ec);
  ensure_dir(beam);
  for (std::size_t i = 0; i < rep.beam_checkpoints.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%02zu_", i);
    write_text_file(beam / (name + rep.beam_checkpoints[i].first + ".ckpt"), rep.beam_checkpoints[i].second);
  }
  write_text_file(dir / "pseudo_labels_final.csv", pseudo_labels_csv(rep.pool_ids, rep.final_pseudo_labels, rep.final_confidence));
  std::printf("target test ACC screening %s, evolving %s\n",
              format_estimate(rep.screening.target_test.accuracy, Metric::accuracy).c_str(),
              format_estimate(rep.evolving.target_test.accuracy, Metric::accuracy).c_str());
  return 0;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_ablate(const std::string& suite_name, const std::string& seeds_text, const std::string& config_path,
               const std::string& out) {
  const Suite suite = parse_suite(suite_name);
  RunConfig c = load_or_default(config_path);
  if (config_path.empty()) c.shift_spec = benchmark_spec();
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(seeds_text)) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw Error(ErrorCode::invalid_config, "bad seed '" + s + "'");
    }
  }
  const AblationResult a = run_ablation(suite, c.shift_spec, c.loop_config, c.loss_weights, seeds);
  const ResultsTable t = table_from_ablation(a);
  for (const auto& row : t.rows)
    std::printf("%-18s %-7s ACC %s  AUC %s\n", row.variant.c_str(), row.dataset.c_str(),
                format_estimate(row.metrics.accuracy, Metric::accuracy).c_str(), format_estimate(row.metrics.auc, Metric::auc).c_str());
  if (!out.empty()) {
    const fs::path dir(out);
    ensure_dir(dir);
    const std::string base = "ablation_" + std::string(to_string(suite));
    write_text_file(dir / (base + "_runs.json"), ablation_to_json(a).dump(2) + "\n");
    emit_report(t, dir / base, {"json", "csv"});
  }
  return 0;
}

int cmd_report(const std::string& run_dir, const std::string& formats) {
  const fs::path dir(run_dir);
  const ResultsTable t = table_from_phase_metrics(read_json(dir / "phase_metrics.json"));
  for (const auto& p : emit_report(t, dir / "results", split_list(formats))) std::printf("wrote %s\n", p.string().c_str());
  for (const auto& row : t.rows)
    std::printf("%-7s %-10s ACC %s  SEN %s  SPE %s  AUC %s\n", row.dataset.c_str(), row.phase.c_str(),
                format_estimate(row.metrics.accuracy, Metric::accuracy).c_str(),
                format_estimate(row.metrics.sensitivity, Metric::sensitivity).c_str(),
                format_estimate(row.metrics.specificity, Metric::specificity).c_str(),
                format_estimate(row.metrics.auc, Metric::auc).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pseudo-label evolution for cross-domain binary classification"};
  app.require_subcommand(1);

  std::string spec, out_source, out_target;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic source/target pair");
  gen->add_option("--spec", spec, "Config JSON whose shift_spec section describes the pair");
  gen->add_option("--out-source", out_source, "Source CSV")->required();
  gen->add_option("--out-target", out_target, "Target CSV")->required();

  std::string source, target, out, config;
  auto* pretrain = app.add_subcommand("pretrain", "Train and freeze the source column; start a run directory");
  pretrain->add_option("--source", source, "Labeled source CSV")->required();
  pretrain->add_option("--target", target, "Target CSV (labels are used for held-out evaluation only)")->required();
  pretrain->add_option("--out", out, "Run directory")->required();
  pretrain->add_option("--config", config, "Config JSON");

  std::string run_dir;
  bool scratch = false, no_calibration = false, no_adaptation = false;
  auto* adapt = app.add_subcommand("adapt", "Run screening and evolving on a pretrained run directory");
  adapt->add_option("--run", run_dir, "Run directory from pretrain")->required();
  adapt->add_flag("--scratch", scratch, "Train every action from a fresh column");
  adapt->add_flag("--no-calibration", no_calibration, "Fixed-threshold selection and uniform mutation");
  adapt->add_flag("--no-adaptation-losses", no_adaptation, "Disable discriminator, CORAL and discrepancy terms");

  std::string suite, seeds = "1,2,3,4,5", ablate_out;
  auto* ablate = app.add_subcommand("ablate", "Run an ablation suite on the rotation benchmark");
  ablate->add_option("--suite", suite, "framework, reinit or calibration")->required();
  ablate->add_option("--seeds", seeds, "Comma-separated seeds");
  ablate->add_option("--config", config, "Config JSON (its shift_spec replaces the default benchmark)");
  ablate->add_option("--out", ablate_out, "Directory for JSON/CSV output");

  std::string formats = "json,csv";
  auto* report = app.add_subcommand("report", "Emit JSON/CSV tables from a run directory");
  report->add_option("--run", run_dir, "Run directory")->required();
  report->add_option("--format", formats, "Comma-separated formats: json, csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen(spec, out_source, out_target);
    if (*pretrain) return cmd_pretrain(source, target, out, config);
    if (*adapt) return cmd_adapt(run_dir, scratch, no_calibration, no_adaptation);
    if (*ablate) return cmd_ablate(suite, seeds, config, ablate_out);
    if (*report) return cmd_report(run_dir, formats);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
