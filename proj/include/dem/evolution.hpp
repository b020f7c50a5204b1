#pragma once

// The adaptation pipeline: source-led pretraining, screening (policy-driven
// subset selection), evolving (mutation + crossover of pseudo-label vectors),
// all feeding one reward-ordered beam, then evaluation on held-out target data.

#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "metrics.hpp"
#include "replay_buffer.hpp"
#include "training.hpp"

namespace dem {

struct LoopConfig {
  std::size_t beam_width = 5;
  int patience = 5;
  int screening_iterations = 30;
  int evolving_iterations = 30;
  int actions_per_iteration = 8;
  int action_epochs = 5;
  int crossover_children = 2;
  double alpha = 0.5;
  double beta = 0.01;
  std::uint64_t seed = 42;

  int pretrain_epochs = 200;
  int pretrain_patience = 20;
  int batch_size = 64;
  double learning_rate = 1e-4;
  double adapt_learning_rate = 1e-4;
  double policy_learning_rate = 1e-2;
  double selection_init_probability = 0.5;
  double mutation_init_probability = 0.05;
  double lambda_scale = 10.0;
  bool reward_baseline = true;

  double test_fraction = 0.2;
  int k_folds = 5;
  int bootstrap_resamples = 2000;

  bool scratch = false;            // every action trains a fresh column, no CBP
  bool calibration = true;         // false: fixed-threshold selection + uniform mutation
  bool adaptation_losses = true;   // false: w_disc = w_coral = w_mcd = 0
  bool source_column = true;       // false: target-only training, no source reuse
  double rf_threshold = 0.8;
  double rf_mutation_rate = 0.05;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::invalid_config, m); };
    if (beam_width < 1) fail("beam_width must be >= 1");
    if (patience < 1) fail("patience must be >= 1");
    if (screening_iterations < 1 || evolving_iterations < 1) fail("iteration budgets must be >= 1");
    if (actions_per_iteration < 1) fail("actions_per_iteration must be >= 1");
    if (action_epochs < 1) fail("action_epochs must be >= 1");
    if (crossover_children < 0) fail("crossover_children must be >= 0");
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must be in [0, 1]");
    if (!(beta >= 0.0)) fail("beta must be >= 0");
    if (pretrain_epochs < 1 || pretrain_patience < 1 || batch_size < 1) fail("training budgets must be >= 1");
    for (double lr : {learning_rate, adapt_learning_rate, policy_learning_rate})
      if (!(lr > 0.0)) fail("learning rates must be > 0");
    for (double p : {selection_init_probability, mutation_init_probability, rf_threshold, rf_mutation_rate})
      if (!(p >= 0.0 && p <= 1.0)) fail("probabilities and thresholds must be in [0, 1]");
    if (!(selection_init_probability > 0.0 && selection_init_probability < 1.0)) fail("selection_init_probability must be in (0, 1)");
    if (!(mutation_init_probability > 0.0 && mutation_init_probability < 1.0)) fail("mutation_init_probability must be in (0, 1)");
    if (!(lambda_scale > 0.0)) fail("lambda_scale must be > 0");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) fail("test_fraction must be in (0, 1)");
    if (k_folds < 2) fail("k_folds must be >= 2");
    if (bootstrap_resamples < 1) fail("bootstrap_resamples must be >= 1");
  }

  /// Loss weights actually used, after the variant switches.
  LossWeights effective_weights(const LossWeights& w) const {
    LossWeights out = adaptation_losses ? w : w.without_adaptation();
    if (!source_column) out.w_prox = 0.0;
    return out;
  }
};

/// Splits of both domains.  Target pool labels are hidden from training and
/// kept only for diagnostics.
struct PreparedData {
  DomainDataset source_train, source_val, source_test;
  DomainDataset target_pool;
  std::vector<int> target_pool_hidden;
  DomainDataset target_test;
};

inline PreparedData prepare_data(const DomainDataset& source, const DomainDataset& target, const LoopConfig& cfg) {
  if (!source.labeled()) throw Error(ErrorCode::degenerate_labels, "source domain must be labeled");
  if (!target.labeled()) throw Error(ErrorCode::degenerate_labels, "target domain needs held-out labels for evaluation");
  if (source.dim() != target.dim()) throw Error(ErrorCode::shape_mismatch, "source and target widths differ");
  PreparedData d;
  const SplitPlan sp = make_split(source, cfg.test_fraction, cfg.k_folds, derive_seed(cfg.seed, 5));
  d.source_train = source.subset(sp.train_indices);
  d.source_val = source.subset(sp.val_indices);
  d.source_test = source.subset(sp.test_indices);
  const SplitPlan tp = make_split(target, cfg.test_fraction, cfg.k_folds, derive_seed(cfg.seed, 6));
  std::vector<Index> pool = tp.train_indices;
  pool.insert(pool.end(), tp.val_indices.begin(), tp.val_indices.end());
  std::sort(pool.begin(), pool.end());
  const DomainDataset labeled_pool = target.subset(pool);
  d.target_pool_hidden = *labeled_pool.labels;
  d.target_pool = labeled_pool.without_labels();
  d.target_test = target.subset(tp.test_indices);
  return d;
}

/// Sample ids of every split, so a later stage can rebuild the same PreparedData.
struct SplitIds {
  std::vector<std::int64_t> source_train, source_val, source_test, target_pool, target_test;
};

inline SplitIds split_ids(const PreparedData& d) {
  return {d.source_train.sample_ids, d.source_val.sample_ids, d.source_test.sample_ids, d.target_pool.sample_ids,
          d.target_test.sample_ids};
}

inline PreparedData prepare_data_from_ids(const DomainDataset& source, const DomainDataset& target, const SplitIds& ids) {
  if (!source.labeled() || !target.labeled()) throw Error(ErrorCode::degenerate_labels, "both domains must carry labels");
  auto rows_of = [](const DomainDataset& data, const std::vector<std::int64_t>& wanted) {
    std::map<std::int64_t, Index> where;
    for (std::size_t i = 0; i < data.sample_ids.size(); ++i) where.emplace(data.sample_ids[i], static_cast<Index>(i));
    std::vector<Index> rows;
    for (auto id : wanted) {
      auto it = where.find(id);
      if (it == where.end()) throw Error(ErrorCode::index_out_of_range, "split refers to unknown sample id " + std::to_string(id));
      rows.push_back(it->second);
    }
    return rows;
  };
  PreparedData d;
  d.source_train = source.subset(rows_of(source, ids.source_train));
  d.source_val = source.subset(rows_of(source, ids.source_val));
  d.source_test = source.subset(rows_of(source, ids.source_test));
  const DomainDataset pool = target.subset(rows_of(target, ids.target_pool));
  d.target_pool_hidden = *pool.labels;
  d.target_pool = pool.without_labels();
  d.target_test = target.subset(rows_of(target, ids.target_test));
  return d;
}

inline std::vector<int> threshold_labels(const Vector& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.size()));
  for (Index i = 0; i < probs.size(); ++i) out[static_cast<std::size_t>(i)] = probs(i) > 0.5 ? 1 : 0;
  return out;
}

inline double label_accuracy(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size() || a.empty()) throw Error(ErrorCode::shape_mismatch, "label vectors differ in length");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

/// Per-index fair coin between two parents.
inline std::vector<int> uniform_crossover(std::span<const int> a, std::span<const int> b, Rng& rng) {
  if (a.size() != b.size()) throw Error(ErrorCode::shape_mismatch, "crossover parents differ in length");
  std::vector<int> child(a.begin(), a.end());
  for (std::size_t i = 0; i < child.size(); ++i)
    if (uniform01(rng) < 0.5) child[i] = b[i];
  return child;
}

struct PretrainResult {
  ModelColumn source_column;  // frozen
  std::vector<int> pseudo_labels;
  ConfidenceState confidence;
  TrainHistory history;
};

/// Trains the source column on the source_pretrain joint loss, freezes it and
/// labels the target pool with its thresholded predictions.
inline PretrainResult pretrain_source_led(const DomainDataset& source_train, const DomainDataset& source_val,
                                          const DomainDataset& target_unlabeled, const LoopConfig& cfg,
                                          const LossWeights& weights) {
  cfg.validate();
  const LossWeights w = cfg.effective_weights(weights);
  w.validate();
  Rng init_rng = make_rng(cfg.seed, 41);
  ModelColumn column = ModelColumn::initialized(ColumnShape{source_train.dim()}, init_rng);
  TrainConfig tc{cfg.pretrain_epochs, cfg.batch_size, cfg.pretrain_patience, cfg.learning_rate, derive_seed(cfg.seed, 42)};
  PretrainResult r{ModelColumn(ColumnParams::zeros(ColumnShape{source_train.dim()})), {}, {}, {}};
  r.history = train_source_led(column, source_train, source_val, target_unlabeled.features, w, tc);
  column.freeze();
  const Vector p = predict_probabilities(column, target_unlabeled.features);
  r.pseudo_labels = threshold_labels(p);
  r.confidence = ConfidenceState::from_probabilities(p, cfg.lambda_scale);
  r.source_column = std::move(column);
  return r;
}

/// Outcome of training one candidate column.
struct CandidateEval {
  Checkpoint checkpoint;
  double reward = 0.0;
  Vector pool_probs;  // mean-head probabilities over the target pool
};

/// (base checkpoint, per-pool-row training labels with -1 = unused, rng stream) -> evaluation.
using ActionEvaluator = std::function<CandidateEval(const Checkpoint&, const std::vector<int>&, std::uint64_t)>;

struct IterationLog {
  std::string phase;
  int iteration = 0;
  std::vector<double> rewards;
  double best_reward = 0.0;
  double beam_best_reward = 0.0;
  std::size_t beam_size = 0;
  double delta_acc = 0.0;
  double lambda = 0.5;
  double mean_confidence = 0.0;
  double pseudo_label_accuracy = 0.0;  // diagnostic against the hidden pool labels
};

struct PhaseResult {
  std::string name;
  int iterations_run = 0;
  bool stopped_by_patience = false;
  MetricsReport target_test;
  MetricsReport source_test;
};

struct DemReport {
  LoopConfig config;
  LossWeights weights;
  MetricsReport source_column_source_test;
  MetricsReport source_column_target_test;
  double initial_pseudo_label_accuracy = 0.0;
  TrainHistory pretrain_history;
  PhaseResult screening;
  PhaseResult evolving;
  std::vector<IterationLog> iterations;
  std::vector<std::int64_t> pool_ids;
  std::vector<int> final_pseudo_labels;
  Vector final_confidence;
  Checkpoint final_checkpoint;
  std::vector<std::pair<std::string, std::string>> beam_checkpoints;  // (ref, serialized bytes), beam order
};

inline MetricsReport evaluate_column(const ModelColumn& column, const DomainDataset& data, const std::string& dataset,
                                     const std::string& phase, const LoopConfig& cfg) {
  const Vector p = predict_probabilities(column, data.features);
  MetricsReport r = evaluate_with_ci(p, *data.labels, cfg.bootstrap_resamples, derive_seed(cfg.seed, 9));
  r.dataset = dataset;
  r.phase = phase;
  r.seed = cfg.seed;
  return r;
}

class DemRun {
 public:
  DemRun(PreparedData data, LoopConfig cfg, LossWeights weights)
      : data_(std::move(data)), cfg_(cfg), weights_(cfg.effective_weights(weights)), beam_(cfg.beam_width) {
    cfg_.validate();
    weights_.validate();
    evaluator_ = [this](const Checkpoint& base, const std::vector<int>& labels, std::uint64_t stream) {
      return train_candidate(base, labels, stream);
    };
  }

  void set_evaluator(ActionEvaluator e) { evaluator_ = std::move(e); }

  /// Force every selection/mutation probability to a constant (tests and controls).
  void force_action_probability(std::optional<double> p) { forced_probability_ = p; }

  void pretrain() {
    auto r = pretrain_source_led(data_.source_train, data_.source_val, data_.target_pool, cfg_, weights_);
    install_pretrained(std::move(r));
  }

  /// Accepts an externally produced pretraining result (e.g. loaded from disk).
  void install_pretrained(PretrainResult r) {
    if (!r.source_column.frozen()) throw Error(ErrorCode::invalid_config, "source column must be frozen");
    if (static_cast<Index>(r.pseudo_labels.size()) != data_.target_pool.size())
      throw Error(ErrorCode::shape_mismatch, "pseudo-labels do not cover the target pool");
    pretrained_ = std::move(r);
    pseudo_labels_ = pretrained_->pseudo_labels;
    confidence_ = pretrained_->confidence;
    Rng sel_rng = make_rng(cfg_.seed, 71), mut_rng = make_rng(cfg_.seed, 72);
    selection_policy_ = PolicyModel::initialized(sel_rng, cfg_.policy_learning_rate, cfg_.selection_init_probability);
    mutation_policy_ = PolicyModel::initialized(mut_rng, cfg_.policy_learning_rate, cfg_.mutation_init_probability);
    initial_ = fresh_checkpoint(cfg_.source_column && !cfg_.scratch ? &pretrained_->source_column : nullptr, 61);
  }

  bool pretrained() const { return pretrained_.has_value(); }
  const PretrainResult& pretrain_result() const { return *pretrained_; }
  const ReplayBuffer& beam() const { return beam_; }
  const ConfidenceState& confidence() const { return confidence_; }
  const std::vector<IterationLog>& iterations() const { return logs_; }
  const PreparedData& data() const { return data_; }
  const PolicyModel& selection_policy() const { return selection_policy_; }
  const PolicyModel& mutation_policy() const { return mutation_policy_; }

  /// The column at the head of the beam (the initial column while the beam is empty).
  Checkpoint best_checkpoint() const { return beam_.empty() ? initial_ : store_.at(beam_.best().checkpoint_ref); }
  const std::vector<int>& current_pseudo_labels() const { return beam_.empty() ? pseudo_labels_ : beam_.best().pseudo_labels; }

  PhaseResult screening_phase() {
    require_pretrained();
    PhaseResult result{"screening", 0, false, {}, {}};
    run_phase(result, cfg_.screening_iterations, [this](int it) { return screening_iteration(it); });
    evaluate_phase(result);
    return result;
  }

  PhaseResult evolving_phase() {
    require_pretrained();
    if (beam_.empty()) throw Error(ErrorCode::empty_batch, "evolving phase needs a non-empty beam");
    PhaseResult result{"evolving", 0, false, {}, {}};
    run_phase(result, cfg_.evolving_iterations, [this](int it) { return evolving_iteration(it); });
    evaluate_phase(result);
    return result;
  }

  DemReport run() {
    if (!pretrained_) pretrain();
    DemReport report;
    report.config = cfg_;
    report.weights = weights_;
    report.pretrain_history = pretrained_->history;
    report.source_column_source_test = evaluate_column(pretrained_->source_column, data_.source_test, "source", "pretrained", cfg_);
    report.source_column_target_test = evaluate_column(pretrained_->source_column, data_.target_test, "target", "pretrained", cfg_);
    report.initial_pseudo_label_accuracy = label_accuracy(pretrained_->pseudo_labels, data_.target_pool_hidden);
    report.screening = screening_phase();
    report.evolving = evolving_phase();
    report.iterations = logs_;
    report.pool_ids = data_.target_pool.sample_ids;
    report.final_pseudo_labels = current_pseudo_labels();
    report.final_confidence = confidence_.prev;
    report.final_checkpoint = best_checkpoint();
    for (const auto& c : beam_.beam()) report.beam_checkpoints.emplace_back(c.checkpoint_ref, serialize_checkpoint(store_.at(c.checkpoint_ref)));
    return report;
  }

 private:
  void require_pretrained() const {
    if (!pretrained_) throw Error(ErrorCode::invalid_config, "pretraining has not run");
  }

  Rng action_rng(int phase, int iteration, int action) const {
    return make_rng(derive_seed(derive_seed(cfg_.seed, 1000 + static_cast<std::uint64_t>(phase)), static_cast<std::uint64_t>(iteration)),
                    static_cast<std::uint64_t>(action));
  }

  std::uint64_t action_stream(int phase, int iteration, int action) const {
    return derive_seed(derive_seed(derive_seed(cfg_.seed, 2000 + static_cast<std::uint64_t>(phase)), static_cast<std::uint64_t>(iteration)),
                       static_cast<std::uint64_t>(action));
  }

  Checkpoint fresh_checkpoint(const ModelColumn* warm, std::uint64_t stream) const {
    Rng rng = make_rng(cfg_.seed, stream);
    ModelColumn column = warm ? warm->thawed_copy() : ModelColumn::initialized(ColumnShape{data_.target_pool.dim()}, rng);
    const OptimizerState opt = OptimizerState::for_size(column.params().size(), cfg_.adapt_learning_rate);
    return make_checkpoint(column, opt, rng, UtilityState::for_shape(column.shape()));
  }

  /// Default evaluator: warm-start (or fresh start) training, then reward.
  CandidateEval train_candidate(const Checkpoint& base, const std::vector<int>& labels, std::uint64_t stream) {
    Rng rng = make_rng(stream, 0);
    Checkpoint start = cfg_.scratch ? fresh_checkpoint(nullptr, stream) : base;
    ModelColumn column = start.column();
    OptimizerState opt = start.optimizer;
    UtilityState utility = start.utility;
    AdaptOptions options{cfg_.action_epochs, cfg_.batch_size, !cfg_.scratch, cfg_.source_column};
    const ModelColumn* reference = cfg_.source_column ? &pretrained_->source_column : nullptr;
    adapt_column(column, opt, &utility, data_.source_train, data_.target_pool.features, labels, reference, weights_, options, rng);

    std::vector<Index> rows;
    std::vector<int> selected;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] >= 0) {
        rows.push_back(static_cast<Index>(i));
        selected.push_back(labels[i]);
      }
    CandidateEval out;
    const double alpha = cfg_.source_column ? cfg_.alpha : 0.0;
    out.reward = compute_reward(column, data_.source_val, detail::gather_rows(data_.target_pool.features, rows), selected, alpha);
    out.pool_probs = predict_probabilities(column, data_.target_pool.features);
    out.checkpoint = make_checkpoint(column, opt, rng, utility);
    return out;
  }

  /// Per-sample policy inputs: calibrated confidence, model probability of the
  /// current pseudo-label, and twin-head disagreement.
  Matrix policy_features(const ModelColumn& base, const std::vector<int>& labels) const {
    const HeadProbabilities h = predict_heads(base, data_.target_pool.features);
    const Vector p = h.mean();
    Matrix f(p.size(), kPolicyInputs);
    for (Index i = 0; i < p.size(); ++i) {
      f(i, 0) = confidence_.prev(i);
      f(i, 1) = labels[static_cast<std::size_t>(i)] == 1 ? p(i) : 1.0 - p(i);
      f(i, 2) = std::abs(h.a(i) - h.b(i));
    }
    return f;
  }

  std::string store(const Checkpoint& c) {
    const std::string bytes = serialize_checkpoint(c);
    std::string ref = content_hash(bytes);
    store_.emplace(ref, c);
    return ref;
  }

  void prune_store() {
    std::map<std::string, Checkpoint> kept;
    for (const auto& c : beam_.beam()) kept.emplace(c.checkpoint_ref, store_.at(c.checkpoint_ref));
    store_ = std::move(kept);
  }

  bool in_beam(const std::string& ref) const {
    for (const auto& c : beam_.beam())
      if (c.checkpoint_ref == ref) return true;
    return false;
  }

  /// Inserts unless the candidate duplicates a beam entry or has a single class.
  void offer(BeamCandidate c, const Checkpoint& ckpt) {
    if (!has_both_classes(c.pseudo_labels)) return;
    c.checkpoint_ref = store(ckpt);
    if (std::count_if(beam_.beam().begin(), beam_.beam().end(), [&](const BeamCandidate& e) {
          return e.checkpoint_ref == c.checkpoint_ref && e.pseudo_labels == c.pseudo_labels;
        }) > 0)
      return;
    beam_.insert(std::move(c));
    prune_store();
  }

  double previous_best() const { return logs_.empty() ? std::numeric_limits<double>::quiet_NaN() : logs_.back().best_reward; }

  void calibrate(IterationLog& log, std::span<const Index> subset, const Vector& candidate_probs) {
    const double prev = previous_best();
    log.delta_acc = std::isnan(prev) ? 0.0 : log.best_reward - prev;
    log.lambda = compute_lambda(log.delta_acc, confidence_.lambda_scale);
    if (cfg_.calibration && !subset.empty()) {
      Vector curr(static_cast<Index>(subset.size()));
      for (std::size_t j = 0; j < subset.size(); ++j) {
        const double p = candidate_probs(subset[j]);
        curr(static_cast<Index>(j)) = std::max(p, 1.0 - p);
      }
      confidence_ = update_confidences_with_lambda(confidence_, subset, curr, log.lambda);
    }
    log.mean_confidence = confidence_.prev.mean();
  }

  void finish_log(IterationLog& log) {
    log.beam_size = beam_.size();
    log.beam_best_reward = beam_.empty() ? 0.0 : beam_.best().reward;
    log.pseudo_label_accuracy = label_accuracy(current_pseudo_labels(), data_.target_pool_hidden);
    logs_.push_back(log);
  }

  IterationLog screening_iteration(int it) {
    IterationLog log{"screening", it, {}, 0.0, 0.0, 0, 0.0, 0.5, 0.0, 0.0};
    const Checkpoint base = best_checkpoint();
    const std::vector<int> labels = current_pseudo_labels();
    ActionBatch batch;
    batch.kind = ActionKind::selection;
    batch.beta = cfg_.beta;
    batch.features = policy_features(base.column(), labels);
    Vector probs;
    if (forced_probability_) probs = Vector::Constant(batch.features.rows(), *forced_probability_);
    else if (cfg_.calibration) probs = policy_probabilities(selection_policy_, batch.features);
    else probs = confidence_.init.unaryExpr([&](double c) { return c >= cfg_.rf_threshold ? 1.0 : 0.0; });
    const std::span<const double> ps(probs.data(), static_cast<std::size_t>(probs.size()));

    int best = -1;
    std::vector<CandidateEval> evals;
    std::vector<Mask> masks;
    for (int n = 0; n < cfg_.actions_per_iteration; ++n) {
      Rng rng = action_rng(0, it, n);
      SelectionAction a = sample_selection_from(ps, rng);
      auto empty = [](const Mask& m) { return std::find(m.begin(), m.end(), 1) == m.end(); };
      if (empty(a.mask)) a = sample_selection_from(ps, rng);
      if (empty(a.mask)) continue;
      std::vector<int> train(labels.size(), -1);
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (a.mask[i]) train[i] = labels[i];
      CandidateEval e = evaluator_(base, train, action_stream(0, it, n));
      batch.add(a.mask, a.joint_logp, a.entropy, e.reward);
      log.rewards.push_back(e.reward);
      if (best < 0 || e.reward > evals[static_cast<std::size_t>(best)].reward) best = static_cast<int>(evals.size());
      evals.push_back(std::move(e));
      masks.push_back(std::move(a.mask));
    }
    if (best < 0) return log;  // every action came up empty: skipped iteration
    if (cfg_.calibration && !forced_probability_) update_policy(selection_policy_, batch, cfg_.reward_baseline);

    const CandidateEval& winner = evals[static_cast<std::size_t>(best)];
    const Mask& mask = masks[static_cast<std::size_t>(best)];
    log.best_reward = winner.reward;
    std::vector<Index> subset;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) subset.push_back(static_cast<Index>(i));
    calibrate(log, subset, winner.pool_probs);
    offer(BeamCandidate{threshold_labels(winner.pool_probs), mask, confidence_, winner.reward, "", it}, winner.checkpoint);
    return log;
  }

  IterationLog evolving_iteration(int it) {
    IterationLog log{"evolving", it, {}, 0.0, 0.0, 0, 0.0, 0.5, 0.0, 0.0};
    const BeamCandidate parent = beam_.best();
    const Checkpoint base = store_.at(parent.checkpoint_ref);
    ActionBatch batch;
    batch.kind = ActionKind::mutation;
    batch.beta = cfg_.beta;
    batch.features = policy_features(base.column(), parent.pseudo_labels);
    Vector probs;
    if (forced_probability_) probs = Vector::Constant(batch.features.rows(), *forced_probability_);
    else if (cfg_.calibration) probs = policy_probabilities(mutation_policy_, batch.features);
    else probs = Vector::Constant(batch.features.rows(), cfg_.rf_mutation_rate);
    const std::span<const double> ps(probs.data(), static_cast<std::size_t>(probs.size()));

    // Children keep the parent's selection; only their labels evolve.
    auto training_labels = [&](const std::vector<int>& labels) {
      std::vector<int> train(labels.size(), -1);
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (parent.selection[i]) train[i] = labels[i];
      return train;
    };
    struct Child {
      std::vector<int> labels;
      CandidateEval eval;
      bool trained = false;
    };
    auto make_child = [&](std::vector<int> labels, std::uint64_t stream) {
      Child c{std::move(labels), {}, false};
      if (c.labels == parent.pseudo_labels) {
        c.eval.reward = parent.reward;  // identical to the parent: nothing to train
      } else {
        c.eval = evaluator_(base, training_labels(c.labels), stream);
        c.trained = true;
      }
      return c;
    };
    std::vector<Child> children;
    for (int n = 0; n < cfg_.actions_per_iteration; ++n) {
      Rng rng = action_rng(1, it, n);
      MutationAction a = sample_mutation_from(ps, parent.pseudo_labels, rng);
      Child c = make_child(std::move(a.labels), action_stream(1, it, n));
      batch.add(a.mask, a.joint_logp, a.entropy, c.eval.reward);
      log.rewards.push_back(c.eval.reward);
      children.push_back(std::move(c));
    }
    if (beam_.size() >= 2) {
      const BeamCandidate& other = beam_.beam()[1];
      for (int c = 0; c < cfg_.crossover_children; ++c) {
        Rng rng = action_rng(2, it, c);
        children.push_back(make_child(uniform_crossover(parent.pseudo_labels, other.pseudo_labels, rng), action_stream(2, it, c)));
        log.rewards.push_back(children.back().eval.reward);
      }
    }
    if (cfg_.calibration && !forced_probability_) update_policy(mutation_policy_, batch, cfg_.reward_baseline);

    int best = -1;
    for (std::size_t i = 0; i < children.size(); ++i)
      if (children[i].trained && (best < 0 || children[i].eval.reward > children[static_cast<std::size_t>(best)].eval.reward))
        best = static_cast<int>(i);
    if (best < 0) {
      log.best_reward = parent.reward;
      log.delta_acc = 0.0;
      log.mean_confidence = confidence_.prev.mean();
      return log;
    }
    const Child& winner = children[static_cast<std::size_t>(best)];
    log.best_reward = winner.eval.reward;
    std::vector<Index> subset;
    for (std::size_t i = 0; i < parent.selection.size(); ++i)
      if (parent.selection[i]) subset.push_back(static_cast<Index>(i));
    calibrate(log, subset, winner.eval.pool_probs);
    offer(BeamCandidate{winner.labels, parent.selection, confidence_, winner.eval.reward, "", it}, winner.eval.checkpoint);
    return log;
  }

  template <typename Step>
  void run_phase(PhaseResult& result, int max_iterations, Step&& step) {
    double best = beam_.empty() ? -std::numeric_limits<double>::infinity() : beam_.best().reward;
    int since = 0;
    for (int it = 1; it <= max_iterations; ++it) {
      IterationLog log = step(it);
      finish_log(log);
      result.iterations_run = it;
      const double now = beam_.empty() ? -std::numeric_limits<double>::infinity() : beam_.best().reward;
      if (now > best) {
        best = now;
        since = 0;
      } else if (++since >= cfg_.patience) {
        result.stopped_by_patience = it < max_iterations;
        break;
      }
    }
  }

  void evaluate_phase(PhaseResult& result) {
    const ModelColumn column = best_checkpoint().column();
    result.target_test = evaluate_column(column, data_.target_test, "target", result.name, cfg_);
    result.source_test = evaluate_column(column, data_.source_test, "source", result.name, cfg_);
  }

  PreparedData data_;
  LoopConfig cfg_;
  LossWeights weights_;
  ReplayBuffer beam_;
  std::optional<PretrainResult> pretrained_;
  std::vector<int> pseudo_labels_;
  ConfidenceState confidence_;
  PolicyModel selection_policy_;
  PolicyModel mutation_policy_;
  Checkpoint initial_;
  std::map<std::string, Checkpoint> store_;
  std::vector<IterationLog> logs_;
  ActionEvaluator evaluator_;
  std::optional<double> forced_probability_;
};

inline DemReport run_dem(const DomainDataset& source, const DomainDataset& target, const LoopConfig& cfg,
                         const LossWeights& weights = {}) {
  DemRun run(prepare_data(source, target, cfg), cfg, weights);
  return run.run();
}

struct BaselineResult {
  MetricsReport source_test;
  MetricsReport target_test;
  TrainHistory history;
};

/// Plain supervised training on source labels only, on the same splits as run_dem.
inline BaselineResult source_only_baseline(const DomainDataset& source, const DomainDataset& target, const LoopConfig& cfg) {
  const PreparedData d = prepare_data(source, target, cfg);
  Rng init_rng = make_rng(cfg.seed, 41);
  ModelColumn column = ModelColumn::initialized(ColumnShape{source.dim()}, init_rng);
  TrainConfig tc{cfg.pretrain_epochs, cfg.batch_size, cfg.pretrain_patience, cfg.learning_rate, derive_seed(cfg.seed, 43)};
  BaselineResult r;
  r.history = train_supervised(column, d.source_train, d.source_val, tc);
  r.source_test = evaluate_column(column, d.source_test, "source", "source_only", cfg);
  r.target_test = evaluate_column(column, d.target_test, "target", "source_only", cfg);
  return r;
}

}  // namespace dem
