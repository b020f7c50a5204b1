#pragma once

// Bernoulli action policies for subset selection and pseudo-label mutation,
// the entropy-regularized score-function loss, and the action reward.

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "nn_core.hpp"
#include "synth_domains.hpp"

namespace dem {

inline constexpr double kPolicyClamp = 1e-6;
inline constexpr Index kPolicyInputs = 3;
inline constexpr Index kPolicyHidden = 8;

/// Per-sample inputs: calibrated confidence, the model's probability of the
/// sample's current pseudo-label, and twin-classifier disagreement |p_a - p_b|.
struct PolicyModel {
  Dense hidden;  // 3 -> 8, tanh
  Dense output;  // 8 -> 1, sigmoid
  OptimizerState optimizer;

  static PolicyModel initialized(Rng& rng, double learning_rate, double initial_probability = 0.5) {
    PolicyModel m;
    m.hidden = Dense::uniform(kPolicyInputs, kPolicyHidden, rng);
    m.output = Dense::uniform(kPolicyHidden, 1, rng);
    m.output.bias(0) += std::log(initial_probability / (1.0 - initial_probability));
    m.optimizer = OptimizerState::for_size(m.size(), learning_rate);
    return m;
  }

  Index size() const { return hidden.size() + output.size(); }

  Vector flat() const {
    Vector v(size());
    v << Eigen::Map<const Vector>(hidden.weight.data(), hidden.weight.size()), hidden.bias,
        Eigen::Map<const Vector>(output.weight.data(), output.weight.size()), output.bias;
    return v;
  }

  void assign(const Vector& v) {
    Index k = 0;
    auto take = [&](auto& m) {
      m = Eigen::Map<const Vector>(v.data() + k, m.size()).reshaped(m.rows(), m.cols());
      k += m.size();
    };
    take(hidden.weight);
    take(hidden.bias);
    take(output.weight);
    take(output.bias);
  }
};

struct PolicyForward {
  Matrix hidden;  // tanh activations
  Vector logits;
  Vector probs;   // clamped into [1e-6, 1 - 1e-6]
};

inline PolicyForward policy_forward(const PolicyModel& policy, const Matrix& features) {
  if (features.cols() != kPolicyInputs) throw Error(ErrorCode::shape_mismatch, "policy features must have 3 columns");
  PolicyForward f;
  f.hidden = policy.hidden.forward(features).array().tanh().matrix();
  f.logits = policy.output.forward(f.hidden).col(0);
  f.probs = f.logits.unaryExpr([](double z) { return std::clamp(sigmoid(z), kPolicyClamp, 1.0 - kPolicyClamp); });
  return f;
}

inline Vector policy_probabilities(const PolicyModel& policy, const Matrix& features) {
  return policy_forward(policy, features).probs;
}

using Mask = std::vector<std::uint8_t>;

/// Full Bernoulli pattern likelihood: sum of log p_i (mask 1) or log(1 - p_i) (mask 0).
inline double bernoulli_log_prob(std::span<const double> probs, const Mask& mask) {
  if (probs.size() != mask.size()) throw Error(ErrorCode::shape_mismatch, "mask length");
  double lp = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) lp += mask[i] ? std::log(probs[i]) : std::log1p(-probs[i]);
  return lp;
}

/// H = -sum [p ln p + (1-p) ln(1-p)] with 0 ln 0 = 0.
inline double action_entropy(std::span<const double> probs) {
  auto xlogx = [](double x) { return x > 0.0 ? x * std::log(x) : 0.0; };
  double h = 0.0;
  for (double p : probs) h -= xlogx(p) + xlogx(1.0 - p);
  return h;
}

inline Mask sample_bernoulli_mask(std::span<const double> probs, Rng& rng) {
  Mask mask(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) mask[i] = uniform01(rng) < probs[i] ? 1 : 0;
  return mask;
}

struct SelectionAction {
  Mask mask;
  double joint_logp = 0.0;
  double entropy = 0.0;
};

struct MutationAction {
  std::vector<int> labels;
  Mask mask;
  double joint_logp = 0.0;
  double entropy = 0.0;
};

inline SelectionAction sample_selection_from(std::span<const double> probs, Rng& rng) {
  if (probs.empty()) throw Error(ErrorCode::empty_sample_set, "selection over zero samples");
  SelectionAction a;
  a.mask = sample_bernoulli_mask(probs, rng);
  a.joint_logp = bernoulli_log_prob(probs, a.mask);
  a.entropy = action_entropy(probs);
  return a;
}

inline MutationAction sample_mutation_from(std::span<const double> probs, std::span<const int> labels, Rng& rng) {
  if (labels.empty()) throw Error(ErrorCode::empty_sample_set, "mutation over zero labels");
  if (probs.size() != labels.size()) throw Error(ErrorCode::shape_mismatch, "mutation probabilities length");
  MutationAction a;
  a.mask = sample_bernoulli_mask(probs, rng);
  a.labels.assign(labels.begin(), labels.end());
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (a.mask[i]) a.labels[i] = 1 - a.labels[i];
  a.joint_logp = bernoulli_log_prob(probs, a.mask);
  a.entropy = action_entropy(probs);
  return a;
}

inline SelectionAction sample_selection_action(const PolicyModel& policy, const Matrix& sample_features, Rng& rng) {
  if (sample_features.rows() == 0) throw Error(ErrorCode::empty_sample_set, "selection over zero samples");
  const Vector p = policy_probabilities(policy, sample_features);
  return sample_selection_from(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), rng);
}

inline MutationAction sample_mutation_action(const PolicyModel& policy, std::span<const int> current_labels,
                                             const Matrix& sample_features, Rng& rng) {
  if (current_labels.empty()) throw Error(ErrorCode::empty_sample_set, "mutation over zero labels");
  const Vector p = policy_probabilities(policy, sample_features);
  return sample_mutation_from(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), current_labels, rng);
}

enum class ActionKind { selection, mutation };

/// N actions sampled from one policy evaluation over shared per-sample features.
struct ActionBatch {
  ActionKind kind = ActionKind::selection;
  double beta = 0.01;
  Matrix features;  // K x 3
  std::vector<Mask> masks;
  std::vector<double> log_probs;
  std::vector<double> entropies;
  std::vector<double> rewards;

  std::size_t size() const { return log_probs.size(); }

  void add(const Mask& mask, double log_prob, double entropy, double reward) {
    masks.push_back(mask);
    log_probs.push_back(log_prob);
    entropies.push_back(entropy);
    rewards.push_back(reward);
  }
};

/// L = (1/N) sum_n (-log P(a_n) R_n - beta H(a_n)).
inline double policy_loss(const ActionBatch& batch) {
  if (batch.size() == 0) throw Error(ErrorCode::empty_batch, "policy_loss over zero actions");
  double total = 0.0;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    if (!std::isfinite(batch.rewards[n])) throw Error(ErrorCode::non_finite_reward, "reward is not finite");
    total += -batch.log_probs[n] * batch.rewards[n] - batch.beta * batch.entropies[n];
  }
  return total / static_cast<double>(batch.size());
}

/// Loss recomputed through the policy network (rewards held fixed), for gradient checks.
inline double policy_loss_through(const PolicyModel& policy, const ActionBatch& batch, const std::vector<double>& rewards) {
  const Vector p = policy_probabilities(policy, batch.features);
  const std::span<const double> ps(p.data(), static_cast<std::size_t>(p.size()));
  const double h = action_entropy(ps);
  double total = 0.0;
  for (std::size_t n = 0; n < batch.size(); ++n) total += -bernoulli_log_prob(ps, batch.masks[n]) * rewards[n] - batch.beta * h;
  return total / static_cast<double>(batch.size());
}

inline std::vector<double> centered_rewards(const ActionBatch& batch) {
  const double mean = std::accumulate(batch.rewards.begin(), batch.rewards.end(), 0.0) / static_cast<double>(batch.size());
  std::vector<double> out(batch.rewards);
  for (double& r : out) r -= mean;
  return out;
}

/// Score-function gradient of the policy loss with respect to the flat policy parameters.
inline Vector policy_loss_gradient(const PolicyModel& policy, const ActionBatch& batch, const std::vector<double>& rewards) {
  if (batch.size() == 0) throw Error(ErrorCode::empty_batch, "policy gradient over zero actions");
  for (double r : rewards)
    if (!std::isfinite(r)) throw Error(ErrorCode::non_finite_reward, "reward is not finite");
  const PolicyForward f = policy_forward(policy, batch.features);
  const Index k = f.probs.size();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  Vector dz = Vector::Zero(k);
  for (Index i = 0; i < k; ++i) {
    const double p = f.probs(i);
    const double raw = sigmoid(f.logits(i));
    if (raw != p) continue;  // clamped: flat in the logit
    double score = 0.0;
    for (std::size_t n = 0; n < batch.size(); ++n) score += (batch.masks[n][static_cast<std::size_t>(i)] - p) * rewards[n];
    // dH/dz = -p(1-p) z
    dz(i) = inv_n * (-score) + batch.beta * p * (1.0 - p) * f.logits(i);
  }
  Dense g_hidden = Dense::zeros(kPolicyInputs, kPolicyHidden);
  Dense g_output = Dense::zeros(kPolicyHidden, 1);
  Matrix g_act = Matrix::Zero(k, kPolicyHidden);
  backward_head(policy.output, f.hidden, dz, g_output, &g_act);
  const Matrix g_pre = g_act.cwiseProduct((1.0 - f.hidden.array().square()).matrix());
  g_hidden.weight += g_pre.transpose() * batch.features;
  g_hidden.bias += g_pre.colwise().sum().transpose();
  PolicyModel shaped;
  shaped.hidden = g_hidden;
  shaped.output = g_output;
  return shaped.flat();
}

/// One Adam step on the policy loss with batch-mean baseline subtraction.
/// A zero gradient leaves the policy (and its optimizer state) untouched.
inline void update_policy(PolicyModel& policy, const ActionBatch& batch, bool baseline = true) {
  const std::vector<double> rewards = baseline ? centered_rewards(batch) : batch.rewards;
  const Vector g = policy_loss_gradient(policy, batch, rewards);
  if (g.isZero(0.0)) return;
  Vector params = policy.flat();
  adam_step(params, g, policy.optimizer);
  policy.assign(params);
}

/// R = alpha * acc_source_val + (1 - alpha) * agreement.
inline double reward_from_components(double source_accuracy, double agreement, double alpha) {
  return alpha * source_accuracy + (1.0 - alpha) * agreement;
}

/// Mean over the selected samples of [prediction == pseudo-label] * confidence,
/// with confidence = max(p, 1 - p) of the candidate column.
inline double pseudo_label_agreement(const Vector& probs, std::span<const int> pseudo_labels) {
  if (pseudo_labels.empty()) throw Error(ErrorCode::empty_selection, "agreement over zero samples");
  double acc = 0.0;
  for (std::size_t i = 0; i < pseudo_labels.size(); ++i) {
    const double p = probs(static_cast<Index>(i));
    const int pred = p > 0.5 ? 1 : 0;
    if (pred == pseudo_labels[i]) acc += std::max(p, 1.0 - p);
  }
  return acc / static_cast<double>(pseudo_labels.size());
}

inline double compute_reward(const ModelColumn& candidate, const DomainDataset& source_val, const Matrix& selected_target_x,
                             std::span<const int> pseudo_labels, double alpha = 0.5) {
  if (selected_target_x.rows() == 0 || pseudo_labels.empty()) throw Error(ErrorCode::empty_selection, "reward over an empty selection");
  if (static_cast<std::size_t>(selected_target_x.rows()) != pseudo_labels.size())
    throw Error(ErrorCode::shape_mismatch, "pseudo-label count does not match the selection");
  if (!source_val.labeled()) throw Error(ErrorCode::degenerate_labels, "source validation set must be labeled");
  const Vector ps = predict_probabilities(candidate, source_val.features);
  Index correct = 0;
  for (Index i = 0; i < ps.size(); ++i) correct += ((ps(i) > 0.5 ? 1 : 0) == (*source_val.labels)[static_cast<std::size_t>(i)]);
  const double acc = static_cast<double>(correct) / static_cast<double>(ps.size());
  const double agreement = pseudo_label_agreement(predict_probabilities(candidate, selected_target_x), pseudo_labels);
  const double r = reward_from_components(acc, agreement, alpha);
  if (!std::isfinite(r)) throw Error(ErrorCode::non_finite_reward, "reward is not finite");
  return r;
}

}  // namespace dem
