#pragma once

// JSON run configuration: three sections named after the structs they fill,
// with keys equal to the struct field names.  Unknown sections or keys are
// rejected so that typos never fall back silently to defaults.

#include <cstdlib>
#include <fstream>
#include <string>

#include <json.hpp>

#include "evolution.hpp"

namespace dem {

struct RunConfig {
  ShiftSpec shift_spec;
  LoopConfig loop_config;
  LossWeights loss_weights;
};

template <typename F>
void visit_fields(ShiftSpec& s, F&& f) {
  f("d", s.d);
  f("n_source", s.n_source);
  f("n_target", s.n_target);
  f("rotation_angle", s.rotation_angle);
  f("class_prior_target", s.class_prior_target);
  f("label_flip_rate", s.label_flip_rate);
  f("noise_sigma", s.noise_sigma);
  f("seed", s.seed);
  f("class_separation", s.class_separation);
  f("class0_offset", s.class0_offset);
}

template <typename F>
void visit_fields(LoopConfig& c, F&& f) {
  f("beam_width", c.beam_width);
  f("patience", c.patience);
  f("screening_iterations", c.screening_iterations);
  f("evolving_iterations", c.evolving_iterations);
  f("actions_per_iteration", c.actions_per_iteration);
  f("action_epochs", c.action_epochs);
  f("crossover_children", c.crossover_children);
  f("alpha", c.alpha);
  f("beta", c.beta);
  f("seed", c.seed);
  f("pretrain_epochs", c.pretrain_epochs);
  f("pretrain_patience", c.pretrain_patience);
  f("batch_size", c.batch_size);
  f("learning_rate", c.learning_rate);
  f("adapt_learning_rate", c.adapt_learning_rate);
  f("policy_learning_rate", c.policy_learning_rate);
  f("selection_init_probability", c.selection_init_probability);
  f("mutation_init_probability", c.mutation_init_probability);
  f("lambda_scale", c.lambda_scale);
  f("reward_baseline", c.reward_baseline);
  f("test_fraction", c.test_fraction);
  f("k_folds", c.k_folds);
  f("bootstrap_resamples", c.bootstrap_resamples);
  f("scratch", c.scratch);
  f("calibration", c.calibration);
  f("adaptation_losses", c.adaptation_losses);
  f("source_column", c.source_column);
  f("rf_threshold", c.rf_threshold);
  f("rf_mutation_rate", c.rf_mutation_rate);
}

template <typename F>
void visit_fields(LossWeights& w, F&& f) {
  f("w_cls", w.w_cls);
  f("w_disc", w.w_disc);
  f("w_coral", w.w_coral);
  f("w_mcd", w.w_mcd);
  f("w_prox", w.w_prox);
  f("grl_coefficient", w.grl_coefficient);
}

namespace detail {

template <typename T>
nlohmann::ordered_json section_to_json(T value) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  visit_fields(value, [&](const char* key, const auto& field) { j[key] = field; });
  return j;
}

template <typename Field>
void read_field(const nlohmann::json& v, Field& field, const std::string& where) {
  using T = std::remove_cvref_t<Field>;
  auto fail = [&](const char* what) { throw Error(ErrorCode::invalid_config, where + ": expected " + what); };
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) fail("a boolean");
    field = v.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) fail("an integer");
    if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
      fail("a non-negative integer");
    field = v.get<T>();
  } else {
    if (!v.is_number()) fail("a number");
    field = v.get<T>();
  }
}

template <typename T>
void section_from_json(const nlohmann::json& j, T& out, const std::string& section) {
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, section + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    visit_fields(out, [&](const char* key, auto& field) {
      if (it.key() == key) {
        read_field(it.value(), field, section + "." + key);
        known = true;
      }
    });
    if (!known) throw Error(ErrorCode::invalid_config, "unknown key " + section + "." + it.key());
  }
}

}  // namespace detail

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["shift_spec"] = detail::section_to_json(c.shift_spec);
  j["loop_config"] = detail::section_to_json(c.loop_config);
  j["loss_weights"] = detail::section_to_json(c.loss_weights);
  return j;
}

/// Missing sections and keys keep their defaults.  Validates the result.
inline RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, "config must be a JSON object");
  RunConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "shift_spec") detail::section_from_json(it.value(), c.shift_spec, "shift_spec");
    else if (it.key() == "loop_config") detail::section_from_json(it.value(), c.loop_config, "loop_config");
    else if (it.key() == "loss_weights") detail::section_from_json(it.value(), c.loss_weights, "loss_weights");
    else throw Error(ErrorCode::invalid_config, "unknown section " + it.key());
  }
  try {
    c.shift_spec.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::invalid_config, e.what());
  }
  c.loop_config.validate();
  c.loss_weights.validate();
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

/// DEM_SEED, when set, replaces the loop seed.
inline void apply_seed_override(RunConfig& c, const char* value) {
  if (value == nullptr || *value == '\0') return;
  char* end = nullptr;
  const unsigned long long seed = std::strtoull(value, &end, 10);
  if (*end != '\0' || value[0] == '-') throw Error(ErrorCode::invalid_config, std::string("DEM_SEED is not an unsigned integer: ") + value);
  c.loop_config.seed = seed;
}

inline void apply_seed_override(RunConfig& c) { apply_seed_override(c, std::getenv("DEM_SEED")); }

}  // namespace dem
