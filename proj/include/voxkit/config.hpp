#pragma once

#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxkit/augment.hpp"
#include "voxkit/dataset.hpp"
#include "voxkit/experiment.hpp"
#include "voxkit/train.hpp"
#include "voxkit/tsne.hpp"

namespace voxkit {

using nlohmann::json;

inline json load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MissingFile("config file not found: " + path);
  try {
    return json::parse(is, nullptr, true, true);  // comments allowed
  } catch (const json::exception& e) {
    throw ConfigError("config parse failure in " + path + ": " + e.what());
  }
}

/// Apply one `dotted.key=value` override; the value is parsed as JSON when
/// possible and taken as a string otherwise. Intermediate objects are
/// created on demand.
inline void apply_override(json& root, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key.path=value: " + kv);
  const std::string path = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // bare string
  }
  json* node = &root;
  std::string::size_type pos = 0;
  for (;;) {
    const auto dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (key.empty()) throw ConfigError("empty key segment in override: " + kv);
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    if (!node->is_object() && !node->is_null())
      throw ConfigError("override path crosses a non-object value: " + kv);
    pos = dot + 1;
  }
}

namespace detail {

inline void expect_keys(const json& j, std::initializer_list<const char*> known,
                        const char* section) {
  if (!j.is_object()) throw ConfigError(std::string("config section '") + section +
                                        "' must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* k : known)
      if (key == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError(std::string("unknown config key '") + section + "." + key + "'");
  }
}

template <class T>
void read_into(const json& j, const char* key, T& out, const char* section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + section + "." + key + "': " + e.what());
  }
}

}  // namespace detail

// --------------------------------------------------------------------------
// Section readers: defaults come from the target struct, known keys only.
// --------------------------------------------------------------------------

inline SyntheticSpec synth_from_json(const json& j) {
  SyntheticSpec s;
  if (j.is_null()) return s;
  detail::expect_keys(j, {"nx", "ny", "nz", "n_class0", "n_class1", "cavity_radius", "delta",
                          "sigma", "jitter", "seed"},
                      "synth");
  detail::read_into(j, "nx", s.nx, "synth");
  detail::read_into(j, "ny", s.ny, "synth");
  detail::read_into(j, "nz", s.nz, "synth");
  detail::read_into(j, "n_class0", s.n_class0, "synth");
  detail::read_into(j, "n_class1", s.n_class1, "synth");
  detail::read_into(j, "cavity_radius", s.cavity_radius, "synth");
  detail::read_into(j, "delta", s.delta, "synth");
  detail::read_into(j, "sigma", s.sigma, "synth");
  detail::read_into(j, "jitter", s.jitter, "synth");
  detail::read_into(j, "seed", s.seed, "synth");
  return s;
}

inline json synth_to_json(const SyntheticSpec& s) {
  return {{"nx", s.nx},           {"ny", s.ny},
          {"nz", s.nz},           {"n_class0", s.n_class0},
          {"n_class1", s.n_class1}, {"cavity_radius", s.cavity_radius},
          {"delta", s.delta},     {"sigma", s.sigma},
          {"jitter", s.jitter},   {"seed", s.seed}};
}

inline TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  if (j.is_null()) return c;
  detail::expect_keys(j, {"learning_rate", "l2_weight", "max_epochs", "patience", "batch_size",
                          "adam_beta1", "adam_beta2", "adam_epsilon", "seed", "drop_last"},
                      "train");
  detail::read_into(j, "learning_rate", c.learning_rate, "train");
  detail::read_into(j, "l2_weight", c.l2_weight, "train");
  detail::read_into(j, "max_epochs", c.max_epochs, "train");
  detail::read_into(j, "patience", c.patience, "train");
  detail::read_into(j, "batch_size", c.batch_size, "train");
  detail::read_into(j, "adam_beta1", c.adam_beta1, "train");
  detail::read_into(j, "adam_beta2", c.adam_beta2, "train");
  detail::read_into(j, "adam_epsilon", c.adam_epsilon, "train");
  detail::read_into(j, "seed", c.seed, "train");
  detail::read_into(j, "drop_last", c.drop_last, "train");
  return c;
}

inline json train_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"l2_weight", c.l2_weight},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"batch_size", c.batch_size},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"seed", c.seed},
          {"drop_last", c.drop_last}};
}

inline AugmentBounds augment_from_json(const json& j) {
  AugmentBounds b;
  if (j.is_null()) return b;
  detail::expect_keys(j, {"zoom_lo", "zoom_hi", "shift_bound", "angle_bound_deg",
                          "shift_in_voxels", "include_originals"},
                      "augment");
  detail::read_into(j, "zoom_lo", b.zoom_lo, "augment");
  detail::read_into(j, "zoom_hi", b.zoom_hi, "augment");
  detail::read_into(j, "shift_bound", b.shift_bound, "augment");
  detail::read_into(j, "angle_bound_deg", b.angle_bound_deg, "augment");
  detail::read_into(j, "shift_in_voxels", b.shift_in_voxels, "augment");
  detail::read_into(j, "include_originals", b.include_originals, "augment");
  return b;
}

inline json augment_to_json(const AugmentBounds& b) {
  return {{"zoom_lo", b.zoom_lo},
          {"zoom_hi", b.zoom_hi},
          {"shift_bound", b.shift_bound},
          {"angle_bound_deg", b.angle_bound_deg},
          {"shift_in_voxels", b.shift_in_voxels},
          {"include_originals", b.include_originals}};
}

/// Reads the grid / train / augment sections into an ExperimentPlan.
inline ExperimentPlan plan_from_json(const json& root) {
  ExperimentPlan plan;
  plan.train = train_from_json(root.value("train", json()));
  plan.bounds = augment_from_json(root.value("augment", json()));
  const json j = root.value("grid", json());
  if (j.is_null()) return plan;
  detail::expect_keys(j, {"strategies", "depths", "k", "trials", "master_seed", "dropout_p",
                          "dropout_grid"},
                      "grid");
  if (j.contains("strategies")) {
    plan.strategies.clear();
    for (const auto& s : j.at("strategies"))
      plan.strategies.push_back(strategy_from_string(s.get<std::string>()));
  }
  detail::read_into(j, "depths", plan.depths, "grid");
  detail::read_into(j, "k", plan.k, "grid");
  detail::read_into(j, "trials", plan.trials, "grid");
  detail::read_into(j, "master_seed", plan.master_seed, "grid");
  detail::read_into(j, "dropout_p", plan.dropout_p, "grid");
  detail::read_into(j, "dropout_grid", plan.dropout_grid, "grid");
  return plan;
}

inline json plan_to_json(const ExperimentPlan& plan) {
  json strategies = json::array();
  for (Strategy s : plan.strategies) strategies.push_back(to_string(s));
  return {{"strategies", strategies}, {"depths", plan.depths},
          {"k", plan.k},             {"trials", plan.trials},
          {"master_seed", plan.master_seed}, {"dropout_p", plan.dropout_p},
          {"dropout_grid", plan.dropout_grid}};
}

inline TsneConfig tsne_from_json(const json& j) {
  TsneConfig c;
  if (j.is_null()) return c;
  detail::expect_keys(j, {"perplexity", "iterations", "eta", "seed"}, "tsne");
  detail::read_into(j, "perplexity", c.perplexity, "tsne");
  detail::read_into(j, "iterations", c.iterations, "tsne");
  detail::read_into(j, "eta", c.eta, "tsne");
  detail::read_into(j, "seed", c.seed, "tsne");
  return c;
}

/// The fully resolved configuration written into each run directory.
inline json config_snapshot(const SyntheticSpec& synth, const ExperimentPlan& plan) {
  return {{"synth", synth_to_json(synth)},
          {"train", train_to_json(plan.train)},
          {"augment", augment_to_json(plan.bounds)},
          {"grid", plan_to_json(plan)}};
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write: " + path);
  os << j.dump(2) << '\n';
}

}  // namespace voxkit
