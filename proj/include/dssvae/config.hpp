// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"

#include "dssvae/metrics.hpp"
#include "dssvae/trainer.hpp"

namespace dssvae {

struct DataPaths {
  std::string train;
  std::string train_trees;  // empty: right-branching fallback trees
  std::string valid;
  std::string valid_trees;
  std::string test;
  std::string test_trees;
  std::string test_ref;
  std::string test_ref_trees;
};

struct EvalConfig {
  std::size_t max_len = 30;
  std::size_t n_samples = 10000;
  double syn_temperature = 1.0;
  EvalLmConfig lm;
};

struct RunConfig {
  std::string preset = "ptb";
  DataPaths data;
  ModelDims dims;
  std::size_t max_vocab = 30000;
  TrainConfig train;
  std::size_t steps = 5000;
  std::size_t log_every = 50;
  EvalConfig eval;
  std::string out_dir;

  void validate() const {
    ModelDims d = dims;
    d.vocab_size = Vocabulary::kReserved + 1;
    d.syntax_vocab_size = 5;
    d.validate();
    train.weights.validate();
    if (max_vocab < 5) throw ConfigError("model.max_vocab must be at least 5");
    if (train.batch_size == 0) throw ConfigError("training.batch_size must be positive");
    if (train.checkpoint_every == 0) throw ConfigError("training.checkpoint_every must be positive");
    const auto prob = [](double p, const char* key) {
      if (!(p >= 0.0 && p < 1.0)) throw ConfigError(std::string(key) + " must lie in [0, 1)");
    };
    prob(train.gru_dropout, "training.gru_dropout");
    prob(train.word_dropout, "training.word_dropout");
    if (!(train.anneal_steepness > 0.0)) throw ConfigError("anneal.steepness must be positive");
    if (!(train.anneal_midpoint >= 0.0)) throw ConfigError("anneal.midpoint_step must be nonnegative");
    if (!(train.adam.learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate must be positive");
    if (!(train.clip_norm > 0.0)) throw ConfigError("optimizer.clip_norm must be positive");
    if (eval.max_len == 0) throw ConfigError("eval.max_len must be positive");
    if (!(eval.syn_temperature >= 0.0)) throw ConfigError("eval.syn_temperature must be nonnegative");
    if (eval.lm.embedding_dim == 0 || eval.lm.hidden_dim == 0) throw ConfigError("eval.lm dims must be positive");
  }
};

/// Loss weights, batch size and GRU dropout of a named preset.
inline void apply_preset(RunConfig& c, const std::string& name) {
  if (name == "ptb") {
    c.train.weights = LossWeights::ptb();
    c.train.batch_size = 32;
    c.train.gru_dropout = 0.1;
  } else if (name == "quora") {
    c.train.weights = LossWeights::quora();
    c.train.batch_size = 50;
    c.train.gru_dropout = 0.3;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected ptb or quora)");
  }
  c.preset = name;
}

inline RunConfig preset_config(const std::string& name) {
  RunConfig c;
  apply_preset(c, name);
  return c;
}

namespace detail {

using nlohmann::json;

// Checks an object's keys against `allowed`, naming the first stray key by
// its dotted path.
inline const json& object_at(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("'" + path + "' must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw ConfigError("unknown config key '" + (path.empty() ? key : path + "." + key) + "'");
  }
  return j;
}

inline std::string join_path(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

template <class T>
void read(const json& obj, const std::string& path, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string where = join_path(path, key);
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!it->is_number_integer() || it->template get<std::int64_t>() < 0) {
        throw ConfigError("'" + where + "' must be a nonnegative integer");
      }
    } else if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw ConfigError("'" + where + "' must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError("'" + where + "' must be a string");
    }
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("'" + where + "': " + e.what());
  }
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

inline void require_exists(const std::string& path, const char* key) {
  if (path.empty()) return;
  if (!std::filesystem::exists(path)) throw ConfigError(std::string("data.") + key + ": no such file " + path);
}

}  // namespace detail

/// Strict parse of a JSON run config. Relative data paths resolve against
/// `base_dir`. Unknown keys, negative weights, odd hidden sizes and
/// missing files are config errors; nothing is applied partially.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                              bool check_paths = true) {
  using detail::json;
  using detail::object_at;
  using detail::read;
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw ConfigError("config is empty");
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  object_at(root, "", {"preset", "seed", "out_dir", "data", "model", "loss_weights", "anneal", "optimizer",
                       "training", "eval"});
  RunConfig c;
  std::string preset = "ptb";
  read(root, "", "preset", preset);
  apply_preset(c, preset);
  read(root, "", "seed", c.train.seed);
  read(root, "", "out_dir", c.out_dir);

  if (auto it = root.find("data"); it != root.end()) {
    const json& d = object_at(*it, "data", {"train", "train_trees", "valid", "valid_trees", "test", "test_trees",
                                            "test_ref", "test_ref_trees"});
    read(d, "data", "train", c.data.train);
    read(d, "data", "train_trees", c.data.train_trees);
    read(d, "data", "valid", c.data.valid);
    read(d, "data", "valid_trees", c.data.valid_trees);
    read(d, "data", "test", c.data.test);
    read(d, "data", "test_trees", c.data.test_trees);
    read(d, "data", "test_ref", c.data.test_ref);
    read(d, "data", "test_ref_trees", c.data.test_ref_trees);
  }
  if (auto it = root.find("model"); it != root.end()) {
    const json& m = object_at(*it, "model", {"embedding_dim", "hidden_dim", "latent_dim", "max_vocab"});
    read(m, "model", "embedding_dim", c.dims.embedding_dim);
    read(m, "model", "hidden_dim", c.dims.hidden_dim);
    read(m, "model", "latent_dim", c.dims.latent_dim);
    read(m, "model", "max_vocab", c.max_vocab);
  }
  if (auto it = root.find("loss_weights"); it != root.end()) {
    const json& w = object_at(*it, "loss_weights", {"kl_sem", "kl_syn", "mul_sem", "mul_syn", "adv_sem", "adv_syn",
                                                    "rec_sem", "rec_syn"});
    auto& lw = c.train.weights;
    read(w, "loss_weights", "kl_sem", lw.kl_sem);
    read(w, "loss_weights", "kl_syn", lw.kl_syn);
    read(w, "loss_weights", "mul_sem", lw.mul_sem);
    read(w, "loss_weights", "mul_syn", lw.mul_syn);
    read(w, "loss_weights", "adv_sem", lw.adv_sem);
    read(w, "loss_weights", "adv_syn", lw.adv_syn);
    read(w, "loss_weights", "rec_sem", lw.rec_sem);
    read(w, "loss_weights", "rec_syn", lw.rec_syn);
  }
  if (auto it = root.find("anneal"); it != root.end()) {
    const json& a = object_at(*it, "anneal", {"midpoint_step", "steepness"});
    read(a, "anneal", "midpoint_step", c.train.anneal_midpoint);
    read(a, "anneal", "steepness", c.train.anneal_steepness);
  }
  if (auto it = root.find("optimizer"); it != root.end()) {
    const json& o = object_at(*it, "optimizer", {"learning_rate", "beta1", "beta2", "epsilon", "clip_norm"});
    read(o, "optimizer", "learning_rate", c.train.adam.learning_rate);
    read(o, "optimizer", "beta1", c.train.adam.beta1);
    read(o, "optimizer", "beta2", c.train.adam.beta2);
    read(o, "optimizer", "epsilon", c.train.adam.epsilon);
    read(o, "optimizer", "clip_norm", c.train.clip_norm);
  }
  if (auto it = root.find("training"); it != root.end()) {
    const json& t = object_at(*it, "training", {"steps", "batch_size", "gru_dropout", "word_dropout",
                                                "checkpoint_every", "log_every"});
    read(t, "training", "steps", c.steps);
    read(t, "training", "batch_size", c.train.batch_size);
    read(t, "training", "gru_dropout", c.train.gru_dropout);
    read(t, "training", "word_dropout", c.train.word_dropout);
    read(t, "training", "checkpoint_every", c.train.checkpoint_every);
    read(t, "training", "log_every", c.log_every);
  }
  if (auto it = root.find("eval"); it != root.end()) {
    const json& e = object_at(*it, "eval", {"max_len", "n_samples", "syn_temperature", "lm"});
    read(e, "eval", "max_len", c.eval.max_len);
    read(e, "eval", "n_samples", c.eval.n_samples);
    read(e, "eval", "syn_temperature", c.eval.syn_temperature);
    if (auto lt = e.find("lm"); lt != e.end()) {
      const json& l = object_at(*lt, "eval.lm", {"embedding_dim", "hidden_dim", "epochs", "batch_size",
                                                 "learning_rate"});
      read(l, "eval.lm", "embedding_dim", c.eval.lm.embedding_dim);
      read(l, "eval.lm", "hidden_dim", c.eval.lm.hidden_dim);
      read(l, "eval.lm", "epochs", c.eval.lm.epochs);
      read(l, "eval.lm", "batch_size", c.eval.lm.batch_size);
      read(l, "eval.lm", "learning_rate", c.eval.lm.learning_rate);
    }
  }
  c.eval.lm.seed = c.train.seed;

  auto& d = c.data;
  for (std::string* p : {&d.train, &d.train_trees, &d.valid, &d.valid_trees, &d.test, &d.test_trees, &d.test_ref,
                         &d.test_ref_trees}) {
    *p = detail::resolve(base_dir, *p);
  }
  if (!c.out_dir.empty()) c.out_dir = detail::resolve(base_dir, c.out_dir);
  c.validate();
  if (check_paths) {
    if (d.train.empty()) throw ConfigError("data.train is required");
    if (d.valid.empty()) throw ConfigError("data.valid is required");
    detail::require_exists(d.train, "train");
    detail::require_exists(d.train_trees, "train_trees");
    detail::require_exists(d.valid, "valid");
    detail::require_exists(d.valid_trees, "valid_trees");
    detail::require_exists(d.test, "test");
    detail::require_exists(d.test_trees, "test_trees");
    detail::require_exists(d.test_ref, "test_ref");
    detail::require_exists(d.test_ref_trees, "test_ref_trees");
  }
  return c;
}

/// Echo of every effective setting, in the same layout parse_config reads.
inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["preset"] = c.preset;
  j["seed"] = c.train.seed;
  j["out_dir"] = c.out_dir;
  const auto& d = c.data;
  j["data"] = {{"train", d.train},       {"train_trees", d.train_trees}, {"valid", d.valid},
               {"valid_trees", d.valid_trees}, {"test", d.test},          {"test_trees", d.test_trees},
               {"test_ref", d.test_ref},       {"test_ref_trees", d.test_ref_trees}};
  j["model"] = {{"embedding_dim", c.dims.embedding_dim},
                {"hidden_dim", c.dims.hidden_dim},
                {"latent_dim", c.dims.latent_dim},
                {"max_vocab", c.max_vocab}};
  j["loss_weights"] = detail::weights_json(c.train.weights);
  j["anneal"] = {{"midpoint_step", c.train.anneal_midpoint}, {"steepness", c.train.anneal_steepness}};
  j["optimizer"] = {{"learning_rate", c.train.adam.learning_rate},
                    {"beta1", c.train.adam.beta1},
                    {"beta2", c.train.adam.beta2},
                    {"epsilon", c.train.adam.epsilon},
                    {"clip_norm", c.train.clip_norm}};
  j["training"] = {{"steps", c.steps},
                   {"batch_size", c.train.batch_size},
                   {"gru_dropout", c.train.gru_dropout},
                   {"word_dropout", c.train.word_dropout},
                   {"checkpoint_every", c.train.checkpoint_every},
                   {"log_every", c.log_every}};
  j["eval"] = {{"max_len", c.eval.max_len},
               {"n_samples", c.eval.n_samples},
               {"syn_temperature", c.eval.syn_temperature},
               {"lm",
                {{"embedding_dim", c.eval.lm.embedding_dim},
                 {"hidden_dim", c.eval.lm.hidden_dim},
                 {"epochs", c.eval.lm.epochs},
                 {"batch_size", c.eval.lm.batch_size},
                 {"learning_rate", c.eval.lm.learning_rate}}}};
  return j;
}

inline RunConfig load_config(const std::filesystem::path& path, bool check_paths = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path(), check_paths);
}

}  // namespace dssvae
