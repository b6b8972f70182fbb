#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqdistill/cf/sasrec.hpp"
#include "seqdistill/data/synth.hpp"
#include "seqdistill/distill/train.hpp"
#include "seqdistill/io.hpp"

namespace seqdistill::cli {

using json = nlohmann::json;

// Every knob, with defaults. Distillation defaults follow the reference
// hyperparameters (d = 64, d' = 128, lr 1e-4, patience 10).
inline json default_config() {
  return json::parse(R"({
    "seed": 0,
    "deterministic": false,
    "data": {"five_core": true, "k": 5, "negatives": 99, "candidate_seed": 0},
    "synth": {"users": 2000, "items": 200, "len_min": 20, "len_max": 20, "p": 0.9, "seed": 0,
              "categories": 8, "title_tag": "w", "item_prefix": "i", "user_prefix": "u"},
    "cf": {"d": 64, "blocks": 2, "heads": 1, "max_len": 50, "dropout": 0.2, "lr": 1e-4, "batch_size": 128,
           "max_epochs": 200, "negatives": 1, "eval_every": 0.1, "patience": 10, "valid_users": 0},
    "encoder": {"layers": 2, "heads": 4, "d_enc": 64, "buckets": 16384, "p_max": 512, "hash_seed": 0},
    "distill": {"d_prime": 128, "m_train": 32, "batch_size": 20, "lr": 1e-4, "max_epochs": 10, "eval_every": 0.1,
                "patience": 10, "regime": "last-item", "kind": "mse", "include_user_rep": false,
                "max_items": 50, "valid_users": 0,
                "weights": {"retrieval": 1.0, "distill": 1.0, "uniform": 1.0}},
    "eval": {"phase": "test", "shuffle_seed": 0, "warm_cold_q": 0.35, "transition_counting": "global",
             "threads": 0}
  })");
}

namespace detail {

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::string suggestion(const json& obj, const std::string& key) {
  std::string best;
  std::size_t bd = 4;
  for (const auto& [k, v] : obj.items()) {
    const std::size_t d = edit_distance(key, k);
    if (d < bd) {
      bd = d;
      best = k;
    }
  }
  return best.empty() ? "" : " (did you mean '" + best + "'?)";
}

inline const char* type_name(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer() || v.is_number_unsigned()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_object()) return "object";
  return "value";
}

// Integer slots accept only integers; number slots accept any number.
inline bool compatible(const json& slot, const json& v) {
  if (slot.is_boolean()) return v.is_boolean();
  if (slot.is_number_integer() || slot.is_number_unsigned())
    return v.is_number_integer() || v.is_number_unsigned();
  if (slot.is_number()) return v.is_number();
  if (slot.is_string()) return v.is_string();
  if (slot.is_object()) return v.is_object();
  return false;
}

inline void merge(json& dst, const json& src, const std::string& path) {
  if (!src.is_object()) fail(ErrorKind::config, "config: '" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (const auto& [k, v] : src.items()) {
    const std::string kp = path.empty() ? k : path + "." + k;
    if (!dst.contains(k)) fail(ErrorKind::config, "config: unknown key '" + kp + "'" + suggestion(dst, k));
    json& slot = dst[k];
    if (!compatible(slot, v))
      fail(ErrorKind::config, "config: '" + kp + "' expects " + type_name(slot) + ", got " + type_name(v));
    if (slot.is_object())
      merge(slot, v, kp);
    else
      slot = v;
  }
}

}  // namespace detail

// "a.b.c=value". The value is read as JSON when it parses, else as a string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    fail(ErrorKind::config, "override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t p; (p = rest.find('.')) != std::string::npos; rest = rest.substr(p + 1)) parts.push_back(rest.substr(0, p));
  parts.push_back(rest);
  // A string slot takes the raw text even if it happens to parse as JSON.
  const json* slot = &cfg;
  for (const auto& p : parts) {
    if (!slot->is_object() || !slot->contains(p)) break;
    slot = &(*slot)[p];
  }
  if (slot->is_string() && !patch.is_string()) patch = text;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  detail::merge(cfg, patch, "");
}

// defaults <- file <- overrides.
inline json load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  json cfg = default_config();
  if (!path.empty()) {
    const std::string text = io::read_file(path);
    if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
      json file = json::parse(text, nullptr, false);
      if (file.is_discarded()) fail(ErrorKind::config, "config file '" + path + "' is not valid JSON");
      detail::merge(cfg, file, "");
    }
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

inline std::string config_hash(const json& cfg) { return io::sha256_hex(cfg.dump()); }

// ------------------------------------------------------------ typed views

inline data::MarkovSpec markov_spec(const json& c) {
  const json& s = c.at("synth");
  data::MarkovSpec m;
  m.num_users = s.at("users");
  m.num_items = s.at("items");
  m.len_min = s.at("len_min");
  m.len_max = s.at("len_max");
  m.p = s.at("p");
  m.seed = s.at("seed");
  m.num_categories = s.at("categories");
  m.title_tag = s.at("title_tag");
  m.item_prefix = s.at("item_prefix");
  m.user_prefix = s.at("user_prefix");
  return m;
}

inline cf::SasrecConfig sasrec_config(const json& c) {
  const json& s = c.at("cf");
  cf::SasrecConfig m;
  m.d = s.at("d");
  m.blocks = s.at("blocks");
  m.heads = s.at("heads");
  m.max_len = s.at("max_len");
  m.dropout = s.at("dropout");
  m.seed = c.at("seed");
  return m;
}

inline cf::CfTrainConfig cf_train_config(const json& c) {
  const json& s = c.at("cf");
  cf::CfTrainConfig t;
  t.lr = s.at("lr");
  t.batch_size = s.at("batch_size");
  t.max_epochs = s.at("max_epochs");
  t.negatives = s.at("negatives");
  t.eval_every = s.at("eval_every");
  t.patience = s.at("patience");
  t.valid_users = s.at("valid_users");
  t.seed = c.at("seed");
  return t;
}

inline enc::EncoderConfig encoder_config(const json& c) {
  const json& s = c.at("encoder");
  enc::EncoderConfig e;
  e.layers = s.at("layers");
  e.heads = s.at("heads");
  e.d_enc = s.at("d_enc");
  e.buckets = s.at("buckets");
  e.p_max = s.at("p_max");
  e.hash_seed = s.at("hash_seed");
  e.seed = c.at("seed");
  return e;
}

inline distill::DistillConfig distill_config(const json& c) {
  distill::DistillConfig d;
  d.d = c.at("cf").at("d");
  d.d_prime = c.at("distill").at("d_prime");
  d.include_user_rep = c.at("distill").at("include_user_rep");
  d.seed = c.at("seed");
  return d;
}

inline enc::PromptOptions prompt_options(const json& c) {
  enc::PromptOptions p;
  p.max_items = c.at("distill").at("max_items");
  p.p_max = c.at("encoder").at("p_max");
  p.include_user_rep = c.at("distill").at("include_user_rep");
  return p;
}

inline distill::DistillTrainConfig distill_train_config(const json& c) {
  const json& s = c.at("distill");
  distill::DistillTrainConfig t;
  t.m_train = s.at("m_train");
  t.batch_size = s.at("batch_size");
  t.lr = s.at("lr");
  t.max_epochs = s.at("max_epochs");
  t.eval_every = s.at("eval_every");
  t.patience = s.at("patience");
  t.regime = distill::parse_regime(s.at("regime"));
  t.kind = distill::parse_distill_kind(s.at("kind"));
  t.weights.retrieval = s.at("weights").at("retrieval");
  t.weights.distill = s.at("weights").at("distill");
  t.weights.uniform = s.at("weights").at("uniform");
  t.prompt = prompt_options(c);
  t.valid_users = s.at("valid_users");
  t.seed = c.at("seed");
  return t;
}

inline data::Phase eval_phase(const json& c) {
  const std::string p = c.at("eval").at("phase");
  if (p == "test") return data::Phase::test;
  if (p == "valid") return data::Phase::valid;
  fail(ErrorKind::config, "eval.phase must be 'test' or 'valid', got '" + p + "'");
}

// Deterministic mode evaluates on a single thread.
inline std::size_t eval_threads(const json& c) {
  if (c.at("deterministic").get<bool>()) return 1;
  return c.at("eval").at("threads").get<std::size_t>();
}

}  // namespace seqdistill::cli
