// Copyright 2026 The tigr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <toml.hpp>

#include "tigr/cli/digest.hpp"
#include "tigr/data/synth.hpp"
#include "tigr/downstream/tasks.hpp"
#include "tigr/pipeline.hpp"
#include "tigr/training/trainer.hpp"

// Run configuration: a TOML document with sections [data], [grid], [model],
// [masking], [train], [eval] and [ablation]. Defaults are the full-scale
// hyperparameters; configs/desk.toml holds the laptop profile.

namespace tigr::cli {

struct EvalConfig {
  std::size_t queries = 500;
  std::size_t k_neg = 500;
  std::vector<std::size_t> kneg_sweep = {100, 500, 1000, 2000};
  std::size_t head_epochs = 30;
  double head_lr = 1e-3;
  std::size_t head_batch = 64;
  std::size_t geojson_k = 500;
  std::uint64_t seed = 0;

  ds::HeadConfig head() const { return {head_epochs, head_lr, head_batch, 0}; }
};

struct AblationConfig {
  model::BranchSet branches;
  bool no_inter = false;
  bool no_lma = false;
  bool no_rope = false;
};

struct MaskingConfig {
  std::vector<std::string> view1 = {"TC", "CM"};
  std::vector<std::string> view2 = {"RM", "TC", "CM"};
  double p_rm = 0.3, p_tc = 0.3, p_cm = 0.3;
  std::size_t min_keep = 2;

  masking::ViewConfig view(const std::vector<std::string>& names) const {
    masking::ViewConfig v;
    v.min_keep = min_keep;
    for (const auto& n : names) {
      const auto k = masking::parse_kind(n);
      v.strategies.push_back({k, k == masking::Kind::kRandom ? p_rm : k == masking::Kind::kTruncate ? p_tc : p_cm});
    }
    return v;
  }
};

struct RunConfig {
  std::string dataset = "synthetic";
  data::SynthConfig synth;
  std::uint64_t data_seed = 7;
  PrepareOptions prep;
  // Bounding box for external data without a grid.toml (degrees).
  std::optional<std::array<double, 4>> bbox;
  model::ModelConfig model;
  MaskingConfig masking;
  train::TrainConfig train;
  EvalConfig eval;
  AblationConfig ablation;

  RunConfig() {
    train.batch = 512;
    train.epochs = 10;
  }

  train::TrainConfig train_config() const {
    auto t = train;
    t.view1 = masking.view(masking.view1);
    t.view2 = masking.view(masking.view2);
    if (ablation.no_inter) t.lambda = 1.0;
    return t;
  }

  /// Model hyperparameters with vocabularies taken from the prepared data.
  model::ModelConfig model_config(const Prepared& p) const {
    auto m = model;
    m.grid_vocab = p.grid.cell_count();
    m.road_vocab = p.net.size();
    m.branches = ablation.branches;
    m.lma = !ablation.no_lma;
    m.rope = !ablation.no_rope;
    return m;
  }
};

namespace detail {

template <class T>
T require(const toml::node& n, const std::string& key);

inline std::string type_error(const std::string& key, const char* want) { return key + " must be " + want; }

template <>
inline double require<double>(const toml::node& n, const std::string& key) {
  if (auto v = n.value<double>(); v && (n.is_floating_point() || n.is_integer())) return *v;
  throw ConfigError(type_error(key, "a number"), key);
}

template <>
inline std::size_t require<std::size_t>(const toml::node& n, const std::string& key) {
  if (n.is_integer()) {
    const auto v = *n.value<std::int64_t>();
    if (v >= 0) return static_cast<std::size_t>(v);
  }
  throw ConfigError(type_error(key, "a non-negative integer"), key);
}

template <>
inline bool require<bool>(const toml::node& n, const std::string& key) {
  if (n.is_boolean()) return *n.value<bool>();
  throw ConfigError(type_error(key, "true or false"), key);
}

template <>
inline std::string require<std::string>(const toml::node& n, const std::string& key) {
  if (n.is_string()) return *n.value<std::string>();
  throw ConfigError(type_error(key, "a string"), key);
}

template <class T>
std::vector<T> require_list(const toml::node& n, const std::string& key) {
  const auto* a = n.as_array();
  if (!a) throw ConfigError(type_error(key, "an array"), key);
  std::vector<T> out;
  for (const auto& e : *a) out.push_back(require<T>(e, key));
  return out;
}

}  // namespace detail

/// One configuration key: where it lives in RunConfig and how to read it.
struct Field {
  std::string key;  // section.name
  std::string help;
  std::function<nlohmann::json(const RunConfig&)> get;
  std::function<void(RunConfig&, const toml::node&)> set;
};

#define TIGR_FIELD(KEY, HELP, TYPE, EXPR)                                                        \
  Field {                                                                                        \
    KEY, HELP, [](const RunConfig& c) { return nlohmann::json(c.EXPR); },                        \
        [](RunConfig& c, const toml::node& n) { c.EXPR = detail::require<TYPE>(n, KEY); }         \
  }
#define TIGR_LIST(KEY, HELP, TYPE, EXPR)                                                         \
  Field {                                                                                        \
    KEY, HELP, [](const RunConfig& c) { return nlohmann::json(c.EXPR); },                        \
        [](RunConfig& c, const toml::node& n) { c.EXPR = detail::require_list<TYPE>(n, KEY); }    \
  }

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      TIGR_FIELD("data.name", "dataset label written to metric files", std::string, dataset),
      TIGR_FIELD("data.seed", "synthetic generator seed", std::uint64_t, data_seed),
      TIGR_FIELD("data.lattice", "synthetic city: g x g intersections", std::size_t, synth.lattice),
      TIGR_FIELD("data.spacing_m", "synthetic block length (m)", double, synth.spacing_m),
      TIGR_FIELD("data.trajectories", "synthetic trajectory count", std::size_t, synth.trajectories),
      TIGR_FIELD("data.min_segments", "shortest synthetic route (segments)", std::size_t, synth.min_segments),
      TIGR_FIELD("data.max_segments", "longest synthetic route (segments)", std::size_t, synth.max_segments),
      TIGR_FIELD("data.points_per_segment", "raw GPS points per traversed segment", std::size_t,
                 synth.points_per_segment),
      TIGR_LIST("data.rush_hours", "hours of the rush-hour speed dips", double, synth.rush_hours),
      TIGR_FIELD("data.rush_factor", "speed multiplier at a rush-hour peak", double, synth.rush_factor),
      TIGR_FIELD("data.rush_width_h", "rush-hour dip width (h)", double, synth.rush_width_h),
      TIGR_FIELD("data.weekday_rush_only", "no rush hours on weekends", bool, synth.weekday_rush_only),
      TIGR_FIELD("data.straight_weight", "walk preference for going straight", double, synth.straight_weight),
      TIGR_FIELD("data.span_days", "departure times spread over this many days", double, synth.span_days),
      TIGR_FIELD("data.min_len", "fewest raw points kept", std::size_t, prep.min_len),
      TIGR_FIELD("data.max_len", "most raw points kept", std::size_t, prep.max_len),
      Field{"data.split", "train, validation, test fractions",
            [](const RunConfig& c) { return nlohmann::json(c.prep.split); },
            [](RunConfig& c, const toml::node& n) {
              auto v = detail::require_list<double>(n, "data.split");
              if (v.size() != 3) throw ConfigError("data.split needs three fractions", "data.split");
              c.prep.split = {v[0], v[1], v[2]};
            }},
      TIGR_FIELD("grid.cell_size_m", "grid cell edge (m)", double, synth.cell_size_m),
      TIGR_FIELD("grid.margin_m", "synthetic city margin inside the grid box (m)", double, synth.margin_m),
      TIGR_FIELD("grid.origin_lon", "synthetic city south-west corner longitude", double, synth.origin_lon),
      TIGR_FIELD("grid.origin_lat", "synthetic city south-west corner latitude", double, synth.origin_lat),
      Field{"grid.bbox", "min_lon, min_lat, max_lon, max_lat for data without grid.toml",
            [](const RunConfig& c) { return c.bbox ? nlohmann::json(*c.bbox) : nlohmann::json(); },
            [](RunConfig& c, const toml::node& n) {
              auto v = detail::require_list<double>(n, "grid.bbox");
              if (v.size() != 4) throw ConfigError("grid.bbox needs four numbers", "grid.bbox");
              c.bbox = std::array<double, 4>{v[0], v[1], v[2], v[3]};
            }},
      TIGR_FIELD("model.d_g", "grid branch width", std::size_t, model.d_g),
      TIGR_FIELD("model.d_r", "road branch width", std::size_t, model.d_r),
      TIGR_FIELD("model.d_st", "spatio-temporal branch width", std::size_t, model.d_st),
      TIGR_FIELD("model.n_layers", "encoder layers", std::size_t, model.n_layers),
      TIGR_FIELD("model.h_enc", "encoder attention heads", std::size_t, model.h_enc),
      TIGR_FIELD("model.h_lma", "local attention heads", std::size_t, model.h_lma),
      TIGR_FIELD("model.q", "time embedding width", std::size_t, model.q),
      TIGR_FIELD("model.ffn_mult", "feed-forward width multiplier", std::size_t, model.ffn_mult),
      TIGR_FIELD("model.mu", "target EMA decay", double, model.mu),
      TIGR_FIELD("model.dropout", "dropout probability", double, model.dropout),
      TIGR_LIST("masking.view1", "View 1 strategies in order (RM, TC, CM)", std::string, masking.view1),
      TIGR_LIST("masking.view2", "View 2 strategies in order", std::string, masking.view2),
      TIGR_FIELD("masking.p_rm", "random masking ratio", double, masking.p_rm),
      TIGR_FIELD("masking.p_tc", "truncation ratio", double, masking.p_tc),
      TIGR_FIELD("masking.p_cm", "consecutive masking ratio", double, masking.p_cm),
      TIGR_FIELD("masking.min_keep", "tokens always kept per sequence", std::size_t, masking.min_keep),
      TIGR_FIELD("train.lr", "Adam learning rate", double, train.lr),
      TIGR_FIELD("train.batch", "batch size", std::size_t, train.batch),
      TIGR_FIELD("train.epochs", "pretraining epochs", std::size_t, train.epochs),
      TIGR_FIELD("train.tau", "InfoNCE temperature", double, train.tau),
      TIGR_FIELD("train.lambda", "intra-modal loss weight", double, train.lambda),
      TIGR_FIELD("train.queue", "negative queue capacity per branch", std::size_t, train.queue),
      TIGR_FIELD("train.seed", "initialisation, masking and shuffling seed", std::uint64_t, train.seed),
      TIGR_FIELD("eval.queries", "similarity search queries", std::size_t, eval.queries),
      TIGR_FIELD("eval.k_neg", "similarity search distractors", std::size_t, eval.k_neg),
      TIGR_LIST("eval.kneg_sweep", "distractor counts for --kneg-sweep", std::size_t, eval.kneg_sweep),
      TIGR_FIELD("eval.head_epochs", "prediction head epochs", std::size_t, eval.head_epochs),
      TIGR_FIELD("eval.head_lr", "prediction head learning rate", double, eval.head_lr),
      TIGR_FIELD("eval.head_batch", "prediction head batch size", std::size_t, eval.head_batch),
      TIGR_FIELD("eval.geojson_k", "matches exported by export-similar", std::size_t, eval.geojson_k),
      TIGR_FIELD("eval.seed", "query sampling and head seed", std::uint64_t, eval.seed),
      Field{"ablation.branches", "active branches, e.g. g+r+st",
            [](const RunConfig& c) { return nlohmann::json(c.ablation.branches.describe()); },
            [](RunConfig& c, const toml::node& n) {
              c.ablation.branches = model::BranchSet::parse(detail::require<std::string>(n, "ablation.branches"));
            }},
      TIGR_FIELD("ablation.no_inter", "drop the inter-modal loss", bool, ablation.no_inter),
      TIGR_FIELD("ablation.no_lma", "single-head attention in the spatio-temporal branch", bool, ablation.no_lma),
      TIGR_FIELD("ablation.no_rope", "no rotary position embedding", bool, ablation.no_rope),
  };
  return f;
}

#undef TIGR_FIELD
#undef TIGR_LIST

inline const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

/// Range and consistency checks shared by every command.
inline void validate(const RunConfig& c) {
  data::validate(c.synth);
  if (c.prep.min_len < 2 || c.prep.max_len < c.prep.min_len) {
    throw ConfigError("need 2 <= data.min_len <= data.max_len", "data.min_len");
  }
  auto m = c.model;
  m.grid_vocab = m.road_vocab = 1;
  m.branches = c.ablation.branches;
  m.lma = !c.ablation.no_lma;
  m.rope = !c.ablation.no_rope;
  m.validate();
  c.train_config().validate();
  if (c.eval.queries == 0) throw ConfigError("eval.queries must be positive", "eval.queries");
  if (c.eval.head_batch == 0) throw ConfigError("eval.head_batch must be positive", "eval.head_batch");
  if (!(c.eval.head_lr > 0.0)) throw ConfigError("eval.head_lr must be positive", "eval.head_lr");
}

/// Applies every key of a parsed document; unknown sections and keys are
/// errors that name the key.
inline void apply(RunConfig& c, const toml::table& doc) {
  for (const auto& [section, node] : doc) {
    const std::string s(section.str());
    const auto* t = node.as_table();
    if (!t) {
      if (find_field(s)) throw ConfigError(s + " must sit inside a [section]", s);
      throw ConfigError("unknown config key '" + s + "'", s);
    }
    for (const auto& [name, value] : *t) {
      const std::string key = s + "." + std::string(name.str());
      const auto* f = find_field(key);
      if (!f) throw ConfigError("unknown config key '" + key + "'", key);
      f->set(c, value);
    }
  }
}

inline toml::table parse_toml(const std::string& text, const std::string& source) {
  try {
    return toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    const auto& b = e.source().begin;
    throw ParseError(source + ": " + std::string(e.description()), b.line);
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'", "config");
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c;
  apply(c, parse_toml(ss.str(), path.string()));
  validate(c);
  return c;
}

/// `key=value` with a TOML value; bare words are taken as strings.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value", "set");
  const auto key = assignment.substr(0, eq);
  const auto dot = key.find('.');
  if (dot == std::string::npos || !find_field(key)) throw ConfigError("unknown config key '" + key + "'", key);
  const auto value = assignment.substr(eq + 1);
  toml::table doc;
  try {
    doc = toml::parse("v = " + value);
  } catch (const toml::parse_error&) {
    doc = toml::table{{"v", value}};
  }
  toml::table section{{key.substr(dot + 1), *doc.get("v")}};
  apply(c, toml::table{{key.substr(0, dot), section}});
}

/// Canonical JSON: every key, in registry order.
inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    j[f.key.substr(0, dot)][f.key.substr(dot + 1)] = f.get(c);
  }
  return j;
}

inline std::string config_hash(const RunConfig& c) { return sha256_hex(to_json(c).dump()); }

namespace detail {

inline void insert_json(toml::table& t, const std::string& name, const nlohmann::json& v) {
  if (v.is_boolean()) t.insert(name, v.get<bool>());
  else if (v.is_number_float()) t.insert(name, v.get<double>());
  else if (v.is_number()) t.insert(name, v.get<std::int64_t>());
  else if (v.is_string()) t.insert(name, v.get<std::string>());
  else if (v.is_array()) {
    toml::array a;
    for (const auto& e : v) {
      if (e.is_number_float()) a.push_back(e.get<double>());
      else if (e.is_number()) a.push_back(e.get<std::int64_t>());
      else a.push_back(e.get<std::string>());
    }
    t.insert(name, std::move(a));
  }
}

inline toml::table toml_of(const nlohmann::json& j) {
  toml::table doc;
  for (const auto& [section, values] : j.items()) {
    toml::table t;
    for (const auto& [name, v] : values.items())
      if (!v.is_null()) insert_json(t, name, v);
    doc.insert(section, std::move(t));
  }
  return doc;
}

}  // namespace detail

/// Inverse of to_json, through the same key checks as a TOML file.
inline RunConfig from_json(const nlohmann::json& j) {
  RunConfig c;
  apply(c, detail::toml_of(j));
  validate(c);
  return c;
}

/// The resolved configuration as a TOML document that load_config accepts.
inline std::string to_toml(const RunConfig& c) {
  std::ostringstream out;
  out << detail::toml_of(to_json(c)) << '\n';
  return out.str();
}

/// One line per key with its default, for --help.
inline std::string describe_keys() {
  const RunConfig defaults;
  std::string out;
  std::size_t width = 0;
  for (const auto& f : fields()) width = std::max(width, f.key.size());
  for (const auto& f : fields()) {
    const auto v = f.get(defaults);
    out += "  " + f.key + std::string(width - f.key.size() + 2, ' ') + (v.is_null() ? "(unset)" : v.dump()) + "  " +
           f.help + "\n";
  }
  return out;
}

}  // namespace tigr::cli
