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

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "tigr/adam.hpp"
#include "tigr/encoder/model.hpp"

// Checkpoint directory layout:
//   manifest.json  names, shapes, byte offsets, config, optimizer state
//   params.bin     little-endian float32 values, concatenated

namespace tigr::model {

using json = nlohmann::json;

inline json to_json(const ModelConfig& c) {
  return {{"grid_vocab", c.grid_vocab}, {"road_vocab", c.road_vocab}, {"d_g", c.d_g},
          {"d_r", c.d_r},               {"d_st", c.d_st},             {"n_layers", c.n_layers},
          {"h_enc", c.h_enc},           {"h_lma", c.h_lma},           {"q", c.q},
          {"ffn_mult", c.ffn_mult},     {"mu", c.mu},                 {"dropout", c.dropout},
          {"branches", c.branches.describe()}, {"rope", c.rope},      {"lma", c.lma}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.grid_vocab = j.at("grid_vocab");
  c.road_vocab = j.at("road_vocab");
  c.d_g = j.at("d_g");
  c.d_r = j.at("d_r");
  c.d_st = j.at("d_st");
  c.n_layers = j.at("n_layers");
  c.h_enc = j.at("h_enc");
  c.h_lma = j.at("h_lma");
  c.q = j.at("q");
  c.ffn_mult = j.at("ffn_mult");
  c.mu = j.at("mu");
  c.dropout = j.at("dropout");
  c.branches = BranchSet::parse(j.at("branches").get<std::string>());
  c.rope = j.at("rope");
  c.lma = j.at("lma");
  return c;
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint blob assumes a little-endian host");

template <class Real>
void append(std::vector<char>& blob, json& entries, const std::string& group, const std::string& name,
            const Tensor<Real>& t) {
  entries.push_back({{"group", group}, {"name", name}, {"shape", t.shape()}, {"offset", blob.size()},
                     {"count", t.size()}});
  const auto at = blob.size();
  blob.resize(at + t.size() * sizeof(float));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto f = static_cast<float>(t[i]);
    std::memcpy(blob.data() + at + i * sizeof(float), &f, sizeof(float));
  }
}

template <class Real>
Tensor<Real> extract(const std::vector<char>& blob, const json& e) {
  const Shape shape = e.at("shape").get<Shape>();
  const std::size_t offset = e.at("offset"), count = e.at("count");
  if (offset + count * sizeof(float) > blob.size()) {
    throw ParseError("checkpoint tensor '" + e.at("name").get<std::string>() + "' runs past the blob");
  }
  Tensor<Real> t(shape);
  if (t.size() != count) throw ParseError("checkpoint tensor '" + e.at("name").get<std::string>() + "' has a bad count");
  for (std::size_t i = 0; i < count; ++i) {
    float f;
    std::memcpy(&f, blob.data() + offset + i * sizeof(float), sizeof(float));
    t[i] = static_cast<Real>(f);
  }
  return t;
}

}  // namespace detail

/// Model plus the optimizer state needed to resume training.
template <class Real = float>
struct Checkpoint {
  std::unique_ptr<TigrModel<Real>> model;
  Adam<Real> adam;
  std::size_t epoch = 0;
  json extra;  // caller-owned snapshot, such as the run configuration
};

template <class Real>
void save_checkpoint(const std::filesystem::path& dir, const TigrModel<Real>& m, const Adam<Real>& adam,
                     std::size_t epoch = 0, const json& extra = json::object()) {
  std::filesystem::create_directories(dir);
  std::vector<char> blob;
  json entries = json::array();
  for (const auto& p : m.anchor()) detail::append(blob, entries, "anchor", p.name, p.value);
  for (const auto& p : m.target()) detail::append(blob, entries, "target", p.name, p.value);
  for (const auto& [name, mom] : adam.moments()) {
    detail::append(blob, entries, "adam_m", name, mom.m);
    detail::append(blob, entries, "adam_v", name, mom.v);
  }
  const auto& ac = adam.config();
  json manifest = {{"format", "tigr-checkpoint"},
                   {"version", 1},
                   {"dtype", "float32"},
                   {"byte_order", "little"},
                   {"blob", "params.bin"},
                   {"blob_bytes", blob.size()},
                   {"epoch", epoch},
                   {"model", to_json(m.config())},
                   {"optimizer", {{"lr", ac.lr}, {"beta1", ac.beta1}, {"beta2", ac.beta2}, {"eps", ac.eps},
                                  {"step", adam.steps()}}},
                   {"tensors", entries},
                   {"extra", extra}};
  {
    std::ofstream out(dir / "params.bin", std::ios::binary);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("cannot write " + (dir / "params.bin").string());
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
}

inline json read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ParseError("no checkpoint manifest in '" + dir.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("checkpoint manifest: " + std::string(e.what()));
  }
  if (j.value("format", "") != "tigr-checkpoint") throw ParseError("not a checkpoint manifest: " + dir.string());
  return j;
}

/// Rebuilds the model from the manifest, then overwrites every tensor from
/// the blob. Unknown or missing tensors are errors.
template <class Real = float>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest = read_manifest(dir);
  std::ifstream in(dir / manifest.at("blob").get<std::string>(), std::ios::binary);
  if (!in) throw ParseError("missing checkpoint blob in '" + dir.string() + "'");
  std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() != manifest.at("blob_bytes").get<std::size_t>()) throw ParseError("checkpoint blob size mismatch");

  Checkpoint<Real> ck;
  Rng scratch(0);
  ck.model = std::make_unique<TigrModel<Real>>(model_config_from_json(manifest.at("model")), scratch);
  const auto& o = manifest.at("optimizer");
  ck.adam = Adam<Real>(AdamConfig{o.at("lr"), o.at("beta1"), o.at("beta2"), o.at("eps")});
  ck.adam.set_steps(o.at("step"));
  ck.epoch = manifest.at("epoch");
  ck.extra = manifest.value("extra", json::object());

  std::size_t anchors = 0, targets = 0;
  for (const auto& e : manifest.at("tensors")) {
    const auto group = e.at("group").get<std::string>();
    const auto name = e.at("name").get<std::string>();
    auto t = detail::extract<Real>(blob, e);
    auto assign = [&](ParameterSet<Real>& ps, std::size_t& n) {
      auto* p = ps.find(name);
      if (!p) throw ParseError("checkpoint tensor '" + name + "' does not belong to the model");
      if (p->value.shape() != t.shape()) throw ParseError("checkpoint tensor '" + name + "' has the wrong shape");
      p->value = std::move(t);
      ++n;
    };
    if (group == "anchor") assign(ck.model->anchor(), anchors);
    else if (group == "target") assign(ck.model->target(), targets);
    else if (group == "adam_m") ck.adam.moments()[name].m = std::move(t);
    else if (group == "adam_v") ck.adam.moments()[name].v = std::move(t);
    else throw ParseError("unknown checkpoint group '" + group + "'");
  }
  if (anchors != ck.model->anchor().size() || targets != ck.model->target().size()) {
    throw ParseError("checkpoint is missing parameters");
  }
  return ck;
}

}  // namespace tigr::model
