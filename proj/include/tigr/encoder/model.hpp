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
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "tigr/data/types.hpp"
#include "tigr/encoder/transformer.hpp"
#include "tigr/spatiotemporal/branch.hpp"

namespace tigr::model {

enum class Branch { kGrid, kRoad, kSt };
inline constexpr std::array<Branch, 3> kBranches = {Branch::kGrid, Branch::kRoad, Branch::kSt};

inline const char* branch_name(Branch b) {
  switch (b) {
    case Branch::kGrid: return "grid";
    case Branch::kRoad: return "road";
    case Branch::kSt: return "st";
  }
  return "?";
}

inline const char* branch_short(Branch b) {
  switch (b) {
    case Branch::kGrid: return "g";
    case Branch::kRoad: return "r";
    case Branch::kSt: return "st";
  }
  return "?";
}

/// Which branches a model carries.
struct BranchSet {
  bool grid = true, road = true, st = true;

  bool has(Branch b) const {
    switch (b) {
      case Branch::kGrid: return grid;
      case Branch::kRoad: return road;
      case Branch::kSt: return st;
    }
    return false;
  }
  std::size_t count() const { return std::size_t{grid} + std::size_t{road} + std::size_t{st}; }

  std::vector<Branch> active() const {
    std::vector<Branch> out;
    for (auto b : kBranches)
      if (has(b)) out.push_back(b);
    return out;
  }

  /// "g+r+st" style.
  std::string describe() const {
    std::string s;
    for (auto b : active()) s += (s.empty() ? "" : "+") + std::string(branch_short(b));
    return s;
  }

  static BranchSet parse(const std::string& text) {
    BranchSet s{false, false, false};
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto end = text.find('+', pos);
      if (end == std::string::npos) end = text.size();
      const auto part = text.substr(pos, end - pos);
      if (part == "g") s.grid = true;
      else if (part == "r") s.road = true;
      else if (part == "st") s.st = true;
      else throw ConfigError("unknown branch '" + part + "' in '" + text + "' (use g, r, st joined by +)", "ablation.branches");
      pos = end + 1;
    }
    return s;
  }

  bool operator==(const BranchSet&) const = default;
};

struct ModelConfig {
  std::size_t grid_vocab = 0;
  std::size_t road_vocab = 0;
  std::size_t d_g = 256, d_r = 128, d_st = 128;
  std::size_t n_layers = 2, h_enc = 8, h_lma = 4, q = 32, ffn_mult = 4;
  double mu = 0.99;
  double dropout = 0.1;
  BranchSet branches;
  bool rope = true;
  bool lma = true;  // false collapses LMA to a single global head

  std::size_t width(Branch b) const {
    switch (b) {
      case Branch::kGrid: return d_g;
      case Branch::kRoad: return d_r;
      case Branch::kSt: return d_st;
    }
    return 0;
  }

  /// Shared projection width so cross-branch pairs live in one space.
  std::size_t d_proj() const {
    std::size_t w = 0;
    for (auto b : branches.active()) w = w == 0 ? width(b) : std::min(w, width(b));
    return w;
  }

  std::size_t embedding_dim() const {
    std::size_t w = 0;
    for (auto b : branches.active()) w += width(b);
    return w;
  }

  enc::EncoderShape encoder_shape(Branch b) const { return {width(b), n_layers, h_enc, ffn_mult, rope}; }
  st::StShape st_shape() const { return {d_st, q, lma ? h_lma : 1}; }

  void validate() const {
    if (branches.count() == 0) throw ConfigError("at least one branch must be enabled", "ablation.branches");
    if (branches.grid && grid_vocab == 0) throw ConfigError("grid vocabulary is empty", "grid");
    if ((branches.road || branches.st) && road_vocab == 0) throw ConfigError("road vocabulary is empty", "data");
    if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("model.mu must lie in [0, 1]", "model.mu");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)", "model.dropout");
    for (auto b : branches.active()) enc::validate(encoder_shape(b), std::string("model.d_") + branch_short(b));
    if (branches.st) st::validate(st_shape());
  }
};

/// One trajectory as both branch inputs see it.
struct Sample {
  std::string id;
  std::vector<data::Token> grid;
  std::vector<data::Token> road;
};

/// Same sample with every road timestamp replaced by the first one.
inline Sample start_time_only(Sample s) {
  if (!s.road.empty()) {
    const auto t0 = s.road.front().t;
    for (auto& t : s.road) t.t = t0;
  }
  if (!s.grid.empty()) {
    const auto t0 = s.grid.front().t;
    for (auto& t : s.grid) t.t = t0;
  }
  return s;
}

/// Pairs grid and road sequences by trajectory id, in road order. Ids present
/// on only one side are skipped.
inline std::vector<Sample> make_samples(const std::vector<data::GridTrajectory>& grid,
                                        const std::vector<data::RoadTrajectory>& road) {
  std::unordered_map<std::string, const data::GridTrajectory*> by_id;
  for (const auto& g : grid) by_id.emplace(g.id, &g);
  std::vector<Sample> out;
  out.reserve(road.size());
  for (const auto& r : road) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) continue;
    out.push_back({r.id, it->second->tokens, r.tokens});
  }
  return out;
}

using Batch = std::vector<const Sample*>;
using KeepLists = std::vector<std::vector<std::size_t>>;

inline std::string embed_name(Branch b) { return std::string(branch_name(b)) + ".embed"; }
inline std::string encoder_prefix(Branch b) { return std::string(branch_name(b)) + ".encoder"; }
inline std::string head_prefix(Branch b) { return std::string(branch_name(b)) + ".head"; }

/// All parameters of the model. The anchor set holds everything trainable
/// (embedders, spatio-temporal module, anchor encoders and heads); the target
/// set holds EMA shadows of the encoders and heads under the same names.
template <class Real = float>
class TigrModel {
 public:
  TigrModel(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (auto b : cfg_.branches.active()) {
      if (b == Branch::kGrid) enc::init_embedding(anchor_, embed_name(b), cfg_.grid_vocab, cfg_.d_g, rng);
      if (b == Branch::kRoad) enc::init_embedding(anchor_, embed_name(b), cfg_.road_vocab, cfg_.d_r, rng);
      if (b == Branch::kSt) st::init_st(anchor_, cfg_.st_shape(), rng, "st");
      enc::init_encoder(anchor_, encoder_prefix(b), cfg_.encoder_shape(b), rng);
      enc::init_head(anchor_, head_prefix(b), cfg_.width(b), cfg_.d_proj(), rng);
    }
    for (auto b : cfg_.branches.active()) {
      enc::clone_frozen(anchor_, target_, encoder_prefix(b) + ".");
      enc::clone_frozen(anchor_, target_, head_prefix(b) + ".");
    }
  }

  TigrModel(const TigrModel&) = delete;
  TigrModel& operator=(const TigrModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<Real>& anchor() { return anchor_; }
  const ParameterSet<Real>& anchor() const { return anchor_; }
  ParameterSet<Real>& target() { return target_; }
  const ParameterSet<Real>& target() const { return target_; }

  void set_traffic(std::shared_ptr<const st::TrafficFeatures<Real>> f) { traffic_ = std::move(f); }
  const st::TrafficFeatures<Real>* traffic() const { return traffic_.get(); }

  void ema_update() { enc::ema_update(target_, anchor_, cfg_.mu); }

  /// Token rows of one branch before the encoder, packed over the batch.
  /// Embedders and the spatio-temporal module always come from the anchor set.
  Var<Real> branch_tokens(Binder<Real>& b, Branch br, const Batch& batch) const {
    std::vector<std::size_t> ids;
    std::vector<data::Token> tokens;
    std::vector<std::size_t> lengths;
    for (const auto* s : batch) {
      const auto& seq = br == Branch::kGrid ? s->grid : s->road;
      if (seq.empty()) throw ContractError("trajectory '" + s->id + "' has an empty " + branch_name(br) + " sequence");
      lengths.push_back(seq.size());
      for (const auto& t : seq) {
        ids.push_back(t.id);
        tokens.push_back(t);
      }
    }
    if (br != Branch::kSt) return enc::embed_tokens(b, embed_name(br), ids);
    if (!traffic_) throw ContractError("spatio-temporal branch needs traffic features");
    std::vector<data::Timestamp> times;
    times.reserve(tokens.size());
    for (const auto& t : tokens) times.push_back(t.t);
    return st::st_branch(b, cfg_.st_shape(), *traffic_, tokens, times, segments_from_lengths(lengths), "st");
  }

  /// Pooled encoder output (B x d_b). `keep`, when given, lists the surviving
  /// positions of every sequence; survivors are re-indexed from 0 for RoPE.
  Var<Real> encode_branch(Binder<Real>& emb, Binder<Real>& enc, Branch br, const Batch& batch,
                          const KeepLists* keep = nullptr, double dropout = 0.0, Rng* rng = nullptr) const {
    auto rows = branch_tokens(emb, br, batch);
    std::vector<std::size_t> lengths;
    if (keep) {
      if (keep->size() != batch.size()) throw DimensionError("keep lists do not match the batch");
      std::vector<std::size_t> pick;
      std::size_t offset = 0;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto len = br == Branch::kGrid ? batch[i]->grid.size() : batch[i]->road.size();
        for (auto k : (*keep)[i]) {
          if (k >= len) throw IndexError("kept position " + std::to_string(k) + " beyond sequence length");
          pick.push_back(offset + k);
        }
        lengths.push_back((*keep)[i].size());
        offset += len;
      }
      rows = gather_rows(rows, pick);
    } else {
      for (const auto* s : batch) lengths.push_back(br == Branch::kGrid ? s->grid.size() : s->road.size());
    }
    return enc::encoder_forward(enc, encoder_prefix(br), cfg_.encoder_shape(br), rows,
                                enc::layout_from_lengths(lengths), dropout, rng);
  }

  /// Inference embedding z = z^g || z^r || z^st over the active branches,
  /// anchor encoders, no masking, no projection, no dropout.
  Tensor<Real> embed(const Batch& batch, std::size_t chunk = 256) const {
    const auto dim = cfg_.embedding_dim();
    Tensor<Real> out({batch.size(), dim});
    auto& params = const_cast<ParameterSet<Real>&>(anchor_);  // read-only on a no-grad tape
    for (std::size_t lo = 0; lo < batch.size(); lo += chunk) {
      const auto hi = std::min(batch.size(), lo + chunk);
      Batch part(batch.begin() + static_cast<std::ptrdiff_t>(lo), batch.begin() + static_cast<std::ptrdiff_t>(hi));
      Tape<Real> tape(false);
      Binder<Real> b(tape, params);
      std::size_t col = 0;
      for (auto br : cfg_.branches.active()) {
        const auto z = encode_branch(b, b, br, part).value();
        for (std::size_t i = 0; i < z.rows(); ++i) {
          std::copy_n(z.row(i).data(), z.cols(), out.row(lo + i).data() + col);
        }
        col += z.cols();
      }
    }
    return out;
  }

  Tensor<Real> embed(const std::vector<Sample>& samples, std::size_t chunk = 256) const {
    Batch batch;
    for (const auto& s : samples) batch.push_back(&s);
    return embed(batch, chunk);
  }

 private:
  ModelConfig cfg_;
  ParameterSet<Real> anchor_;
  ParameterSet<Real> target_;
  std::shared_ptr<const st::TrafficFeatures<Real>> traffic_;
};

}  // namespace tigr::model
