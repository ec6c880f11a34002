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

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tigr/module.hpp"

namespace tigr::enc {

struct EncoderShape {
  std::size_t d = 128;
  std::size_t layers = 2;
  std::size_t heads = 8;
  std::size_t ffn_mult = 4;
  bool rope = true;
};

inline void validate(const EncoderShape& s, const std::string& key) {
  if (s.d == 0 || s.heads == 0 || s.d % s.heads != 0) {
    throw ConfigError(key + ": width " + std::to_string(s.d) + " is not divisible by " +
                          std::to_string(s.heads) + " heads",
                      "model.h_enc");
  }
  if (s.rope && (s.d / s.heads) % 2 != 0) {
    throw ConfigError(key + ": rotary embeddings need an even head width", "model.h_enc");
  }
  if (s.layers == 0) throw ConfigError("model.n_layers must be positive", "model.n_layers");
}

/// Embedding table, N(0, 0.02^2).
template <class Real>
void init_embedding(ParameterSet<Real>& ps, const std::string& name, std::size_t vocab, std::size_t d, Rng& rng) {
  if (vocab == 0) throw ConfigError("embedding vocabulary is empty", name);
  ps.add(name, Tensor<Real>::normal({vocab, d}, 0.02, rng));
}

/// Replaces an embedding table with externally trained vectors: one row per
/// line, whitespace-separated, vocab rows of d values.
template <class Real>
void load_embedding_table(ParameterSet<Real>& ps, const std::string& name, const std::string& path) {
  auto& p = ps.at(name);
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open embedding table '" + path + "'", 0);
  const auto rows = p.value.rows(), cols = p.value.cols();
  Tensor<Real> t({rows, cols});
  std::string line;
  std::size_t r = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (r == rows) throw ParseError(path + ": more than " + std::to_string(rows) + " rows", r + 1);
    std::istringstream ls(line);
    double v;
    std::size_t c = 0;
    while (ls >> v) {
      if (c == cols) break;
      t.row(r)[c++] = static_cast<Real>(v);
    }
    if (c != cols || (ls >> std::ws, !ls.eof())) {
      throw ParseError(path + ": expected " + std::to_string(cols) + " values", r + 1);
    }
    ++r;
  }
  if (r != rows) throw ParseError(path + ": expected " + std::to_string(rows) + " rows, got " + std::to_string(r), r);
  p.value = std::move(t);
}

template <class Real>
Var<Real> embed_tokens(Binder<Real>& b, const std::string& name, const std::vector<std::size_t>& ids) {
  auto table = b(name);
  const auto vocab = table.value().rows();
  for (auto id : ids) {
    if (id >= vocab) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab) +
                       " (" + name + ")");
    }
  }
  return gather_rows(table, ids);
}

template <class Real>
void init_encoder(ParameterSet<Real>& ps, const std::string& prefix, const EncoderShape& s, Rng& rng) {
  validate(s, prefix);
  const std::size_t d = s.d, f = s.ffn_mult * s.d;
  for (std::size_t l = 0; l < s.layers; ++l) {
    const auto p = prefix + ".layer" + std::to_string(l);
    add_constant<Real>(ps, p + ".attn_norm", {d}, Real{1});
    add_weight(ps, p + ".wq", d, d, rng);
    add_weight(ps, p + ".wk", d, d, rng);
    add_weight(ps, p + ".wv", d, d, rng);
    add_weight(ps, p + ".wo", d, d, rng);
    add_constant<Real>(ps, p + ".ffn_norm", {d}, Real{1});
    add_weight(ps, p + ".w1", d, f, rng);
    add_constant<Real>(ps, p + ".b1", {f}, Real{0});
    add_weight(ps, p + ".w2", f, d, rng);
    add_constant<Real>(ps, p + ".b2", {d}, Real{0});
  }
  add_constant<Real>(ps, prefix + ".final_norm", {d}, Real{1});
}

/// Packed token rows of several sequences and what the encoder needs to know
/// about them.
struct SequenceLayout {
  Segments segments;
  std::vector<double> positions;  // RoPE position of every row
};

inline SequenceLayout layout_from_lengths(const std::vector<std::size_t>& lengths) {
  SequenceLayout l;
  l.segments = segments_from_lengths(lengths);
  for (auto n : lengths)
    for (std::size_t i = 0; i < n; ++i) l.positions.push_back(static_cast<double>(i));
  return l;
}

/// Pre-norm transformer over packed sequences followed by a final RMSNorm and
/// per-sequence mean pooling. Returns one row per segment. `rng` is only used
/// when dropout > 0.
template <class Real>
Var<Real> encoder_forward(Binder<Real>& b, const std::string& prefix, const EncoderShape& s, Var<Real> x,
                          const SequenceLayout& layout, double dropout_p = 0.0, Rng* rng = nullptr) {
  for (const auto& seg : layout.segments) {
    if (seg.length == 0) throw ContractError("encoder input has an empty sequence");
  }
  if (x.value().cols() != s.d) {
    throw DimensionError(prefix + ": input width " + std::to_string(x.value().cols()) + ", expected " +
                         std::to_string(s.d));
  }
  if (dropout_p > 0.0 && !rng) throw ContractError("dropout needs an Rng");
  const std::size_t head_dim = s.d / s.heads;
  auto drop = [&](Var<Real> v) { return dropout_p > 0.0 ? dropout(v, dropout_p, *rng) : v; };
  for (std::size_t l = 0; l < s.layers; ++l) {
    const auto p = prefix + ".layer" + std::to_string(l);
    auto h = rmsnorm(x, b(p + ".attn_norm"));
    auto q = matmul(h, b(p + ".wq"));
    auto k = matmul(h, b(p + ".wk"));
    auto v = matmul(h, b(p + ".wv"));
    if (s.rope) {
      q = rope(q, layout.positions, head_dim);
      k = rope(k, layout.positions, head_dim);
    }
    auto attn = segment_attention(q, k, v, layout.segments, s.heads, 1.0 / std::sqrt(static_cast<double>(head_dim)));
    x = add(x, drop(matmul(attn, b(p + ".wo"))));
    auto g = rmsnorm(x, b(p + ".ffn_norm"));
    auto ff = add_bias(matmul(gelu(add_bias(matmul(g, b(p + ".w1")), b(p + ".b1"))), b(p + ".w2")), b(p + ".b2"));
    x = add(x, drop(ff));
  }
  x = rmsnorm(x, b(prefix + ".final_norm"));
  return segment_mean(x, layout.segments);
}

/// Two affine maps with a GELU between them.
template <class Real>
void init_head(ParameterSet<Real>& ps, const std::string& prefix, std::size_t d_in, std::size_t d_out, Rng& rng) {
  add_weight(ps, prefix + ".w1", d_in, d_in, rng);
  add_constant<Real>(ps, prefix + ".b1", {d_in}, Real{0});
  add_weight(ps, prefix + ".w2", d_in, d_out, rng);
  add_constant<Real>(ps, prefix + ".b2", {d_out}, Real{0});
}

inline std::atomic<std::size_t>& projection_calls() {
  static std::atomic<std::size_t> n{0};
  return n;
}

template <class Real>
Var<Real> project(Binder<Real>& b, const std::string& prefix, Var<Real> z) {
  ++projection_calls();
  auto h = gelu(add_bias(matmul(z, b(prefix + ".w1")), b(prefix + ".b1")));
  return add_bias(matmul(h, b(prefix + ".w2")), b(prefix + ".b2"));
}

/// Frozen copies of the named anchor parameters.
template <class Real>
void clone_frozen(const ParameterSet<Real>& anchor, ParameterSet<Real>& target, const std::string& prefix) {
  for (const auto& p : anchor) {
    if (p.name.rfind(prefix, 0) == 0) target.add(p.name, p.value, false);
  }
}

/// target <- mu * target + (1 - mu) * anchor for every target tensor.
template <class Real>
void ema_update(ParameterSet<Real>& target, const ParameterSet<Real>& anchor, double mu) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("EMA decay must lie in [0, 1]", "model.mu");
  for (auto& t : target) {
    const auto* a = anchor.find(t.name);
    if (!a) throw IndexError("EMA target '" + t.name + "' has no anchor");
    t.value.require_same_shape(a->value, "ema_update");
    if (mu == 1.0) continue;
    if (mu == 0.0) {
      t.value = a->value;
      continue;
    }
    for (std::size_t i = 0; i < t.value.size(); ++i) {
      t.value[i] = static_cast<Real>(mu * t.value[i] + (1.0 - mu) * a->value[i]);
    }
  }
}

}  // namespace tigr::enc
