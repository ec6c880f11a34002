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

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "tigr/data/types.hpp"
#include "tigr/module.hpp"
#include "tigr/spatiotemporal/matrices.hpp"

// The spatio-temporal branch: traffic graph convolution (T^s), learnable time
// embedding (T^t), local multi-head attention and the cross-attention fusion
// producing T^st.

namespace tigr::st {

inline constexpr data::Timestamp kSecondsPerWeek = 7 * 86400;

/// Hours since the start of the ISO week (Monday 00:00 UTC), in [0, 168).
inline double week_hours(data::Timestamp t) {
  // the Unix epoch fell on a Thursday, 72 hours into its ISO week
  const auto s = ((t + 3 * 86400) % kSecondsPerWeek + kSecondsPerWeek) % kSecondsPerWeek;
  return static_cast<double>(s) / 3600.0;
}

/// Per (segment, hour) inputs of the graph convolution, precomputed once.
///
/// x_v(h) = [z(X[v][h]), z(length_v), z(speed limit_v), one-hot class_v] with
/// z() standardization over the network. Row v * 24 + h of `self` holds
/// P'[v][v] x_v(h); the same row of `neighbors` holds sum_{j in N(v)} P'[v][j] x_j(h).
template <class Real = float>
struct TrafficFeatures {
  std::size_t segments = 0;
  std::size_t width = 0;
  Tensor<Real> self;
  Tensor<Real> neighbors;

  static constexpr std::size_t kWidth = 1 + data::RoadNetwork::kFeatureCount;

  static TrafficFeatures build(const data::RoadNetwork& net, const TransitionMatrix& tm,
                               const TrafficMatrix& traffic) {
    constexpr auto H = TrafficMatrix::kHours;
    const std::size_t n = net.size();
    if (tm.n != n || traffic.n != n) throw DimensionError("matrices built over a different road network");
    auto standardizer = [](const std::vector<double>& v) {
      double m = 0.0, s = 0.0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      for (double x : v) s += (x - m) * (x - m);
      s = std::sqrt(s / static_cast<double>(v.size()));
      return std::pair<double, double>{m, s > 1e-12 ? s : 1.0};
    };
    const auto [xm, xs] = standardizer(traffic.speed);
    const auto [lm, ls] = standardizer(net.length_m);
    const auto [sm, ss] = standardizer(net.speed_kmh);

    std::vector<double> x(n * H * kWidth, 0.0);
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t h = 0; h < H; ++h) {
        double* row = &x[(v * H + h) * kWidth];
        row[0] = (traffic.at(v, h) - xm) / xs;
        row[1] = (net.length_m[v] - lm) / ls;
        row[2] = (net.speed_kmh[v] - sm) / ss;
        row[3 + net.road_class[v]] = 1.0;
      }
    }
    return from_table(net, tm, x, kWidth);
  }

  /// Applies the P' weighting to a raw (n * 24) x width feature table.
  static TrafficFeatures from_table(const data::RoadNetwork& net, const TransitionMatrix& tm,
                                    const std::vector<double>& x, std::size_t width) {
    constexpr auto H = TrafficMatrix::kHours;
    const std::size_t n = net.size();
    if (x.size() != n * H * width) throw DimensionError("traffic feature table has the wrong size");
    TrafficFeatures f;
    f.segments = n;
    f.width = width;
    f.self = Tensor<Real>({n * H, width});
    f.neighbors = Tensor<Real>({n * H, width});
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t h = 0; h < H; ++h) {
        const auto r = v * H + h;
        for (std::size_t c = 0; c < width; ++c) {
          f.self(r, c) = static_cast<Real>(tm.p_norm(v, v) * x[r * width + c]);
          double acc = 0.0;
          for (auto j : net.successors[v]) {
            if (j == v) continue;  // a self-loop edge is already the diagonal term
            acc += tm.p_norm(v, j) * x[(j * H + h) * width + c];
          }
          f.neighbors(r, c) = static_cast<Real>(acc);
        }
      }
    }
    return f;
  }

  std::size_t row(const data::Token& tok) const {
    if (tok.id >= segments) throw IndexError("segment id " + std::to_string(tok.id) + " out of range");
    return tok.id * TrafficMatrix::kHours + hour_of_day(tok.t);
  }
};

/// Branch widths and head count of the spatio-temporal module.
struct StShape {
  std::size_t d_st = 128;  // output width; each fused half is d_st / 2
  std::size_t q = 32;      // time-embedding slots
  std::size_t lma_heads = 4;
};

inline void validate(const StShape& s) {
  if (s.d_st < 2 || s.d_st % 2) throw ConfigError("model.d_st must be even and positive", "model.d_st");
  if (s.q < 2) throw ConfigError("model.q must be at least 2", "model.q");
  if (s.lma_heads < 1) throw ConfigError("model.h_lma must be at least 1", "model.h_lma");
}

template <class Real>
void init_lma(ParameterSet<Real>& ps, const std::string& prefix, std::size_t d, std::size_t heads, Rng& rng) {
  for (std::size_t h = 0; h < heads; ++h) {
    const auto k = std::to_string(h);
    add_weight(ps, prefix + ".wq" + k, d, d, rng);
    add_weight(ps, prefix + ".wk" + k, d, d, rng);
    add_weight(ps, prefix + ".wv" + k, d, d, rng);
  }
  add_weight(ps, prefix + ".wo", d, d, rng);
}

/// Learnable frequencies start at daily and weekly harmonics (as cos/sin
/// pairs) followed by random extras. Slot 0 is the linear term.
template <class Real>
void init_time_embedding(ParameterSet<Real>& ps, const std::string& prefix, std::size_t q, Rng& rng) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  Tensor<Real> omega({q}), phi({q});
  omega[0] = Real{1};
  std::vector<double> harmonics;
  for (int m = 1; m <= 3; ++m) harmonics.push_back(7.0 * m);  // cycles per week of daily harmonics
  for (int m = 1; m <= 2; ++m) harmonics.push_back(m);
  std::size_t k = 1;
  for (double cycles : harmonics) {
    for (double shift : {0.0, -0.5 * std::numbers::pi}) {
      if (k >= q) break;
      omega[k] = static_cast<Real>(two_pi * cycles);
      phi[k] = static_cast<Real>(shift);
      ++k;
    }
  }
  for (; k < q; ++k) {
    omega[k] = static_cast<Real>(two_pi * rng.uniform(0.5, 28.0));
    phi[k] = static_cast<Real>(rng.uniform(0.0, two_pi));
  }
  ps.add(prefix + ".omega", std::move(omega));
  ps.add(prefix + ".phi", std::move(phi));
}

template <class Real>
void init_st(ParameterSet<Real>& ps, const StShape& s, Rng& rng, const std::string& prefix = "st") {
  validate(s);
  const std::size_t half = s.d_st / 2;
  add_weight(ps, prefix + ".gcn.w_self", TrafficFeatures<Real>::kWidth, half, rng);
  add_weight(ps, prefix + ".gcn.w_nbr", TrafficFeatures<Real>::kWidth, half, rng);
  init_time_embedding(ps, prefix + ".time", s.q, rng);
  add_weight(ps, prefix + ".time.proj", s.q, half, rng);
  init_lma(ps, prefix + ".lma1", half, s.lma_heads, rng);
  init_lma(ps, prefix + ".lma2", half, s.lma_heads, rng);
}

/// T^s for packed token rows: h_i = (P'_ii x_i) W_self + (sum_j P'_ij x_j) W_nbr.
template <class Real>
Var<Real> traffic_gcn(Binder<Real>& b, const std::string& prefix, const TrafficFeatures<Real>& f,
                      const std::vector<data::Token>& tokens) {
  Tensor<Real> S({tokens.size(), f.width}), N({tokens.size(), f.width});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto r = f.row(tokens[i]);
    std::copy_n(f.self.row(r).data(), f.width, S.row(i).data());
    std::copy_n(f.neighbors.row(r).data(), f.width, N.row(i).data());
  }
  auto& tape = b.tape();
  return add(matmul(tape.constant(std::move(S)), b(prefix + ".w_self")),
             matmul(tape.constant(std::move(N)), b(prefix + ".w_nbr")));
}

/// T^t rows for the given timestamps (q columns, before projection).
template <class Real>
Var<Real> time_embed(Binder<Real>& b, const std::string& prefix, const std::vector<data::Timestamp>& times) {
  std::vector<double> tau(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) tau[i] = week_hours(times[i]);
  return time_embedding(tau, b(prefix + ".omega"), b(prefix + ".phi"), 168.0);
}

/// Row indices and per-sequence segments of every head's chunk. Each sequence
/// of length L is cut into `heads` contiguous chunks of ceil(L / heads) rows;
/// trailing chunks may be short or empty, which is the same as padding L to a
/// multiple of `heads` with masked positions.
struct LmaPlan {
  std::vector<std::vector<std::size_t>> rows;  // per head
  std::vector<Segments> segments;               // per head, within that head's gathered rows
  std::vector<std::size_t> inverse;             // original row -> row of the concatenated head outputs
};

inline LmaPlan plan_lma(const Segments& segs, std::size_t heads) {
  if (heads == 0) throw ConfigError("local attention needs at least one head", "model.h_lma");
  LmaPlan plan;
  plan.rows.resize(heads);
  plan.segments.resize(heads);
  for (const auto& s : segs) {
    const std::size_t chunk = (s.length + heads - 1) / heads;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t lo = std::min(s.length, h * chunk), hi = std::min(s.length, (h + 1) * chunk);
      if (hi == lo) continue;
      plan.segments[h].push_back({plan.rows[h].size(), hi - lo});
      for (std::size_t r = lo; r < hi; ++r) plan.rows[h].push_back(s.start + r);
    }
  }
  plan.inverse.assign(total_rows(segs), 0);
  std::size_t offset = 0;
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t k = 0; k < plan.rows[h].size(); ++k) plan.inverse[plan.rows[h][k]] = offset + k;
    offset += plan.rows[h].size();
  }
  if (offset != plan.inverse.size()) throw ContractError("local attention chunks do not cover every row");
  return plan;
}

/// Local multi-head attention: head h attends within chunk h of each sequence
/// with its own d x d projections; head outputs are placed back at their
/// sequence positions and projected by W^O.
template <class Real>
Var<Real> local_attention(Binder<Real>& b, const std::string& prefix, std::size_t heads, Var<Real> tq,
                          Var<Real> tk, Var<Real> tv, const Segments& segs) {
  const std::size_t n = tq.value().rows();
  if (tk.value().rows() != n || tv.value().rows() != n) {
    throw DimensionError("local attention: q/k/v row counts " + std::to_string(n) + "/" +
                         std::to_string(tk.value().rows()) + "/" + std::to_string(tv.value().rows()));
  }
  if (total_rows(segs) != n) throw DimensionError("local attention: segments do not cover the rows");
  const std::size_t d = tq.value().cols();
  const auto plan = plan_lma(segs, heads);
  std::vector<Var<Real>> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    if (plan.rows[h].empty()) continue;
    const auto k = std::to_string(h);
    auto q = matmul(gather_rows(tq, plan.rows[h]), b(prefix + ".wq" + k));
    auto kk = matmul(gather_rows(tk, plan.rows[h]), b(prefix + ".wk" + k));
    auto v = matmul(gather_rows(tv, plan.rows[h]), b(prefix + ".wv" + k));
    outs.push_back(segment_attention(q, kk, v, plan.segments[h], 1, 1.0 / std::sqrt(static_cast<double>(d))));
  }
  auto merged = gather_rows(concat_rows(outs), plan.inverse);
  return matmul(merged, b(prefix + ".wo"));
}

/// T^st = LMA1(T^s, T^t, T^t) || LMA2(T^t, T^s, T^s).
template <class Real>
Var<Real> fuse_st(Binder<Real>& b, const std::string& prefix, std::size_t heads, Var<Real> ts, Var<Real> tt,
                  const Segments& segs) {
  if (ts.value().shape() != tt.value().shape()) {
    throw DimensionError("fuse_st: T^s " + shape_string(ts.value().shape()) + " vs T^t " +
                         shape_string(tt.value().shape()));
  }
  return concat_cols(local_attention(b, prefix + ".lma1", heads, ts, tt, tt, segs),
                     local_attention(b, prefix + ".lma2", heads, tt, ts, ts, segs));
}

/// The full branch for packed road tokens. `times` overrides token timestamps
/// for the time embedding (travel-time inputs expose only the start time).
template <class Real>
Var<Real> st_branch(Binder<Real>& b, const StShape& shape, const TrafficFeatures<Real>& f,
                    const std::vector<data::Token>& tokens, const std::vector<data::Timestamp>& times,
                    const Segments& segs, const std::string& prefix = "st") {
  auto ts = traffic_gcn(b, prefix + ".gcn", f, tokens);
  auto tt = matmul(time_embed(b, prefix + ".time", times), b(prefix + ".time.proj"));
  return fuse_st(b, prefix, shape.lma_heads, ts, tt, segs);
}

}  // namespace tigr::st
