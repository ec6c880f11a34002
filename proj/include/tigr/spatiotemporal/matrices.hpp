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
#include <string>
#include <vector>

#include "tigr/data/csv.hpp"
#include "tigr/data/types.hpp"

namespace tigr::st {

/// Hour of day in [0, 24) of a Unix timestamp (UTC).
inline std::size_t hour_of_day(data::Timestamp t) {
  return static_cast<std::size_t>(((t % 86400) + 86400) % 86400 / 3600);
}

/// Smoothed transition probabilities and their self-loop normalization.
///
///   P[i][j]  = (n(i->j) + 1) / (visits(i) + |N(i)|)   for j in N(i), else 0
///   P'       = D^-1 (P + I),  D = diag(row sums of P + I)
struct TransitionMatrix {
  std::size_t n = 0;
  std::vector<double> P;
  std::vector<double> P_norm;

  double p(std::size_t i, std::size_t j) const { return P[i * n + j]; }
  double p_norm(std::size_t i, std::size_t j) const { return P_norm[i * n + j]; }

  void normalize() {
    P_norm.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double d = 1.0;
      for (std::size_t j = 0; j < n; ++j) d += P[i * n + j];
      for (std::size_t j = 0; j < n; ++j) P_norm[i * n + j] = (P[i * n + j] + (i == j ? 1.0 : 0.0)) / d;
    }
  }

  /// Largest |row sum - 1| of P_norm.
  double max_row_sum_error() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += P_norm[i * n + j];
      worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
  }
};

inline TransitionMatrix build_transition_matrix(const std::vector<data::RoadTrajectory>& trajs,
                                                const data::RoadNetwork& net) {
  const std::size_t n = net.size();
  std::vector<double> visits(n, 0.0);
  std::vector<double> counts(n * n, 0.0);
  for (const auto& tr : trajs) {
    for (std::size_t k = 0; k < tr.tokens.size(); ++k) {
      const auto i = tr.tokens[k].id;
      if (i >= n) throw IndexError("segment " + std::to_string(i) + " outside the road network");
      visits[i] += 1.0;
      if (k + 1 < tr.tokens.size()) {
        const auto j = tr.tokens[k + 1].id;
        if (!net.adjacent(i, j)) {
          throw ContractError(tr.id + ": transition " + std::to_string(i) + "->" + std::to_string(j) +
                              " is not an edge");
        }
        counts[i * n + j] += 1.0;
      }
    }
  }
  TransitionMatrix tm;
  tm.n = n;
  tm.P.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& nb = net.successors[i];
    const double denom = visits[i] + static_cast<double>(nb.size());
    for (auto j : nb) tm.P[i * n + j] = (counts[i * n + j] + 1.0) / denom;
  }
  tm.normalize();
  return tm;
}

inline void write_transition_csv(const std::string& path, const TransitionMatrix& tm) {
  auto out = data::csv::open_out(path);
  out << "i,j,p\n";
  for (std::size_t i = 0; i < tm.n; ++i) {
    for (std::size_t j = 0; j < tm.n; ++j) {
      if (tm.p(i, j) != 0.0) out << i << ',' << j << ',' << data::csv::fmt(tm.p(i, j)) << '\n';
    }
  }
}

inline TransitionMatrix load_transition_csv(const std::string& path, std::size_t n) {
  TransitionMatrix tm;
  tm.n = n;
  tm.P.assign(n * n, 0.0);
  data::csv::read(path, {"i", "j", "p"}, [&](const std::vector<std::string>& f, std::size_t ln) {
    const auto i = data::csv::parse_number<std::size_t>(f[0], ln, "i");
    const auto j = data::csv::parse_number<std::size_t>(f[1], ln, "j");
    if (i >= n || j >= n) throw ParseError("transition entry outside the network", ln);
    tm.P[i * n + j] = data::csv::parse_number<double>(f[2], ln, "p");
  });
  tm.normalize();
  return tm;
}

/// Mean speed (km/h) per segment and hour of day, with observation counts.
struct TrafficMatrix {
  static constexpr std::size_t kHours = 24;
  std::size_t n = 0;
  std::vector<double> speed;         // n x 24
  std::vector<std::size_t> count;    // n x 24
  std::size_t skipped_zero_duration = 0;

  double at(std::size_t v, std::size_t h) const { return speed[v * kHours + h]; }
  std::size_t observations(std::size_t v, std::size_t h) const { return count[v * kHours + h]; }

  /// Mean over segments of one hour column.
  double hour_mean(std::size_t h) const {
    double s = 0.0;
    for (std::size_t v = 0; v < n; ++v) s += at(v, h);
    return n ? s / static_cast<double>(n) : 0.0;
  }
};

/// Aggregates traversal speeds length(v_i) / (t_{i+1} - t_i) under the hour of
/// t_i. Empty cells fall back to the segment's all-hour mean, then the hour's
/// network mean, then the global mean, then the speed limit.
inline TrafficMatrix build_traffic_matrix(const std::vector<data::RoadTrajectory>& trajs,
                                          const data::RoadNetwork& net) {
  constexpr auto H = TrafficMatrix::kHours;
  const std::size_t n = net.size();
  TrafficMatrix tm;
  tm.n = n;
  tm.count.assign(n * H, 0);
  std::vector<double> sum(n * H, 0.0);
  for (const auto& tr : trajs) {
    for (std::size_t k = 0; k + 1 < tr.tokens.size(); ++k) {
      const auto& a = tr.tokens[k];
      const auto& b = tr.tokens[k + 1];
      if (b.t <= a.t) {
        ++tm.skipped_zero_duration;
        continue;
      }
      const double kmh = net.length_m[a.id] / static_cast<double>(b.t - a.t) * 3.6;
      const auto cell = a.id * H + hour_of_day(a.t);
      sum[cell] += kmh;
      ++tm.count[cell];
    }
  }
  std::vector<double> seg_sum(n, 0.0), hour_sum(H, 0.0);
  std::vector<std::size_t> seg_n(n, 0), hour_n(H, 0);
  double all_sum = 0.0;
  std::size_t all_n = 0;
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t h = 0; h < H; ++h) {
      const auto c = tm.count[v * H + h];
      const double s = sum[v * H + h];
      seg_sum[v] += s;
      seg_n[v] += c;
      hour_sum[h] += s;
      hour_n[h] += c;
      all_sum += s;
      all_n += c;
    }
  }
  tm.speed.assign(n * H, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t h = 0; h < H; ++h) {
      const auto cell = v * H + h;
      double x;
      if (tm.count[cell]) {
        x = sum[cell] / static_cast<double>(tm.count[cell]);
      } else if (seg_n[v]) {
        x = seg_sum[v] / static_cast<double>(seg_n[v]);
      } else if (hour_n[h]) {
        x = hour_sum[h] / static_cast<double>(hour_n[h]);
      } else if (all_n) {
        x = all_sum / static_cast<double>(all_n);
      } else {
        x = net.speed_kmh[v];
      }
      tm.speed[cell] = x;
    }
  }
  return tm;
}

inline void write_traffic_csv(const std::string& path, const TrafficMatrix& tm) {
  auto out = data::csv::open_out(path);
  out << "segment,hour,speed,count\n";
  for (std::size_t v = 0; v < tm.n; ++v) {
    for (std::size_t h = 0; h < TrafficMatrix::kHours; ++h) {
      out << v << ',' << h << ',' << data::csv::fmt(tm.at(v, h)) << ',' << tm.observations(v, h) << '\n';
    }
  }
}

inline TrafficMatrix load_traffic_csv(const std::string& path, std::size_t n) {
  constexpr auto H = TrafficMatrix::kHours;
  TrafficMatrix tm;
  tm.n = n;
  tm.speed.assign(n * H, -1.0);
  tm.count.assign(n * H, 0);
  data::csv::read(path, {"segment", "hour", "speed", "count"},
                  [&](const std::vector<std::string>& f, std::size_t ln) {
                    const auto v = data::csv::parse_number<std::size_t>(f[0], ln, "segment");
                    const auto h = data::csv::parse_number<std::size_t>(f[1], ln, "hour");
                    if (v >= n || h >= H) throw ParseError("traffic entry outside the matrix", ln);
                    tm.speed[v * H + h] = data::csv::parse_number<double>(f[2], ln, "speed");
                    tm.count[v * H + h] = data::csv::parse_number<std::size_t>(f[3], ln, "count");
                  });
  for (double s : tm.speed) {
    if (!(s > 0.0)) throw ParseError(path + ": traffic matrix is incomplete or has non-positive speeds");
  }
  return tm;
}

}  // namespace tigr::st
