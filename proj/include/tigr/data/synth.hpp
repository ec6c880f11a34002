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
#include <cstdio>
#include <string>
#include <vector>

#include "tigr/data/grid.hpp"
#include "tigr/data/types.hpp"
#include "tigr/rng.hpp"

namespace tigr::data {

struct SynthConfig {
  std::size_t lattice = 5;  // g x g intersections
  double spacing_m = 250.0;
  std::size_t trajectories = 5000;
  std::size_t min_segments = 10;
  std::size_t max_segments = 25;
  std::size_t points_per_segment = 2;
  std::vector<double> rush_hours = {8.0, 17.0};
  double rush_factor = 0.5;   // speed multiplier at the rush-hour peak
  double rush_width_h = 1.0;  // standard deviation of each dip
  bool weekday_rush_only = true;
  double straight_weight = 3.0;  // relative to 1 for each turn
  double origin_lon = -8.62;
  double origin_lat = 41.14;
  double margin_m = 200.0;
  double cell_size_m = 100.0;
  double lane_offset_m = 4.0;
  Timestamp start_epoch = 1704067200;  // Monday 2024-01-01 00:00 UTC
  double span_days = 7.0;
};

struct SynthDataset {
  RoadNetwork net;
  GridSpec grid;
  std::vector<RoadTrajectory> road;
  std::vector<RawTrajectory> raw;
};

/// Monday = 0 .. Sunday = 6 (UTC).
inline int day_of_week(Timestamp t) {
  const auto days = static_cast<std::int64_t>(std::floor(static_cast<double>(t) / 86400.0));
  return static_cast<int>(((days + 3) % 7 + 7) % 7);  // 1970-01-01 was a Thursday
}

/// Hour of day in [0, 24), fractional.
inline double hour_of_day(double t) {
  double s = std::fmod(t, 86400.0);
  if (s < 0) s += 86400.0;
  return s / 3600.0;
}

/// Speed multiplier at time t: Gaussian dips to `rush_factor` at each rush hour.
inline double speed_factor(const SynthConfig& cfg, double t) {
  if (cfg.weekday_rush_only && day_of_week(static_cast<Timestamp>(std::floor(t))) >= 5) return 1.0;
  const double h = hour_of_day(t);
  double f = 1.0;
  for (double peak : cfg.rush_hours) {
    const double d = h - peak;
    f -= (1.0 - cfg.rush_factor) * std::exp(-0.5 * d * d / (cfg.rush_width_h * cfg.rush_width_h));
  }
  return std::max(f, 0.05);
}

/// Entry time of every segment of `route` departing at t0, plus the exit
/// time of the last one (size route.size() + 1).
inline std::vector<double> traverse_times(const SynthConfig& cfg, const RoadNetwork& net,
                                          const std::vector<std::size_t>& route, double t0) {
  std::vector<double> times{t0};
  for (auto s : route) {
    const double mps = net.speed_kmh[s] / 3.6 * speed_factor(cfg, times.back());
    times.push_back(times.back() + net.length_m[s] / mps);
  }
  return times;
}

inline void validate(const SynthConfig& cfg) {
  if (cfg.lattice < 2) throw ConfigError("data.lattice must be at least 2", "data.lattice");
  if (cfg.trajectories == 0) throw ConfigError("data.trajectories must be positive", "data.trajectories");
  if (cfg.min_segments < 1 || cfg.max_segments < cfg.min_segments) {
    throw ConfigError("need 1 <= data.min_segments <= data.max_segments", "data.min_segments");
  }
  if (cfg.points_per_segment < 1) {
    throw ConfigError("data.points_per_segment must be positive", "data.points_per_segment");
  }
  if (!(cfg.spacing_m > 0.0)) throw ConfigError("data.spacing_m must be positive", "data.spacing_m");
  if (!(cfg.rush_factor > 0.0 && cfg.rush_factor <= 1.0)) {
    throw ConfigError("data.rush_factor must be in (0, 1]", "data.rush_factor");
  }
  if (!(cfg.span_days > 0.0)) throw ConfigError("data.span_days must be positive", "data.span_days");
}

namespace detail {

struct LatticeSegment {
  std::size_t from, to;  // intersection ids r * g + c
  double dx, dy;         // unit direction
};

}  // namespace detail

/// Manhattan lattice with one directed segment per street direction. Streets
/// on the boundary are primary (60 km/h), even interior rows/columns secondary
/// (50), odd ones residential (30). U-turns are not edges.
inline RoadNetwork make_lattice_network(const SynthConfig& cfg, const GridSpec& grid,
                                        std::vector<detail::LatticeSegment>* segs_out = nullptr) {
  const std::size_t g = cfg.lattice;
  auto pos = [&](std::size_t node) {
    return std::pair<double, double>{cfg.margin_m + static_cast<double>(node % g) * cfg.spacing_m,
                                     cfg.margin_m + static_cast<double>(node / g) * cfg.spacing_m};
  };
  auto street_class = [&](std::size_t line) -> std::pair<std::size_t, double> {
    if (line == 0 || line == g - 1) return {road_class_index("primary"), 60.0};
    if (line % 2 == 0) return {road_class_index("secondary"), 50.0};
    return {road_class_index("residential"), 30.0};
  };

  RoadNetwork net;
  std::vector<detail::LatticeSegment> segs;
  auto add = [&](std::size_t a, std::size_t b, std::size_t line) {
    const auto [ax, ay] = pos(a);
    const auto [bx, by] = pos(b);
    const double len = std::hypot(bx - ax, by - ay);
    const double ux = (bx - ax) / len, uy = (by - ay) / len;
    const double ox = uy * cfg.lane_offset_m, oy = -ux * cfg.lane_offset_m;  // right-hand side
    const auto [cls, speed] = street_class(line);
    segs.push_back({a, b, ux, uy});
    net.length_m.push_back(len);
    net.speed_kmh.push_back(speed);
    net.road_class.push_back(cls);
    net.geometry.push_back({grid.from_offset_m(ax + ox, ay + oy), grid.from_offset_m(bx + ox, by + oy)});
  };
  for (std::size_t r = 0; r < g; ++r) {
    for (std::size_t c = 0; c + 1 < g; ++c) {
      add(r * g + c, r * g + c + 1, r);
      add(r * g + c + 1, r * g + c, r);
    }
  }
  for (std::size_t c = 0; c < g; ++c) {
    for (std::size_t r = 0; r + 1 < g; ++r) {
      add(r * g + c, (r + 1) * g + c, c);
      add((r + 1) * g + c, r * g + c, c);
    }
  }
  std::vector<std::vector<std::size_t>> outgoing(g * g);
  for (std::size_t i = 0; i < segs.size(); ++i) outgoing[segs[i].from].push_back(i);
  net.successors.resize(segs.size());
  for (std::size_t i = 0; i < segs.size(); ++i) {
    for (auto j : outgoing[segs[i].to]) {
      if (segs[j].to != segs[i].from) net.successors[i].push_back(j);
    }
    std::sort(net.successors[i].begin(), net.successors[i].end());
  }
  if (segs_out) *segs_out = std::move(segs);
  return net;
}

inline GridSpec lattice_grid(const SynthConfig& cfg) {
  const double extent = 2.0 * cfg.margin_m + static_cast<double>(cfg.lattice - 1) * cfg.spacing_m;
  GridSpec probe = GridSpec::make(cfg.origin_lon, cfg.origin_lat, cfg.origin_lon + 1.0,
                                  cfg.origin_lat + 1.0, cfg.cell_size_m);
  const double max_y = cfg.origin_lat + extent / probe.meters_per_deg_lat();
  probe.max_y = max_y;  // longitude scale depends on the center latitude
  const double max_x = cfg.origin_lon + extent / probe.meters_per_deg_lon();
  return GridSpec::make(cfg.origin_lon, cfg.origin_lat, max_x, max_y, cfg.cell_size_m);
}

/// Deterministic synthetic city: lattice network plus turn-biased random
/// walks whose traversal speed follows the rush-hour profile. Raw points are
/// sampled along each traversed segment's polyline.
inline SynthDataset synth_generate(const SynthConfig& cfg, const Rng& rng) {
  validate(cfg);
  SynthDataset ds;
  ds.grid = lattice_grid(cfg);
  std::vector<detail::LatticeSegment> segs;
  ds.net = make_lattice_network(cfg, ds.grid, &segs);
  const std::size_t n_seg = ds.net.size();
  const auto span_s = static_cast<std::uint64_t>(cfg.span_days * 86400.0);

  ds.road.reserve(cfg.trajectories);
  ds.raw.reserve(cfg.trajectories);
  for (std::size_t i = 0; i < cfg.trajectories; ++i) {
    Rng r = rng.derive(i);
    char id[24];
    std::snprintf(id, sizeof id, "t%06zu", i);
    const std::size_t len = cfg.min_segments + r.below(cfg.max_segments - cfg.min_segments + 1);

    std::vector<std::size_t> route{static_cast<std::size_t>(r.below(n_seg))};
    while (route.size() < len) {
      const auto cur = route.back();
      const auto& next = ds.net.successors[cur];
      std::vector<double> w;
      double total = 0.0;
      for (auto j : next) {
        const bool straight = segs[j].dx * segs[cur].dx + segs[j].dy * segs[cur].dy > 0.5;
        w.push_back(straight ? cfg.straight_weight : 1.0);
        total += w.back();
      }
      double u = r.uniform() * total;
      std::size_t pick = 0;
      while (pick + 1 < next.size() && u >= w[pick]) u -= w[pick++];
      route.push_back(next[pick]);
    }

    RoadTrajectory road{id, {}};
    RawTrajectory raw{id, {}};
    const auto times = traverse_times(
        cfg, ds.net, route, static_cast<double>(cfg.start_epoch) + static_cast<double>(r.below(span_s)));
    for (std::size_t k = 0; k < route.size(); ++k) {
      const auto s = route[k];
      const double t = times[k], dur = times[k + 1] - times[k];
      road.tokens.push_back({s, static_cast<Timestamp>(std::llround(t))});
      const auto& geom = ds.net.geometry[s];
      for (std::size_t p = 0; p < cfg.points_per_segment; ++p) {
        const double f = (static_cast<double>(p) + 0.5) / static_cast<double>(cfg.points_per_segment);
        auto ts = static_cast<Timestamp>(std::llround(t + f * dur));
        if (!raw.points.empty()) ts = std::max(ts, raw.points.back().t + 1);
        raw.points.push_back({geom[0].lon + f * (geom[1].lon - geom[0].lon),
                              geom[0].lat + f * (geom[1].lat - geom[0].lat), ts});
      }
    }
    ds.road.push_back(std::move(road));
    ds.raw.push_back(std::move(raw));
  }
  return ds;
}

}  // namespace tigr::data
