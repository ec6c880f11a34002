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
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "tigr/data/types.hpp"

namespace tigr::data {

inline constexpr double kEarthRadiusM = 6371008.8;

/// Regular partition of a lon/lat bounding box into square cells.
///
/// Distances use an equirectangular projection with meters-per-degree fixed
/// at the box-center latitude. Cell (m, n) is 1-based, m along latitude and n
/// along longitude; its flat id is (m - 1) * N + (n - 1).
struct GridSpec {
  double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;
  double cell_size_m = 100.0;
  std::size_t M = 1, N = 1;

  static GridSpec make(double min_x, double min_y, double max_x, double max_y, double cell_size_m) {
    if (!(max_x > min_x) || !(max_y > min_y)) {
      throw ConfigError("grid bounding box is empty", "grid");
    }
    if (!(cell_size_m > 0.0)) throw ConfigError("cell size must be positive", "grid.cell_size_m");
    GridSpec g{min_x, min_y, max_x, max_y, cell_size_m, 1, 1};
    // the 1e-9 slack keeps exact multiples of the cell size from gaining a row
    g.M = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(g.height_m() / cell_size_m - 1e-9)));
    g.N = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(g.width_m() / cell_size_m - 1e-9)));
    return g;
  }

  double meters_per_deg_lat() const { return kEarthRadiusM * std::numbers::pi / 180.0; }
  double meters_per_deg_lon() const {
    const double lat0 = 0.5 * (min_y + max_y) * std::numbers::pi / 180.0;
    return meters_per_deg_lat() * std::cos(lat0);
  }
  double width_m() const { return (max_x - min_x) * meters_per_deg_lon(); }
  double height_m() const { return (max_y - min_y) * meters_per_deg_lat(); }
  std::size_t cell_count() const { return M * N; }

  bool contains(double x, double y) const {
    return x >= min_x && x <= max_x && y >= min_y && y <= max_y;
  }

  /// Metric offsets from the box's minimum corner.
  std::pair<double, double> offset_m(double x, double y) const {
    return {(x - min_x) * meters_per_deg_lon(), (y - min_y) * meters_per_deg_lat()};
  }

  LonLat from_offset_m(double east, double north) const {
    return {min_x + east / meters_per_deg_lon(), min_y + north / meters_per_deg_lat()};
  }

  /// 1-based (m, n) of an in-box point; points on the max edges belong to the last cell.
  std::pair<std::size_t, std::size_t> cell_of(double x, double y) const {
    if (!contains(x, y)) throw IndexError("point outside the grid bounding box");
    const auto [east, north] = offset_m(x, y);
    const auto m = std::min(M, static_cast<std::size_t>(std::floor(north / cell_size_m)) + 1);
    const auto n = std::min(N, static_cast<std::size_t>(std::floor(east / cell_size_m)) + 1);
    return {m, n};
  }

  std::size_t flat_id(std::size_t m, std::size_t n) const {
    if (m < 1 || m > M || n < 1 || n > N) throw IndexError("cell index out of range");
    return (m - 1) * N + (n - 1);
  }

  std::pair<std::size_t, std::size_t> cell_index(std::size_t id) const {
    if (id >= cell_count()) throw IndexError("cell id " + std::to_string(id) + " out of range");
    return {id / N + 1, id % N + 1};
  }

  /// Center of a cell, for export.
  LonLat cell_center(std::size_t id) const {
    const auto [m, n] = cell_index(id);
    return from_offset_m((static_cast<double>(n) - 0.5) * cell_size_m,
                         (static_cast<double>(m) - 0.5) * cell_size_m);
  }
};

/// Maps in-box points to cell ids, drops out-of-box points, and collapses
/// consecutive repeats (keeping the first timestamp). nullopt when no point
/// falls inside the box.
inline std::optional<GridTrajectory> map_to_grid(const RawTrajectory& traj, const GridSpec& spec) {
  GridTrajectory out{traj.id, {}};
  for (const auto& p : traj.points) {
    if (!spec.contains(p.x, p.y)) continue;
    const auto [m, n] = spec.cell_of(p.x, p.y);
    const auto id = spec.flat_id(m, n);
    if (!out.tokens.empty() && out.tokens.back().id == id) continue;
    out.tokens.push_back({id, p.t});
  }
  if (out.tokens.empty()) return std::nullopt;
  return out;
}

enum class RejectReason { kTooShort, kTooLong, kOutOfBox };

inline const char* reject_reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::kTooShort: return "too_short";
    case RejectReason::kTooLong: return "too_long";
    case RejectReason::kOutOfBox: return "out_of_box";
  }
  return "unknown";
}

struct FilterResult {
  std::vector<RawTrajectory> retained;
  std::vector<std::pair<std::string, RejectReason>> rejected;

  std::map<std::string, std::size_t> counts() const {
    std::map<std::string, std::size_t> c{{"too_short", 0}, {"too_long", 0}, {"out_of_box", 0}};
    for (const auto& r : rejected) ++c[reject_reason_name(r.second)];
    return c;
  }
};

/// Keeps trajectories whose point count lies in [min_len, max_len] and whose
/// points all lie inside the grid box. Length is checked before the box.
inline FilterResult filter_trajectories(const std::vector<RawTrajectory>& trajs, const GridSpec& spec,
                                        std::size_t min_len = 20, std::size_t max_len = 200) {
  FilterResult res;
  for (const auto& tr : trajs) {
    const auto n = tr.points.size();
    if (n < min_len) {
      res.rejected.emplace_back(tr.id, RejectReason::kTooShort);
    } else if (n > max_len) {
      res.rejected.emplace_back(tr.id, RejectReason::kTooLong);
    } else if (!std::all_of(tr.points.begin(), tr.points.end(),
                            [&](const RawPoint& p) { return spec.contains(p.x, p.y); })) {
      res.rejected.emplace_back(tr.id, RejectReason::kOutOfBox);
    } else {
      res.retained.push_back(tr);
    }
  }
  return res;
}

}  // namespace tigr::data
