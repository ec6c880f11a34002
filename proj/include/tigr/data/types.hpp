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
#include <string>
#include <string_view>
#include <vector>

#include "tigr/tensor.hpp"

namespace tigr::data {

using Timestamp = std::int64_t;  // Unix seconds

struct RawPoint {
  double x = 0.0;  // longitude, degrees
  double y = 0.0;  // latitude, degrees
  Timestamp t = 0;
};

struct RawTrajectory {
  std::string id;
  std::vector<RawPoint> points;
};

/// One element of a grid or road sequence: a vocabulary id and its time.
struct Token {
  std::size_t id = 0;
  Timestamp t = 0;
};

struct GridTrajectory {
  std::string id;
  std::vector<Token> tokens;
};

struct RoadTrajectory {
  std::string id;
  std::vector<Token> tokens;
};

struct LonLat {
  double lon = 0.0;
  double lat = 0.0;
};

inline constexpr std::array<std::string_view, 9> kRoadClasses = {
    "motorway", "trunk",       "primary", "secondary", "tertiary",
    "unclassified", "residential", "service", "other"};

/// Index into kRoadClasses; unknown strings map to "other".
inline std::size_t road_class_index(std::string_view cls) {
  auto it = std::find(kRoadClasses.begin(), kRoadClasses.end(), cls);
  return it == kRoadClasses.end() ? kRoadClasses.size() - 1
                                  : static_cast<std::size_t>(it - kRoadClasses.begin());
}

/// Directed road-segment graph. Segment ids are dense, 0..size()-1.
///
/// Feature columns: 0 length (m), 1 speed limit (km/h), 2.. one-hot class in
/// kRoadClasses order.
struct RoadNetwork {
  std::vector<std::vector<std::size_t>> successors;  // sorted
  std::vector<double> length_m;
  std::vector<double> speed_kmh;
  std::vector<std::size_t> road_class;
  std::vector<std::vector<LonLat>> geometry;

  static constexpr std::size_t kFeatureCount = 2 + kRoadClasses.size();

  std::size_t size() const noexcept { return length_m.size(); }

  bool adjacent(std::size_t from, std::size_t to) const {
    const auto& s = successors[from];
    return std::binary_search(s.begin(), s.end(), to);
  }

  Tensor<double> features() const {
    Tensor<double> f({size(), kFeatureCount});
    for (std::size_t i = 0; i < size(); ++i) {
      f(i, 0) = length_m[i];
      f(i, 1) = speed_kmh[i];
      f(i, 2 + road_class[i]) = 1.0;
    }
    return f;
  }

  std::size_t edge_count() const {
    std::size_t n = 0;
    for (const auto& s : successors) n += s.size();
    return n;
  }
};

/// Throws IndexError / DimensionError when ids or adjacency are inconsistent.
inline void validate(const RoadNetwork& net) {
  const std::size_t n = net.size();
  if (net.speed_kmh.size() != n || net.road_class.size() != n || net.successors.size() != n ||
      net.geometry.size() != n) {
    throw DimensionError("road network columns have different lengths");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (auto j : net.successors[i]) {
      if (j >= n) {
        throw IndexError("edge " + std::to_string(i) + "->" + std::to_string(j) +
                         " references an unknown segment");
      }
    }
    if (!std::is_sorted(net.successors[i].begin(), net.successors[i].end())) {
      throw ContractError("successor list of segment " + std::to_string(i) + " is not sorted");
    }
  }
}

/// Index of the first consecutive pair that is not an edge of `net`, or -1.
inline std::ptrdiff_t first_broken_link(const RoadTrajectory& tr, const RoadNetwork& net) {
  for (std::size_t i = 0; i + 1 < tr.tokens.size(); ++i) {
    if (!net.adjacent(tr.tokens[i].id, tr.tokens[i + 1].id)) return static_cast<std::ptrdiff_t>(i);
  }
  return -1;
}

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

}  // namespace tigr::data
