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

#include <array>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tigr/data/grid.hpp"
#include "tigr/data/split.hpp"
#include "tigr/encoder/model.hpp"
#include "tigr/spatiotemporal/matrices.hpp"

namespace tigr {

struct PrepareOptions {
  std::size_t min_len = 20;
  std::size_t max_len = 200;
  std::array<double, 3> split = {0.4, 0.05, 0.55};
};

/// Filtered, gridded and split trajectories plus the matrices built from the
/// training split.
struct Prepared {
  data::RoadNetwork net;
  data::GridSpec grid;
  std::size_t input_count = 0;
  std::map<std::string, std::size_t> rejected;
  std::vector<model::Sample> samples;
  data::DatasetSplit split;
  std::vector<model::Sample> train, validation, test;
  st::TransitionMatrix transition;
  st::TrafficMatrix traffic;

  model::ModelConfig base_config() const {
    model::ModelConfig c;
    c.grid_vocab = grid.cell_count();
    c.road_vocab = net.size();
    return c;
  }

  template <class Real = float>
  std::shared_ptr<const st::TrafficFeatures<Real>> features() const {
    return std::make_shared<const st::TrafficFeatures<Real>>(st::TrafficFeatures<Real>::build(net, transition, traffic));
  }
};

inline std::vector<data::RoadTrajectory> road_of(const std::vector<model::Sample>& samples) {
  std::vector<data::RoadTrajectory> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.id, s.road});
  return out;
}

/// Runs filtering, grid mapping and the split. Matched trajectories that are
/// missing, empty or not connected in the network are dropped and counted.
/// `split` is given explicitly when it was produced earlier; otherwise it is
/// drawn from `rng`.
inline Prepared prepare(data::RoadNetwork net, const data::GridSpec& grid,
                        const std::vector<data::RawTrajectory>& raw,
                        const std::vector<data::RoadTrajectory>& road, const PrepareOptions& opt, const Rng& rng,
                        const data::DatasetSplit* split = nullptr) {
  Prepared p;
  p.net = std::move(net);
  p.grid = grid;
  p.input_count = raw.size();
  auto filtered = data::filter_trajectories(raw, grid, opt.min_len, opt.max_len);
  p.rejected = filtered.counts();
  p.rejected["unmatched"] = 0;
  p.rejected["not_adjacent"] = 0;

  std::unordered_map<std::string, const data::RoadTrajectory*> road_by_id;
  for (const auto& r : road) road_by_id.emplace(r.id, &r);
  for (const auto& tr : filtered.retained) {
    auto it = road_by_id.find(tr.id);
    if (it == road_by_id.end() || it->second->tokens.empty()) {
      ++p.rejected["unmatched"];
      continue;
    }
    if (data::first_broken_link(*it->second, p.net) >= 0) {
      ++p.rejected["not_adjacent"];
      continue;
    }
    auto g = data::map_to_grid(tr, grid);
    if (!g) {
      ++p.rejected["out_of_box"];
      continue;
    }
    p.samples.push_back({tr.id, std::move(g->tokens), it->second->tokens});
  }
  if (p.samples.empty()) throw ContractError("no trajectories survived preprocessing");

  std::vector<std::string> ids;
  for (const auto& s : p.samples) ids.push_back(s.id);
  p.split = split ? *split : data::split_dataset(ids, opt.split, rng);

  std::unordered_map<std::string, const model::Sample*> by_id;
  for (const auto& s : p.samples) by_id.emplace(s.id, &s);
  auto pick = [&](const std::vector<std::string>& names, std::vector<model::Sample>& out) {
    for (const auto& n : names) {
      auto it = by_id.find(n);
      if (it == by_id.end()) throw ContractError("split names unknown trajectory '" + n + "'");
      out.push_back(*it->second);
    }
  };
  pick(p.split.train, p.train);
  pick(p.split.validation, p.validation);
  pick(p.split.test, p.test);

  const auto train_road = road_of(p.train);
  p.transition = st::build_transition_matrix(train_road, p.net);
  p.traffic = st::build_traffic_matrix(train_road, p.net);
  return p;
}

}  // namespace tigr
