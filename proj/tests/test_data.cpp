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


#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "test_util.hpp"
#include "tigr/data/csv.hpp"
#include "tigr/data/grid.hpp"
#include "tigr/data/split.hpp"
#include "tigr/data/synth.hpp"

namespace fs = std::filesystem;
using namespace tigr;
using namespace tigr::data;
using tigr::testing::TempDir;
using tigr::testing::read_file;
using tigr::testing::write_file;

TEST(RawCsv, GroupsAndSortsByPointIndex) {
  TempDir dir;
  const auto path = dir.file("raw.csv");
  write_file(path,
             "traj_id,point_idx,lon,lat,timestamp\n"
             "a,1,1.5,2.5,20\n"
             "b,0,0,0,5\n"
             "a,0,1.0,2.0,10\n"
             "b,1,0,1,6\n");
  auto res = load_raw_csv(path);
  ASSERT_EQ(res.items.size(), 2u);
  EXPECT_TRUE(res.issues.empty());
  EXPECT_EQ(res.items[0].id, "a");
  ASSERT_EQ(res.items[0].points.size(), 2u);
  EXPECT_EQ(res.items[0].points[0].t, 10);
  EXPECT_DOUBLE_EQ(res.items[0].points[1].x, 1.5);
  EXPECT_EQ(res.items[1].id, "b");
}

TEST(RawCsv, DuplicatePointNamesTheLine) {
  TempDir dir;
  const auto path = dir.file("raw.csv");
  write_file(path, "traj_id,point_idx,lon,lat,timestamp\na,0,1,2,10\na,1,1,2,11\na,0,1,2,12\n");
  try {
    load_raw_csv(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(RawCsv, StructuralErrorsCarryLineNumbers) {
  TempDir dir;
  const auto path = dir.file("raw.csv");
  write_file(path, "traj,idx,lon,lat,t\n");
  EXPECT_THROW(load_raw_csv(path), ParseError);
  write_file(path, "traj_id,point_idx,lon,lat,timestamp\na,0,1,2,10\na,1,east,2,11\n");
  try {
    load_raw_csv(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  write_file(path, "");
  EXPECT_THROW(load_raw_csv(path), ParseError);
}

TEST(RawCsv, InvariantViolationsAreReportedNotFatal) {
  TempDir dir;
  const auto path = dir.file("raw.csv");
  write_file(path,
             "traj_id,point_idx,lon,lat,timestamp\n"
             "short,0,1,2,10\n"
             "flat,0,1,2,10\nflat,1,1,2,10\n"
             "ok,0,1,2,10\nok,1,1,2,11\n");
  auto res = load_raw_csv(path);
  ASSERT_EQ(res.items.size(), 1u);
  EXPECT_EQ(res.items[0].id, "ok");
  EXPECT_EQ(res.issues.size(), 2u);
}

namespace {

std::string segment_rows(const std::vector<std::string>& classes) {
  std::string s = "segment_id,length_m,speed_kmh,class,wkt_polyline\n";
  for (std::size_t i = 0; i < classes.size(); ++i) {
    s += std::to_string(i) + ",100,50," + classes[i] + ",\"LINESTRING (0 0, 0.001 " +
         std::to_string(i) + ")\"\n";
  }
  return s;
}

}  // namespace

TEST(RoadNetworkCsv, ChainAdjacency) {
  TempDir dir;
  write_file(dir.file("s.csv"), segment_rows({"primary", "secondary", "residential"}));
  write_file(dir.file("e.csv"), "from_segment,to_segment\n0,1\n1,2\n");
  auto res = load_road_network(dir.file("s.csv"), dir.file("e.csv"));
  const auto& net = res.net;
  ASSERT_EQ(net.size(), 3u);
  EXPECT_EQ(net.successors[0], std::vector<std::size_t>{1});
  EXPECT_EQ(net.successors[1], std::vector<std::size_t>{2});
  EXPECT_TRUE(net.successors[2].empty());
  EXPECT_TRUE(res.warnings.empty());
  auto f = net.features();
  EXPECT_EQ(f.cols(), RoadNetwork::kFeatureCount);
  EXPECT_EQ(f(0, 2 + road_class_index("primary")), 1.0);
  EXPECT_EQ(f(0, 0), 100.0);
  EXPECT_EQ(net.geometry[2].size(), 2u);
}

TEST(RoadNetworkCsv, SelfLoopAccepted) {
  TempDir dir;
  write_file(dir.file("s.csv"), segment_rows({"primary"}));
  write_file(dir.file("e.csv"), "from_segment,to_segment\n0,0\n");
  auto res = load_road_network(dir.file("s.csv"), dir.file("e.csv"));
  EXPECT_EQ(res.net.successors[0], std::vector<std::size_t>{0});
}

TEST(RoadNetworkCsv, UnknownClassFallsBackToOther) {
  TempDir dir;
  write_file(dir.file("s.csv"), segment_rows({"cowpath"}));
  write_file(dir.file("e.csv"), "from_segment,to_segment\n");
  auto res = load_road_network(dir.file("s.csv"), dir.file("e.csv"));
  EXPECT_EQ(res.net.road_class[0], road_class_index("other"));
  ASSERT_EQ(res.warnings.size(), 1u);
  EXPECT_NE(res.warnings[0].find("cowpath"), std::string::npos);
}

TEST(RoadNetworkCsv, DanglingEdgeNamesTheEdge) {
  TempDir dir;
  write_file(dir.file("s.csv"), segment_rows({"primary", "primary"}));
  write_file(dir.file("e.csv"), "from_segment,to_segment\n0,1\n1,7\n");
  try {
    load_road_network(dir.file("s.csv"), dir.file("e.csv"));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("1->7"), std::string::npos);
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Wkt, ParsesAndRejects) {
  auto pts = parse_wkt_linestring("LINESTRING (1 2, 3.5 -4)");
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[1].lon, 3.5);
  EXPECT_EQ(pts[1].lat, -4.0);
  EXPECT_THROW(parse_wkt_linestring("POINT (1 2)"), ParseError);
  EXPECT_THROW(parse_wkt_linestring("LINESTRING (1 2)"), ParseError);
  EXPECT_THROW(parse_wkt_linestring("LINESTRING (1 2 3, 4 5)"), ParseError);
}

TEST(MatchedCsv, ValidatesAdjacency) {
  TempDir dir;
  write_file(dir.file("s.csv"), segment_rows({"primary", "primary", "primary"}));
  write_file(dir.file("e.csv"), "from_segment,to_segment\n0,1\n1,2\n");
  auto net = load_road_network(dir.file("s.csv"), dir.file("e.csv")).net;
  write_file(dir.file("m.csv"),
             "traj_id,point_idx,segment_id,timestamp\n"
             "good,0,0,0\ngood,1,1,5\ngood,2,2,9\n"
             "jump,0,0,0\njump,1,2,5\n"
             "oob,0,9,0\n");
  auto res = load_matched_csv(dir.file("m.csv"), net);
  ASSERT_EQ(res.items.size(), 1u);
  EXPECT_EQ(res.items[0].id, "good");
  ASSERT_EQ(res.issues.size(), 2u);
  EXPECT_NE(res.issues[0].find("not adjacent"), std::string::npos);
}

namespace {

// 10 x 10 cells of 100 m over a box whose sides are exactly 1000 m.
GridSpec kilometer_box() {
  const double lat0 = 41.0;
  GridSpec probe = GridSpec::make(-8.0, lat0, -7.0, lat0 + 1.0, 100.0);
  const double max_y = lat0 + 1000.0 / probe.meters_per_deg_lat();
  probe.max_y = max_y;
  const double max_x = -8.0 + 1000.0 / probe.meters_per_deg_lon();
  return GridSpec::make(-8.0, lat0, max_x, max_y, 100.0);
}

}  // namespace

TEST(Grid, MinCornerIsCellZero) {
  auto g = kilometer_box();
  EXPECT_EQ(g.M, 10u);
  EXPECT_EQ(g.N, 10u);
  RawTrajectory tr{"a", {{g.min_x, g.min_y, 0}}};
  auto out = map_to_grid(tr, g);
  ASSERT_TRUE(out);
  EXPECT_EQ(out->tokens[0].id, 0u);
  EXPECT_EQ(g.cell_of(g.min_x, g.min_y), (std::pair<std::size_t, std::size_t>{1, 1}));
}

TEST(Grid, IndexArithmetic) {
  auto g = kilometer_box();
  const auto p = g.from_offset_m(505.0, 505.0);
  const auto [m, n] = g.cell_of(p.lon, p.lat);
  // independent index arithmetic: floor(505 / 100) + 1
  const auto expect = static_cast<std::size_t>(std::floor(505.0 / 100.0)) + 1;
  EXPECT_EQ(m, expect);
  EXPECT_EQ(n, expect);
  EXPECT_EQ(g.flat_id(m, n), (expect - 1) * 10 + (expect - 1));
}

TEST(Grid, FlatIdIsABijection) {
  auto g = GridSpec::make(0.0, 0.0, 0.05, 0.03, 150.0);
  std::set<std::size_t> seen;
  for (std::size_t m = 1; m <= g.M; ++m) {
    for (std::size_t n = 1; n <= g.N; ++n) {
      const auto id = g.flat_id(m, n);
      EXPECT_LT(id, g.cell_count());
      EXPECT_EQ(g.cell_index(id), (std::pair<std::size_t, std::size_t>{m, n}));
      seen.insert(id);
    }
  }
  EXPECT_EQ(seen.size(), g.cell_count());
  EXPECT_THROW(g.cell_index(g.cell_count()), IndexError);
}

TEST(Grid, CollapsesRepeatsKeepingFirstTime) {
  auto g = kilometer_box();
  const auto a = g.from_offset_m(10, 10), b = g.from_offset_m(20, 20), c = g.from_offset_m(150, 10);
  RawTrajectory tr{"x", {{a.lon, a.lat, 1}, {b.lon, b.lat, 2}, {c.lon, c.lat, 3}, {a.lon, a.lat, 4}}};
  auto out = map_to_grid(tr, g);
  ASSERT_TRUE(out);
  ASSERT_EQ(out->tokens.size(), 3u);
  EXPECT_EQ(out->tokens[0].t, 1);
  EXPECT_EQ(out->tokens[1].id, 1u);
  EXPECT_EQ(out->tokens[2].id, 0u);
}

TEST(Grid, OutOfBoxPointsDropped) {
  auto g = kilometer_box();
  const auto in = g.from_offset_m(10, 10);
  RawTrajectory tr{"x", {{g.min_x - 1.0, g.min_y, 1}, {in.lon, in.lat, 2}}};
  auto out = map_to_grid(tr, g);
  ASSERT_TRUE(out);
  EXPECT_EQ(out->tokens.size(), 1u);
  RawTrajectory none{"y", {{g.max_x + 1.0, g.min_y, 1}}};
  EXPECT_FALSE(map_to_grid(none, g));
}

namespace {

RawTrajectory line_of(std::size_t n, const GridSpec& g, const std::string& id) {
  RawTrajectory tr{id, {}};
  for (std::size_t i = 0; i < n; ++i) {
    auto p = g.from_offset_m(1.0 + static_cast<double>(i) * 0.5, 1.0);
    tr.points.push_back({p.lon, p.lat, static_cast<Timestamp>(i)});
  }
  return tr;
}

}  // namespace

TEST(Filter, LengthBoundsAreInclusive) {
  auto g = kilometer_box();
  auto res = filter_trajectories({line_of(19, g, "a"), line_of(20, g, "b"), line_of(200, g, "c"),
                                  line_of(201, g, "d")},
                                 g);
  ASSERT_EQ(res.retained.size(), 2u);
  EXPECT_EQ(res.retained[0].id, "b");
  EXPECT_EQ(res.retained[1].id, "c");
  auto counts = res.counts();
  EXPECT_EQ(counts["too_short"], 1u);
  EXPECT_EQ(counts["too_long"], 1u);
}

TEST(Filter, PartitionProperty) {
  auto g = kilometer_box();
  Rng rng(3);
  std::vector<RawTrajectory> all;
  for (int i = 0; i < 200; ++i) {
    auto tr = line_of(1 + rng.below(260), g, "t" + std::to_string(i));
    if (rng.bernoulli(0.2)) tr.points.back().x = g.max_x + 0.1;
    all.push_back(tr);
  }
  auto res = filter_trajectories(all, g);
  std::multiset<std::string> ids;
  for (const auto& r : res.retained) ids.insert(r.id);
  for (const auto& r : res.rejected) ids.insert(r.first);
  EXPECT_EQ(ids.size(), all.size());
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), all.size());
  EXPECT_GT(res.counts()["out_of_box"], 0u);
}

TEST(Synth, LatticeSegmentCount) {
  SynthConfig cfg;
  cfg.lattice = 3;
  cfg.trajectories = 5;
  auto ds = synth_generate(cfg, Rng(1));
  const std::size_t g = 3, streets = 2 * g * (g - 1);
  EXPECT_EQ(ds.net.size(), 2 * streets);
  validate(ds.net);
}

TEST(Synth, ZeroSizesAreConfigErrors) {
  SynthConfig cfg;
  cfg.lattice = 0;
  try {
    synth_generate(cfg, Rng(1));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "data.lattice");
  }
  cfg.lattice = 3;
  cfg.trajectories = 0;
  EXPECT_THROW(synth_generate(cfg, Rng(1)), ConfigError);
}

TEST(Synth, SameSeedByteIdenticalFiles) {
  SynthConfig cfg;
  cfg.trajectories = 50;
  TempDir dir;
  for (int run = 0; run < 2; ++run) {
    auto ds = synth_generate(cfg, Rng(7));
    const auto tag = std::to_string(run);
    write_raw_csv(dir.file("raw" + tag), ds.raw);
    write_matched_csv(dir.file("m" + tag), ds.road);
    write_road_network(dir.file("s" + tag), dir.file("e" + tag), ds.net);
  }
  for (const char* f : {"raw", "m", "s", "e"}) {
    EXPECT_EQ(read_file(dir.file(std::string(f) + "0")), read_file(dir.file(std::string(f) + "1"))) << f;
  }
  auto other = synth_generate(cfg, Rng(8));
  write_raw_csv(dir.file("raw_other"), other.raw);
  EXPECT_NE(read_file(dir.file("raw0")), read_file(dir.file("raw_other")));
}

TEST(Synth, RushHourRouteIsSlower) {
  SynthConfig cfg;
  cfg.lattice = 4;
  auto grid = lattice_grid(cfg);
  auto net = make_lattice_network(cfg, grid);
  std::vector<std::size_t> route{0};
  while (route.size() < 12) route.push_back(net.successors[route.back()].front());
  const double monday = static_cast<double>(cfg.start_epoch);
  auto rush = traverse_times(cfg, net, route, monday + 8 * 3600.0);
  auto night = traverse_times(cfg, net, route, monday + 3 * 3600.0);
  const double d_rush = rush.back() - rush.front();
  const double d_night = night.back() - night.front();
  EXPECT_GT(d_rush, d_night);
  // at the peak each segment runs at rush_factor of its base speed
  double free_flow = 0.0;
  for (auto s : route) free_flow += net.length_m[s] / (net.speed_kmh[s] / 3.6);
  EXPECT_NEAR(d_night, free_flow, 1e-3 * free_flow);
  EXPECT_GT(d_rush, 1.5 * free_flow);
}

TEST(Synth, GeneratedDataSatisfiesInvariants) {
  SynthConfig cfg;
  cfg.trajectories = 1000;
  auto ds = synth_generate(cfg, Rng(11));
  ASSERT_EQ(ds.road.size(), 1000u);
  for (std::size_t i = 0; i < ds.road.size(); ++i) {
    const auto& road = ds.road[i];
    const auto& raw = ds.raw[i];
    EXPECT_EQ(first_broken_link(road, ds.net), -1) << road.id;
    EXPECT_GE(road.tokens.size(), cfg.min_segments);
    EXPECT_LE(road.tokens.size(), cfg.max_segments);
    EXPECT_EQ(raw.points.size(), road.tokens.size() * cfg.points_per_segment);
    for (std::size_t k = 1; k < road.tokens.size(); ++k) EXPECT_GE(road.tokens[k].t, road.tokens[k - 1].t);
    for (std::size_t k = 1; k < raw.points.size(); ++k) EXPECT_GT(raw.points[k].t, raw.points[k - 1].t);
    for (const auto& p : raw.points) ASSERT_TRUE(ds.grid.contains(p.x, p.y));
    auto grid = map_to_grid(raw, ds.grid);
    ASSERT_TRUE(grid);
    EXPECT_EQ(grid->tokens.size() > 0, true);
    for (std::size_t k = 1; k < grid->tokens.size(); ++k) {
      EXPECT_NE(grid->tokens[k].id, grid->tokens[k - 1].id);
    }
  }
  auto kept = filter_trajectories(ds.raw, ds.grid);
  EXPECT_EQ(kept.retained.size(), ds.raw.size());
}

TEST(CsvRoundTrip, TrajectoriesAndNetwork) {
  SynthConfig cfg;
  cfg.trajectories = 20;
  auto ds = synth_generate(cfg, Rng(2));
  TempDir dir;
  write_raw_csv(dir.file("raw.csv"), ds.raw);
  write_matched_csv(dir.file("m.csv"), ds.road);
  write_road_network(dir.file("s.csv"), dir.file("e.csv"), ds.net);
  auto net = load_road_network(dir.file("s.csv"), dir.file("e.csv")).net;
  EXPECT_EQ(net.successors, ds.net.successors);
  EXPECT_EQ(net.length_m, ds.net.length_m);
  EXPECT_EQ(net.road_class, ds.net.road_class);
  ASSERT_EQ(net.geometry.size(), ds.net.geometry.size());
  EXPECT_EQ(net.geometry[5][1].lon, ds.net.geometry[5][1].lon);
  auto raw = load_raw_csv(dir.file("raw.csv")).items;
  ASSERT_EQ(raw.size(), ds.raw.size());
  EXPECT_EQ(raw[3].points[4].x, ds.raw[3].points[4].x);
  EXPECT_EQ(raw[3].points[4].t, ds.raw[3].points[4].t);
  auto road = load_matched_csv(dir.file("m.csv"), net);
  EXPECT_TRUE(road.issues.empty());
  ASSERT_EQ(road.items.size(), ds.road.size());
  EXPECT_EQ(road.items[7].tokens.back().id, ds.road[7].tokens.back().id);
}

TEST(Split, SizesAndEdgeCases) {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("id" + std::to_string(i));
  auto s = split_dataset(ids, {0.8, 0.1, 0.1}, Rng(1));
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.validation.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
  auto all_train = split_dataset(ids, {1.0, 0.0, 0.0}, Rng(1));
  EXPECT_EQ(all_train.train.size(), 10u);
  EXPECT_TRUE(all_train.test.empty());
  EXPECT_THROW(split_dataset(ids, {0.5, 0.1, 0.1}, Rng(1)), ConfigError);
}

TEST(Split, DeterministicDisjointCovering) {
  std::vector<std::string> ids;
  for (int i = 0; i < 97; ++i) ids.push_back("id" + std::to_string(i));
  auto a = split_dataset(ids, {0.6, 0.15, 0.25}, Rng(5));
  auto b = split_dataset(ids, {0.6, 0.15, 0.25}, Rng(5));
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  std::set<std::string> u;
  for (auto* part : {&a.train, &a.validation, &a.test}) u.insert(part->begin(), part->end());
  EXPECT_EQ(u.size(), ids.size());
  EXPECT_EQ(a.train.size() + a.validation.size() + a.test.size(), ids.size());
}
