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
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <boost/tokenizer.hpp>

#include "tigr/data/types.hpp"

// CSV readers and writers for trajectories and road networks. Structural
// problems (bad header, non-numeric field, duplicate point) throw ParseError
// with the 1-based line number; per-trajectory invariant violations drop the
// trajectory and are listed in the returned issues.

namespace tigr::data {

namespace csv {

inline std::vector<std::string> split(const std::string& line, std::size_t lineno) {
  using Sep = boost::escaped_list_separator<char>;
  std::vector<std::string> out;
  try {
    boost::tokenizer<Sep> tok(line, Sep('\\', ',', '"'));
    for (const auto& f : tok) out.push_back(f);
  } catch (const boost::escaped_list_error& e) {
    throw ParseError(std::string("malformed CSV field: ") + e.what(), lineno);
  }
  return out;
}

inline std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\\\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') q += '\\';
    q += c;
  }
  return q + "\"";
}

/// Shortest text that parses back to the identical double.
inline std::string fmt(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(std::string_view s, std::size_t lineno, const char* field) {
  T v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty()) {
    throw ParseError("field '" + std::string(field) + "' is not a number: '" + std::string(s) + "'",
                     lineno);
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) throw ParseError("field '" + std::string(field) + "' is not finite", lineno);
  }
  return v;
}

/// Reads all lines of a file, checks the header, and calls `row(fields, lineno)`.
template <class RowFn>
void read(const std::string& path, const std::vector<std::string>& header, RowFn&& row) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!saw_header) {
      if (split(line, lineno) != header) {
        std::string want;
        for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
        throw ParseError(path + ": expected header '" + want + "'", lineno);
      }
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;
    auto fields = split(line, lineno);
    if (fields.size() != header.size()) {
      throw ParseError(path + ": expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(fields.size()),
                       lineno);
    }
    row(fields, lineno);
  }
  if (!saw_header) throw ParseError(path + ": missing header", 1);
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path);
  return out;
}

/// Groups (traj_id, point_idx) rows in first-seen id order, sorted by point_idx.
template <class P>
class Grouper {
 public:
  void add(const std::string& id, std::int64_t idx, P payload, std::size_t lineno) {
    auto [it, fresh] = index_.try_emplace(id, groups_.size());
    if (fresh) groups_.push_back({id, {}});
    auto& pts = groups_[it->second].second;
    auto [pit, ok] = pts.try_emplace(idx, Row{payload, lineno});
    if (!ok) {
      throw ParseError("duplicate point (" + id + ", " + std::to_string(idx) + "), first seen on line " +
                           std::to_string(pit->second.line),
                       lineno);
    }
  }

  template <class Fn>
  void each(Fn&& fn) const {
    for (const auto& [id, pts] : groups_) {
      std::vector<P> ordered;
      ordered.reserve(pts.size());
      for (const auto& [idx, r] : pts) ordered.push_back(r.payload);
      fn(id, ordered);
    }
  }

 private:
  struct Row {
    P payload;
    std::size_t line;
  };
  std::vector<std::pair<std::string, std::map<std::int64_t, Row>>> groups_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace csv

template <class T>
struct Loaded {
  std::vector<T> items;
  std::vector<std::string> issues;
};

inline const std::vector<std::string> kRawHeader = {"traj_id", "point_idx", "lon", "lat", "timestamp"};
inline const std::vector<std::string> kMatchedHeader = {"traj_id", "point_idx", "segment_id", "timestamp"};
inline const std::vector<std::string> kSegmentsHeader = {"segment_id", "length_m", "speed_kmh", "class",
                                                         "wkt_polyline"};
inline const std::vector<std::string> kEdgesHeader = {"from_segment", "to_segment"};

inline Loaded<RawTrajectory> load_raw_csv(const std::string& path) {
  csv::Grouper<RawPoint> g;
  csv::read(path, kRawHeader, [&](const std::vector<std::string>& f, std::size_t ln) {
    RawPoint p{csv::parse_number<double>(f[2], ln, "lon"), csv::parse_number<double>(f[3], ln, "lat"),
               csv::parse_number<Timestamp>(f[4], ln, "timestamp")};
    g.add(f[0], csv::parse_number<std::int64_t>(f[1], ln, "point_idx"), p, ln);
  });
  Loaded<RawTrajectory> out;
  g.each([&](const std::string& id, const std::vector<RawPoint>& pts) {
    if (pts.size() < 2) {
      out.issues.push_back(id + ": fewer than 2 points");
      return;
    }
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (pts[i].t <= pts[i - 1].t) {
        out.issues.push_back(id + ": timestamps not strictly increasing at point " + std::to_string(i));
        return;
      }
    }
    out.items.push_back({id, pts});
  });
  return out;
}

inline void write_raw_csv(const std::string& path, const std::vector<RawTrajectory>& trajs) {
  auto out = csv::open_out(path);
  out << "traj_id,point_idx,lon,lat,timestamp\n";
  for (const auto& tr : trajs) {
    for (std::size_t i = 0; i < tr.points.size(); ++i) {
      const auto& p = tr.points[i];
      out << csv::quote(tr.id) << ',' << i << ',' << csv::fmt(p.x) << ',' << csv::fmt(p.y) << ','
          << p.t << '\n';
    }
  }
}

/// Loads map-matched sequences and validates them against `net`.
inline Loaded<RoadTrajectory> load_matched_csv(const std::string& path, const RoadNetwork& net) {
  csv::Grouper<Token> g;
  csv::read(path, kMatchedHeader, [&](const std::vector<std::string>& f, std::size_t ln) {
    Token t{csv::parse_number<std::size_t>(f[2], ln, "segment_id"),
            csv::parse_number<Timestamp>(f[3], ln, "timestamp")};
    g.add(f[0], csv::parse_number<std::int64_t>(f[1], ln, "point_idx"), t, ln);
  });
  Loaded<RoadTrajectory> out;
  g.each([&](const std::string& id, const std::vector<Token>& toks) {
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (toks[i].id >= net.size()) {
        out.issues.push_back(id + ": unknown segment " + std::to_string(toks[i].id));
        return;
      }
      if (i && toks[i].t < toks[i - 1].t) {
        out.issues.push_back(id + ": timestamps decrease at token " + std::to_string(i));
        return;
      }
    }
    RoadTrajectory tr{id, toks};
    if (auto k = first_broken_link(tr, net); k >= 0) {
      out.issues.push_back(id + ": segments " + std::to_string(toks[k].id) + " -> " +
                           std::to_string(toks[k + 1].id) + " are not adjacent");
      return;
    }
    out.items.push_back(std::move(tr));
  });
  return out;
}

inline void write_matched_csv(const std::string& path, const std::vector<RoadTrajectory>& trajs) {
  auto out = csv::open_out(path);
  out << "traj_id,point_idx,segment_id,timestamp\n";
  for (const auto& tr : trajs) {
    for (std::size_t i = 0; i < tr.tokens.size(); ++i) {
      out << csv::quote(tr.id) << ',' << i << ',' << tr.tokens[i].id << ',' << tr.tokens[i].t << '\n';
    }
  }
}

inline std::vector<LonLat> parse_wkt_linestring(const std::string& wkt, std::size_t lineno = 0) {
  const auto open = wkt.find('(');
  const auto close = wkt.rfind(')');
  std::string tag = wkt.substr(0, open == std::string::npos ? 0 : open);
  tag.erase(std::remove_if(tag.begin(), tag.end(), [](unsigned char c) { return std::isspace(c); }),
            tag.end());
  if (open == std::string::npos || close == std::string::npos || close < open || tag != "LINESTRING") {
    throw ParseError("expected WKT LINESTRING, got '" + wkt + "'", lineno);
  }
  std::vector<LonLat> pts;
  std::stringstream body(wkt.substr(open + 1, close - open - 1));
  std::string pair;
  while (std::getline(body, pair, ',')) {
    std::istringstream ps(pair);
    LonLat p;
    std::string extra;
    if (!(ps >> p.lon >> p.lat) || (ps >> extra)) {
      throw ParseError("bad LINESTRING coordinate '" + pair + "'", lineno);
    }
    pts.push_back(p);
  }
  if (pts.size() < 2) throw ParseError("LINESTRING needs at least 2 points", lineno);
  return pts;
}

inline std::string format_wkt_linestring(const std::vector<LonLat>& pts) {
  std::string s = "LINESTRING (";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i) s += ", ";
    s += csv::fmt(pts[i].lon) + " " + csv::fmt(pts[i].lat);
  }
  return s + ")";
}

/// Segment ids must be exactly 0..n-1 (any row order). Unknown class strings
/// map to "other" with a warning; dangling edges throw naming the edge.
struct LoadedNetwork {
  RoadNetwork net;
  std::vector<std::string> warnings;
};

inline LoadedNetwork load_road_network(const std::string& segments_path,
                                             const std::string& edges_path) {
  struct Row {
    double length, speed;
    std::size_t cls;
    std::vector<LonLat> geom;
  };
  std::map<std::size_t, Row> rows;
  LoadedNetwork out;
  csv::read(segments_path, kSegmentsHeader, [&](const std::vector<std::string>& f, std::size_t ln) {
    const auto id = csv::parse_number<std::size_t>(f[0], ln, "segment_id");
    Row r{csv::parse_number<double>(f[1], ln, "length_m"), csv::parse_number<double>(f[2], ln, "speed_kmh"),
          road_class_index(f[3]), parse_wkt_linestring(f[4], ln)};
    if (kRoadClasses[r.cls] != f[3]) {
      out.warnings.push_back("segment " + f[0] + ": unknown class '" + f[3] + "' mapped to other");
    }
    if (!rows.emplace(id, std::move(r)).second) throw ParseError("duplicate segment " + f[0], ln);
  });
  const std::size_t n = rows.size();
  if (n == 0) throw ParseError(segments_path + ": no segments");
  if (rows.rbegin()->first != n - 1) {
    throw ParseError(segments_path + ": segment ids must be 0.." + std::to_string(n - 1));
  }
  auto& net = out.net;
  net.successors.resize(n);
  for (auto& [id, r] : rows) {
    net.length_m.push_back(r.length);
    net.speed_kmh.push_back(r.speed);
    net.road_class.push_back(r.cls);
    net.geometry.push_back(std::move(r.geom));
  }
  csv::read(edges_path, kEdgesHeader, [&](const std::vector<std::string>& f, std::size_t ln) {
    const auto a = csv::parse_number<std::size_t>(f[0], ln, "from_segment");
    const auto b = csv::parse_number<std::size_t>(f[1], ln, "to_segment");
    if (a >= n || b >= n) {
      throw ParseError("edge " + f[0] + "->" + f[1] + " references an unknown segment", ln);
    }
    net.successors[a].push_back(b);
  });
  for (auto& s : net.successors) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }
  return out;
}

inline void write_road_network(const std::string& segments_path, const std::string& edges_path,
                               const RoadNetwork& net) {
  auto seg = csv::open_out(segments_path);
  seg << "segment_id,length_m,speed_kmh,class,wkt_polyline\n";
  for (std::size_t i = 0; i < net.size(); ++i) {
    seg << i << ',' << csv::fmt(net.length_m[i]) << ',' << csv::fmt(net.speed_kmh[i]) << ','
        << kRoadClasses[net.road_class[i]] << ',' << csv::quote(format_wkt_linestring(net.geometry[i]))
        << '\n';
  }
  auto edges = csv::open_out(edges_path);
  edges << "from_segment,to_segment\n";
  for (std::size_t i = 0; i < net.size(); ++i) {
    for (auto j : net.successors[i]) edges << i << ',' << j << '\n';
  }
}

}  // namespace tigr::data
