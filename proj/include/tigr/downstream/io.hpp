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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tigr/data/types.hpp"
#include "tigr/downstream/similarity.hpp"

namespace tigr::ds {

// Embedding file: "TIGREMB1", u32 count, u32 dim (little endian),
// count*dim float32 values, then count newline-terminated ids.

inline constexpr char kEmbeddingMagic[8] = {'T', 'I', 'G', 'R', 'E', 'M', 'B', '1'};

struct EmbeddingFile {
  Tensor<float> z;
  std::vector<std::string> ids;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ParseError("embedding file truncated in header");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline std::uint32_t float_bits(float f) { return std::bit_cast<std::uint32_t>(f); }

}  // namespace detail

template <class Real>
void write_embeddings(const std::filesystem::path& path, const Tensor<Real>& z, const std::vector<std::string>& ids) {
  if (z.rows() != ids.size()) throw DimensionError("one id per embedding row required");
  for (const auto& id : ids)
    if (id.find('\n') != std::string::npos) throw ContractError("trajectory id contains a newline");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kEmbeddingMagic, sizeof kEmbeddingMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(z.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(z.empty() ? 0 : z.cols()));
  for (std::size_t i = 0; i < z.size(); ++i) detail::put_u32(out, detail::float_bits(static_cast<float>(z[i])));
  for (const auto& id : ids) out << id << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

inline EmbeddingFile read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open embedding file '" + path.string() + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kEmbeddingMagic, 8) != 0) {
    throw ParseError("'" + path.string() + "' is not an embedding file");
  }
  const auto count = detail::get_u32(in), dim = detail::get_u32(in);
  EmbeddingFile f;
  f.z = Tensor<float>({count, dim});
  for (std::size_t i = 0; i < f.z.size(); ++i) {
    f.z[i] = std::bit_cast<float>(detail::get_u32(in));
  }
  std::string id;
  while (f.ids.size() < count && std::getline(in, id)) f.ids.push_back(id);
  if (f.ids.size() != count) throw ParseError("embedding file lists " + std::to_string(f.ids.size()) + " ids for " +
                                              std::to_string(count) + " rows");
  return f;
}

/// {task, dataset, seed, metrics, baseline, config_hash}
inline nlohmann::json metrics_json(const std::string& task, const std::string& dataset, std::uint64_t seed,
                                   nlohmann::json metrics, nlohmann::json baseline, const std::string& config_hash) {
  return {{"task", task},       {"dataset", dataset},   {"seed", seed},
          {"metrics", metrics}, {"baseline", baseline}, {"config_hash", config_hash}};
}

inline nlohmann::json to_json(const TsMetrics& m) {
  return {{"MR", m.mean_rank}, {"HR@1", m.hr1}, {"HR@5", m.hr5}, {"HR@10", m.hr10}};
}

/// Concatenated segment polylines, consecutive duplicates removed.
inline nlohmann::json line_of(const Sample& s, const data::RoadNetwork& net) {
  nlohmann::json coords = nlohmann::json::array();
  const data::LonLat* last = nullptr;
  for (const auto& tok : s.road) {
    if (tok.id >= net.size()) throw IndexError("segment " + std::to_string(tok.id) + " outside the road network");
    for (const auto& p : net.geometry[tok.id]) {
      if (last && last->lon == p.lon && last->lat == p.lat) continue;
      coords.push_back({p.lon, p.lat});
      last = &p;
    }
  }
  if (coords.size() == 1) coords.push_back(coords[0]);
  return {{"type", "LineString"}, {"coordinates", coords}};
}

inline nlohmann::json feature_of(const Sample& s, const data::RoadNetwork& net, nlohmann::json props) {
  props["id"] = s.id;
  return {{"type", "Feature"}, {"geometry", line_of(s, net)}, {"properties", props}};
}

/// The query plus its top-k database matches under dot-product similarity.
template <class Real>
nlohmann::json similar_geojson(const std::string& query_id, std::size_t k, const TsInstance& ts,
                               const TsEmbedded<Real>& emb, const data::RoadNetwork& net) {
  std::size_t qi = ts.queries.size();
  for (std::size_t i = 0; i < ts.queries.size(); ++i)
    if (ts.queries[i].id == query_id) qi = i;
  if (qi == ts.queries.size()) throw IndexError("unknown query trajectory '" + query_id + "'");
  nlohmann::json features = nlohmann::json::array();
  features.push_back(feature_of(ts.queries[qi], net, {{"role", "query"}}));
  const auto ranked = ranked_matches(emb.queries, qi, emb.database, k);
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const auto j = ranked[r];
    const double sim = kernels::dot(emb.queries.row(qi).data(), emb.database.row(j).data(), emb.queries.cols());
    features.push_back(feature_of(ts.database[j], net,
                                  {{"role", "match"}, {"rank", r + 1}, {"similarity", sim}, {"is_truth", j == ts.truth[qi]}}));
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

}  // namespace tigr::ds
