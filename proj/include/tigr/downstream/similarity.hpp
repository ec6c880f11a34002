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
#include <numeric>
#include <string>
#include <vector>

#include "tigr/encoder/model.hpp"
#include "tigr/ops.hpp"

namespace tigr::ds {

using model::Sample;

/// 1-based odd positions (1st, 3rd, ...) of every branch sequence.
inline Sample odd_half(const Sample& s) {
  Sample out{s.id, {}, {}};
  for (std::size_t i = 0; i < s.grid.size(); i += 2) out.grid.push_back(s.grid[i]);
  for (std::size_t i = 0; i < s.road.size(); i += 2) out.road.push_back(s.road[i]);
  return out;
}

/// 1-based even positions (2nd, 4th, ...).
inline Sample even_half(const Sample& s) {
  Sample out{s.id, {}, {}};
  for (std::size_t i = 1; i < s.grid.size(); i += 2) out.grid.push_back(s.grid[i]);
  for (std::size_t i = 1; i < s.road.size(); i += 2) out.road.push_back(s.road[i]);
  return out;
}

/// Similarity-search instance. The database lists the even halves of the
/// queries (same order) followed by distractor even halves, so the distractor
/// set for a smaller k_neg is always a prefix of a larger one.
struct TsInstance {
  std::vector<Sample> queries;
  std::vector<Sample> database;
  std::vector<std::size_t> truth;
  std::size_t k_neg = 0;

  std::size_t database_size(std::size_t k) const { return queries.size() + k; }
};

inline bool ts_eligible(const Sample& s) { return s.grid.size() >= 4 && s.road.size() >= 4; }

/// Draws `n_queries` evaluation trajectories and `k_neg` distractors, all
/// distinct, from the eligible members of `pool`.
inline TsInstance ts_build(const std::vector<Sample>& pool, std::size_t n_queries, std::size_t k_neg, Rng rng) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (ts_eligible(pool[i])) eligible.push_back(i);
  if (n_queries == 0) throw ConfigError("eval.queries must be positive", "eval.queries");
  if (n_queries + k_neg > eligible.size()) {
    throw ConfigError("similarity search needs " + std::to_string(n_queries) + " queries + " +
                          std::to_string(k_neg) + " distractors but only " + std::to_string(eligible.size()) +
                          " trajectories of length >= 4 are available",
                      "eval.k_neg");
  }
  rng.shuffle(eligible);
  TsInstance ts;
  ts.k_neg = k_neg;
  for (std::size_t i = 0; i < n_queries; ++i) {
    const auto& s = pool[eligible[i]];
    ts.queries.push_back(odd_half(s));
    ts.database.push_back(even_half(s));
    ts.truth.push_back(i);
  }
  for (std::size_t i = 0; i < k_neg; ++i) ts.database.push_back(even_half(pool[eligible[n_queries + i]]));
  return ts;
}

struct TsMetrics {
  double mean_rank = 0.0;
  double hr1 = 0.0;
  double hr5 = 0.0;
  double hr10 = 0.0;
  std::vector<std::size_t> ranks;
};

/// Rank of the true entry under dot-product similarity over the first
/// `db_size` database rows. Rank 1 is best; equal scores rank the lower
/// database index first.
template <class Real>
std::size_t true_rank(const Tensor<Real>& q, std::size_t qi, const Tensor<Real>& db, std::size_t db_size,
                      std::size_t truth) {
  const std::size_t d = q.cols();
  const double target = kernels::dot(q.row(qi).data(), db.row(truth).data(), d);
  std::size_t rank = 1;
  for (std::size_t j = 0; j < db_size; ++j) {
    if (j == truth) continue;
    const double s = kernels::dot(q.row(qi).data(), db.row(j).data(), d);
    if (s > target || (s == target && j < truth)) ++rank;
  }
  return rank;
}

template <class Real>
TsMetrics ts_evaluate(const Tensor<Real>& q, const Tensor<Real>& db, const std::vector<std::size_t>& truth,
                      std::size_t db_size) {
  if (q.rows() != truth.size()) throw DimensionError("one truth index per query required");
  if (db_size > db.rows()) throw DimensionError("database prefix larger than the database");
  if (q.cols() != db.cols()) throw DimensionError("query and database widths differ");
  TsMetrics m;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    if (truth[i] >= db_size) throw IndexError("truth index outside the database prefix");
    const auto r = true_rank(q, i, db, db_size, truth[i]);
    m.ranks.push_back(r);
    m.mean_rank += static_cast<double>(r);
    m.hr1 += r <= 1;
    m.hr5 += r <= 5;
    m.hr10 += r <= 10;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, q.rows()));
  m.mean_rank /= n;
  m.hr1 /= n;
  m.hr5 /= n;
  m.hr10 /= n;
  return m;
}

/// Embeds queries and the full database once; evaluate any k_neg prefix.
template <class Real>
struct TsEmbedded {
  Tensor<Real> queries;
  Tensor<Real> database;

  TsMetrics evaluate(const TsInstance& ts, std::size_t k) const {
    if (k > ts.k_neg) throw ConfigError("k_neg " + std::to_string(k) + " exceeds the built instance", "eval.k_neg");
    return ts_evaluate(queries, database, ts.truth, ts.database_size(k));
  }
};

template <class Real>
TsEmbedded<Real> ts_embed(const model::TigrModel<Real>& m, const TsInstance& ts) {
  return {m.embed(ts.queries), m.embed(ts.database)};
}

/// Database rows ordered by decreasing similarity to query `qi` (ties by index).
template <class Real>
std::vector<std::size_t> ranked_matches(const Tensor<Real>& q, std::size_t qi, const Tensor<Real>& db,
                                        std::size_t k) {
  std::vector<double> s(db.rows());
  for (std::size_t j = 0; j < db.rows(); ++j) s[j] = kernels::dot(q.row(qi).data(), db.row(j).data(), q.cols());
  std::vector<std::size_t> idx(db.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
  idx.resize(k);
  return idx;
}

}  // namespace tigr::ds
