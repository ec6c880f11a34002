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
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "tigr/common.hpp"
#include "tigr/rng.hpp"

// Random (RM), consecutive (CM) and truncation (TC) masking. Every function
// returns the kept positions in ascending order.

namespace tigr::masking {

enum class Kind { kRandom, kConsecutive, kTruncate };

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::kRandom: return "RM";
    case Kind::kConsecutive: return "CM";
    case Kind::kTruncate: return "TC";
  }
  return "?";
}

inline Kind parse_kind(const std::string& s) {
  if (s == "RM") return Kind::kRandom;
  if (s == "CM") return Kind::kConsecutive;
  if (s == "TC") return Kind::kTruncate;
  throw ConfigError("unknown masking strategy '" + s + "' (expected RM, CM or TC)", "masking");
}

struct Strategy {
  Kind kind = Kind::kRandom;
  double ratio = 0.3;
};

struct ViewConfig {
  std::vector<Strategy> strategies;
  std::size_t min_keep = 2;
};

inline ViewConfig default_view1() { return {{{Kind::kTruncate, 0.3}, {Kind::kConsecutive, 0.3}}, 2}; }
inline ViewConfig default_view2() {
  return {{{Kind::kRandom, 0.3}, {Kind::kTruncate, 0.3}, {Kind::kConsecutive, 0.3}}, 2};
}

inline void validate(const ViewConfig& v, const std::string& key) {
  if (v.min_keep < 1) throw ConfigError(key + ".min_keep must be at least 1", key + ".min_keep");
  for (const auto& s : v.strategies) {
    if (!(s.ratio >= 0.0 && s.ratio <= 1.0)) {
      throw ConfigError(key + ": masking ratio must lie in [0, 1]", key);
    }
  }
}

inline std::string describe(const ViewConfig& v) {
  std::string s;
  for (const auto& st : v.strategies) {
    if (!s.empty()) s += "+";
    s += kind_name(st.kind);
  }
  return s.empty() ? "none" : s;
}

namespace detail {

inline std::vector<std::size_t> iota(std::size_t n, std::size_t from = 0) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), from);
  return v;
}

/// floor(p * len), never leaving fewer than min(len, min_keep) positions.
inline std::size_t drop_count(std::size_t len, double p, std::size_t min_keep) {
  // the epsilon keeps products such as 0.29 * 100 from flooring one short
  auto k = static_cast<std::size_t>(std::floor(p * static_cast<double>(len) + 1e-9));
  return std::min(k, len - std::min(len, min_keep));
}

}  // namespace detail

/// Drops each position independently with probability p; refills uniformly
/// from the dropped positions until `min_keep` survive.
inline std::vector<std::size_t> random_mask(std::size_t len, double p, Rng& rng, std::size_t min_keep = 2) {
  std::vector<std::size_t> kept, dropped;
  for (std::size_t i = 0; i < len; ++i) (rng.bernoulli(p) ? dropped : kept).push_back(i);
  while (kept.size() < std::min(len, min_keep)) {
    const auto j = static_cast<std::size_t>(rng.below(dropped.size()));
    kept.push_back(dropped[j]);
    dropped.erase(dropped.begin() + static_cast<std::ptrdiff_t>(j));
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

/// Drops one run of floor(p * len) positions at a uniform offset.
inline std::vector<std::size_t> consecutive_mask(std::size_t len, double p, Rng& rng,
                                                 std::size_t min_keep = 2) {
  const auto k = detail::drop_count(len, p, min_keep);
  if (k == 0) return detail::iota(len);
  const auto start = static_cast<std::size_t>(rng.below(len - k + 1));
  std::vector<std::size_t> kept = detail::iota(start);
  for (std::size_t i = start + k; i < len; ++i) kept.push_back(i);
  return kept;
}

/// Drops floor(p * len) positions from the origin or the destination, chosen
/// with equal probability.
inline std::vector<std::size_t> truncate(std::size_t len, double p, Rng& rng, std::size_t min_keep = 2) {
  const auto k = detail::drop_count(len, p, min_keep);
  if (k == 0) return detail::iota(len);
  const bool from_origin = rng.bernoulli(0.5);
  return from_origin ? detail::iota(len - k, k) : detail::iota(len - k);
}

/// Applies the strategies in order, each to the survivors of the previous,
/// and returns surviving positions of the original sequence.
inline std::vector<std::size_t> apply_view(std::size_t len, const ViewConfig& cfg, Rng& rng) {
  std::vector<std::size_t> kept = detail::iota(len);
  for (const auto& s : cfg.strategies) {
    std::vector<std::size_t> local;
    switch (s.kind) {
      case Kind::kRandom: local = random_mask(kept.size(), s.ratio, rng, cfg.min_keep); break;
      case Kind::kConsecutive: local = consecutive_mask(kept.size(), s.ratio, rng, cfg.min_keep); break;
      case Kind::kTruncate: local = truncate(kept.size(), s.ratio, rng, cfg.min_keep); break;
    }
    std::vector<std::size_t> next;
    next.reserve(local.size());
    for (auto i : local) next.push_back(kept[i]);
    kept = std::move(next);
  }
  return kept;
}

/// Masks a token sequence directly.
template <class T>
std::vector<T> apply_view(const std::vector<T>& tokens, const ViewConfig& cfg, Rng& rng) {
  std::vector<T> out;
  for (auto i : apply_view(tokens.size(), cfg, rng)) out.push_back(tokens[i]);
  return out;
}

}  // namespace tigr::masking
