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
#include <cmath>
#include <string>
#include <vector>

#include "tigr/data/types.hpp"
#include "tigr/rng.hpp"

namespace tigr::data {

/// Shuffled train/validation/test split. Train and validation sizes are
/// round(f * n); test takes the remainder.
inline DatasetSplit split_dataset(const std::vector<std::string>& ids, std::array<double, 3> fractions,
                                  Rng rng) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative", "data.split");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split fractions sum to " + std::to_string(total) + ", expected 1", "data.split");
  }
  std::vector<std::string> order = ids;
  rng.shuffle(order);
  const std::size_t n = order.size();
  const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(fractions[0] * n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(fractions[1] * n)));
  DatasetSplit s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.validation.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  return s;
}

}  // namespace tigr::data
