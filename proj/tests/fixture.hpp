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

#include "tigr/data/synth.hpp"
#include "tigr/pipeline.hpp"

namespace tigr::testing {

/// A 3x3 lattice with a few dozen trajectories, prepared once per binary.
inline const Prepared& small_dataset() {
  static const Prepared p = [] {
    data::SynthConfig c;
    c.lattice = 3;
    c.trajectories = 80;
    c.min_segments = 10;
    c.max_segments = 14;
    auto ds = data::synth_generate(c, Rng(7));
    return prepare(ds.net, ds.grid, ds.raw, ds.road, PrepareOptions{}, Rng(8));
  }();
  return p;
}

/// Narrow model over small_dataset().
inline model::ModelConfig tiny_config(std::size_t d = 16) {
  auto c = small_dataset().base_config();
  c.d_g = c.d_r = c.d_st = d;
  c.n_layers = 1;
  c.h_enc = 2;
  c.h_lma = 2;
  c.q = 4;
  c.dropout = 0.0;
  return c;
}

inline model::Batch batch_of(const std::vector<model::Sample>& samples, std::size_t n, std::size_t from = 0) {
  model::Batch b;
  for (std::size_t i = from; i < from + n && i < samples.size(); ++i) b.push_back(&samples[i]);
  return b;
}

}  // namespace tigr::testing
