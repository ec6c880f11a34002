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
#include <string>
#include <unordered_map>

#include "tigr/autograd.hpp"
#include "tigr/ops.hpp"

namespace tigr {

/// Binds parameters of one ParameterSet onto a tape by name, pushing each at
/// most once so repeated uses share a node.
template <class Real = float>
class Binder {
 public:
  Binder(Tape<Real>& tape, ParameterSet<Real>& params) : tape_(tape), params_(params) {}

  Var<Real> operator()(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    auto v = tape_.parameter(params_.at(name));
    cache_.emplace(name, v);
    return v;
  }

  bool has(const std::string& name) const { return params_.find(name) != nullptr; }
  Tape<Real>& tape() { return tape_; }
  ParameterSet<Real>& params() { return params_; }

 private:
  Tape<Real>& tape_;
  ParameterSet<Real>& params_;
  std::unordered_map<std::string, Var<Real>> cache_;
};

/// Fan-in scaled normal initialization, std = gain / sqrt(rows).
template <class Real>
Parameter<Real>& add_weight(ParameterSet<Real>& ps, const std::string& name, std::size_t rows,
                            std::size_t cols, Rng& rng, double gain = 1.0) {
  return ps.add(name, Tensor<Real>::normal({rows, cols}, gain / std::sqrt(static_cast<double>(rows)), rng));
}

template <class Real>
Parameter<Real>& add_constant(ParameterSet<Real>& ps, const std::string& name, Shape shape, Real value) {
  return ps.add(name, Tensor<Real>(std::move(shape), value));
}

}  // namespace tigr
