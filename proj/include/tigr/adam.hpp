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
#include <map>
#include <string>

#include "tigr/autograd.hpp"

namespace tigr {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class Real = float>
struct AdamMoments {
  Tensor<Real> m;
  Tensor<Real> v;
};

/// Adam with bias correction. Moments are keyed by parameter name so they
/// can be checkpointed and restored independently of parameter order.
template <class Real = float>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  /// Number of completed steps.
  std::size_t steps() const noexcept { return step_; }
  void set_steps(std::size_t s) { step_ = s; }

  std::map<std::string, AdamMoments<Real>>& moments() { return moments_; }
  const std::map<std::string, AdamMoments<Real>>& moments() const { return moments_; }

  /// Applies one update to every trainable parameter, then zeroes gradients.
  /// A non-finite gradient aborts the whole step before any value changes.
  void step(ParameterSet<Real>& params) {
    for (const auto& p : params) {
      if (p.trainable() && !p.grad->all_finite()) {
        throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& p : params) {
      if (!p.trainable()) continue;
      auto it = moments_.find(p.name);
      if (it == moments_.end()) {
        it = moments_.emplace(p.name, AdamMoments<Real>{Tensor<Real>(p.value.shape()),
                                                        Tensor<Real>(p.value.shape())})
                 .first;
      }
      auto& m = it->second.m;
      auto& v = it->second.v;
      auto& g = *p.grad;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double gi = g[i];
        const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<Real>(mi);
        v[i] = static_cast<Real>(vi);
        const double update = cfg_.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
        p.value[i] = static_cast<Real>(p.value[i] - update);
      }
      g.fill(Real{0});
    }
  }

 private:
  AdamConfig cfg_;
  std::size_t step_ = 0;
  std::map<std::string, AdamMoments<Real>> moments_;
};

}  // namespace tigr
