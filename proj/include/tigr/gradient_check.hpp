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
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "tigr/autograd.hpp"

namespace tigr {

struct GradCheckOptions {
  double h = 1e-3;
  /// Tensors up to this many entries are checked exhaustively.
  std::size_t full_check_limit = 256;
  /// Entries sampled from larger tensors.
  std::size_t samples = 32;
  std::uint64_t seed = 0;
  /// Restricts the check to parameters whose name satisfies the predicate.
  std::function<bool(const std::string&)> include;
};

struct GradCheckReport {
  std::map<std::string, double> max_relative_error;
  std::size_t entries_checked = 0;

  double worst() const {
    double w = 0.0;
    for (const auto& [name, e] : max_relative_error) w = std::max(w, e);
    return w;
  }
  std::string worst_name() const {
    std::string n;
    double w = -1.0;
    for (const auto& [name, e] : max_relative_error)
      if (e > w) w = e, n = name;
    return n;
  }
};

/// Compares reverse-mode gradients with central differences
/// (f(x+h) - f(x-h)) / 2h, per entry, using the relative error
/// |a - n| / max(|a|, |n|, 1e-6).
///
/// `loss_fn(tape)` must build the scalar loss on the given tape and return it;
/// it is called once with grad enabled and then repeatedly without.
template <class Real, class LossFn>
GradCheckReport gradient_check(LossFn&& loss_fn, ParameterSet<Real>& params,
                               const GradCheckOptions& opt = {}) {
  auto evaluate = [&]() -> double {
    Tape<Real> tape(false);
    return static_cast<double>(loss_fn(tape).value()[0]);
  };

  params.zero_grad();
  {
    Tape<Real> tape(true);
    auto loss = loss_fn(tape);
    tape.backward(loss);
  }
  const double f0 = evaluate();
  if (evaluate() != f0) {
    throw NumericError("gradient_check: loss function is not deterministic");
  }

  GradCheckReport report;
  Rng rng(opt.seed);
  for (auto& p : params) {
    if (!p.trainable()) continue;
    if (opt.include && !opt.include(p.name)) continue;
    std::vector<std::size_t> idx(p.value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > opt.full_check_limit) {
      rng.shuffle(idx);
      idx.resize(std::min(opt.samples, idx.size()));
      std::sort(idx.begin(), idx.end());
    }
    double worst = 0.0;
    for (auto i : idx) {
      const Real orig = p.value[i];
      p.value[i] = static_cast<Real>(orig + opt.h);
      const double xp = p.value[i];
      const double fp = evaluate();
      p.value[i] = static_cast<Real>(orig - opt.h);
      const double xm = p.value[i];
      const double fm = evaluate();
      p.value[i] = orig;
      const double numeric = (fp - fm) / (xp - xm);
      const double analytic = (*p.grad)[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
      ++report.entries_checked;
    }
    report.max_relative_error[p.name] = worst;
  }
  params.zero_grad();
  return report;
}

}  // namespace tigr
