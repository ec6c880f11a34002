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
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "tigr/adam.hpp"
#include "tigr/encoder/model.hpp"
#include "tigr/module.hpp"

namespace tigr::ds {

struct HeadConfig {
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::size_t batch = 64;
  std::size_t hidden = 0;  // 0: input width
};

/// affine -> GELU -> affine over frozen embeddings.
template <class Real = float>
class Head {
 public:
  Head(std::size_t in, std::size_t out, const HeadConfig& cfg, Rng& rng) : cfg_(cfg) {
    const auto h = cfg.hidden ? cfg.hidden : in;
    add_weight(ps_, "w1", in, h, rng);
    add_constant<Real>(ps_, "b1", {h}, Real{0});
    add_weight(ps_, "w2", h, out, rng);
    add_constant<Real>(ps_, "b2", {out}, Real{0});
  }

  Var<Real> forward(Binder<Real>& b, Var<Real> x) const {
    return add_bias(matmul(gelu(add_bias(matmul(x, b("w1")), b("b1"))), b("w2")), b("b2"));
  }

  Tensor<Real> predict(const Tensor<Real>& x) {
    Tape<Real> t(false);
    Binder<Real> b(t, ps_);
    return forward(b, t.constant(x)).value();
  }

  /// Mini-batch Adam over `epochs` shuffled passes. `loss(binder, out, rows)`
  /// builds the scalar loss for the given row subset.
  template <class LossFn>
  void fit(const Tensor<Real>& x, LossFn&& loss, Rng& rng) {
    Adam<Real> adam(AdamConfig{cfg_.lr});
    std::vector<std::size_t> order(x.rows());
    for (std::size_t e = 0; e < cfg_.epochs; ++e) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(order);
      for (std::size_t lo = 0; lo < order.size(); lo += cfg_.batch) {
        std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                      order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), lo + cfg_.batch)));
        Tensor<Real> xb({rows.size(), x.cols()});
        for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.row(rows[i]).data(), x.cols(), xb.row(i).data());
        Tape<Real> t;
        Binder<Real> b(t, ps_);
        auto l = loss(forward(b, t.constant(std::move(xb))), rows);
        t.backward(l);
        adam.step(ps_);
      }
    }
  }

  ParameterSet<Real>& params() { return ps_; }

 private:
  HeadConfig cfg_;
  ParameterSet<Real> ps_;
};

// Travel time estimation.

struct RegressionMetrics {
  double mae = 0.0, mape = 0.0, rmse = 0.0;
};

inline RegressionMetrics regression_metrics(const std::vector<double>& pred, const std::vector<double>& y) {
  RegressionMetrics m;
  if (y.empty()) return m;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = pred[i] - y[i];
    m.mae += std::abs(e);
    m.mape += std::abs(e) / std::max(y[i], 1.0);
    m.rmse += e * e;
  }
  const double n = static_cast<double>(y.size());
  m.mae /= n;
  m.mape /= n;
  m.rmse = std::sqrt(m.rmse / n);
  return m;
}

/// Travel time in seconds from the road sequence timestamps.
inline double travel_time(const model::Sample& s) {
  if (s.road.empty()) return 0.0;
  return static_cast<double>(s.road.back().t - s.road.front().t);
}

struct TteData {
  std::vector<model::Sample> inputs;  // every timestamp set to the start time
  std::vector<double> labels;
  std::size_t excluded_zero_duration = 0;
};

inline TteData tte_prepare(const std::vector<model::Sample>& samples) {
  TteData d;
  for (const auto& s : samples) {
    const double y = travel_time(s);
    if (!(y > 0.0)) {
      ++d.excluded_zero_duration;
      continue;
    }
    d.inputs.push_back(model::start_time_only(s));
    d.labels.push_back(y);
  }
  return d;
}

struct TteResult {
  RegressionMetrics metrics, baseline;
  std::size_t train_count = 0, test_count = 0, excluded = 0;
};

/// Fits the regression head on standardised labels and reports test metrics
/// in seconds, next to the constant train-mean predictor.
template <class Real>
TteResult tte_fit_evaluate(const Tensor<Real>& x_train, const std::vector<double>& y_train, const Tensor<Real>& x_test,
                           const std::vector<double>& y_test, const HeadConfig& cfg, Rng rng) {
  if (y_train.empty() || y_test.empty()) throw ContractError("travel time estimation needs train and test labels");
  const double mean = std::accumulate(y_train.begin(), y_train.end(), 0.0) / static_cast<double>(y_train.size());
  double var = 0.0;
  for (double y : y_train) var += (y - mean) * (y - mean);
  const double sd = std::max(std::sqrt(var / static_cast<double>(y_train.size())), 1e-9);

  Head<Real> head(x_train.cols(), 1, cfg, rng);
  head.fit(
      x_train,
      [&](Var<Real> out, const std::vector<std::size_t>& rows) {
        std::vector<double> target;
        for (auto r : rows) target.push_back((y_train[r] - mean) / sd);
        return mse_loss(out, target);
      },
      rng);
  const auto raw = head.predict(x_test);
  std::vector<double> pred(y_test.size()), constant(y_test.size(), mean);
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = raw[i] * sd + mean;
  TteResult r;
  r.metrics = regression_metrics(pred, y_test);
  r.baseline = regression_metrics(constant, y_test);
  r.train_count = y_train.size();
  r.test_count = y_test.size();
  return r;
}

/// Head settings for the diagnostic; longer than the evaluation default.
inline HeadConfig diagnostic_head_config() {
  HeadConfig c;
  c.epochs = 100;
  return c;
}

/// Sanity harness: the standardised label, repeated across `width` columns,
/// stands in for the embedding, so a working head must reach near-zero error.
template <class Real = float>
TteResult tte_diagnostic(const std::vector<double>& y_train, const std::vector<double>& y_test,
                         const HeadConfig& cfg = diagnostic_head_config(), Rng rng = Rng(0), std::size_t width = 64) {
  if (y_train.empty()) throw ContractError("diagnostic needs train labels");
  const double mean = std::accumulate(y_train.begin(), y_train.end(), 0.0) / static_cast<double>(y_train.size());
  double var = 0.0;
  for (double y : y_train) var += (y - mean) * (y - mean);
  const double sd = std::max(std::sqrt(var / static_cast<double>(y_train.size())), 1e-9);
  auto embed = [&](const std::vector<double>& y) {
    Tensor<Real> x({y.size(), width});
    for (std::size_t i = 0; i < y.size(); ++i)
      for (std::size_t j = 0; j < width; ++j) x(i, j) = static_cast<Real>((y[i] - mean) / sd);
    return x;
  };
  return tte_fit_evaluate(embed(y_train), y_train, embed(y_test), y_test, cfg, rng);
}

// Destination prediction.

/// The first ceil(0.9 L) tokens of each branch sequence; the label is the
/// last road segment of the full trajectory.
inline model::Sample dp_prefix(const model::Sample& s, double fraction = 0.9) {
  auto cut = [&](std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  };
  model::Sample out{s.id, s.grid, s.road};
  if (!out.grid.empty()) out.grid.resize(cut(s.grid.size()));
  if (!out.road.empty()) out.road.resize(cut(s.road.size()));
  return out;
}

inline std::size_t dp_label(const model::Sample& s) {
  if (s.road.empty()) throw ContractError("trajectory '" + s.id + "' has no road segments");
  return s.road.back().id;
}

struct ClassificationMetrics {
  double acc1 = 0.0, acc5 = 0.0, macro_f1 = 0.0;
};

/// `ranked[i]` lists class ids by decreasing score for example i (at least
/// the top 5). Macro F1 averages over classes that occur in `labels`.
inline ClassificationMetrics classification_metrics(const std::vector<std::vector<std::size_t>>& ranked,
                                                    const std::vector<std::size_t>& labels) {
  ClassificationMetrics m;
  if (labels.empty()) return m;
  std::map<std::size_t, std::size_t> tp, fp, support;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& r = ranked[i];
    const auto y = labels[i];
    ++support[y];
    if (!r.empty() && r[0] == y) {
      m.acc1 += 1;
      ++tp[y];
    } else if (!r.empty()) {
      ++fp[r[0]];
    }
    if (std::find(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(5, r.size())), y) !=
        r.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(5, r.size()))) {
      m.acc5 += 1;
    }
  }
  const double n = static_cast<double>(labels.size());
  m.acc1 /= n;
  m.acc5 /= n;
  for (const auto& [c, sup] : support) {
    const double t = static_cast<double>(tp[c]);
    const double p = t + static_cast<double>(fp[c]);
    const double precision = p > 0 ? t / p : 0.0;
    const double recall = t / static_cast<double>(sup);
    m.macro_f1 += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  m.macro_f1 /= static_cast<double>(support.size());
  return m;
}

template <class Real>
std::vector<std::size_t> top_classes(std::span<const Real> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  idx.resize(k);
  return idx;
}

struct DpResult {
  ClassificationMetrics metrics, baseline;
  std::size_t train_count = 0, test_count = 0;
};

/// Trains a |V|-way classifier on frozen embeddings. The baseline ranks
/// classes by training frequency.
template <class Real>
DpResult dp_fit_evaluate(const Tensor<Real>& x_train, const std::vector<std::size_t>& y_train,
                         const Tensor<Real>& x_test, const std::vector<std::size_t>& y_test, std::size_t classes,
                         const HeadConfig& cfg, Rng rng) {
  if (y_train.empty() || y_test.empty()) throw ContractError("destination prediction needs train and test labels");
  Head<Real> head(x_train.cols(), classes, cfg, rng);
  head.fit(
      x_train,
      [&](Var<Real> out, const std::vector<std::size_t>& rows) {
        std::vector<std::size_t> target;
        for (auto r : rows) target.push_back(y_train[r]);
        return cross_entropy(out, target);
      },
      rng);
  const auto logits = head.predict(x_test);
  std::vector<std::vector<std::size_t>> ranked;
  for (std::size_t i = 0; i < logits.rows(); ++i) ranked.push_back(top_classes<Real>(logits.row(i), 5));

  std::vector<double> freq(classes, 0.0);
  for (auto y : y_train) freq[y] += 1.0;
  const auto by_freq = top_classes<double>(std::span<const double>(freq), 5);
  std::vector<std::vector<std::size_t>> base(y_test.size(), by_freq);

  DpResult r;
  r.metrics = classification_metrics(ranked, y_test);
  r.baseline = classification_metrics(base, y_test);
  r.train_count = y_train.size();
  r.test_count = y_test.size();
  return r;
}

/// FNV-1a over names and value bits; detects any change to a parameter set.
template <class Real>
std::uint64_t checksum(const ParameterSet<Real>& ps) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ull;
  };
  for (const auto& p : ps) {
    mix(p.name.data(), p.name.size());
    mix(p.value.data(), p.value.size() * sizeof(Real));
  }
  return h;
}

// End-to-end runs from a frozen model.

template <class Real>
TteResult tte_run(const model::TigrModel<Real>& m, const std::vector<model::Sample>& train,
                  const std::vector<model::Sample>& test, const HeadConfig& cfg, const Rng& rng) {
  const auto tr = tte_prepare(train), te = tte_prepare(test);
  auto r = tte_fit_evaluate(m.embed(tr.inputs), tr.labels, m.embed(te.inputs), te.labels, cfg, rng.derive(1));
  r.excluded = tr.excluded_zero_duration + te.excluded_zero_duration;
  return r;
}

template <class Real>
DpResult dp_run(const model::TigrModel<Real>& m, const std::vector<model::Sample>& train,
                const std::vector<model::Sample>& test, const HeadConfig& cfg, const Rng& rng) {
  auto encode = [&](const std::vector<model::Sample>& ss, std::vector<std::size_t>& labels) {
    std::vector<model::Sample> prefixes;
    for (const auto& s : ss) {
      prefixes.push_back(dp_prefix(s));
      labels.push_back(dp_label(s));
    }
    return m.embed(prefixes);
  };
  std::vector<std::size_t> y_train, y_test;
  auto x_train = encode(train, y_train);
  auto x_test = encode(test, y_test);
  return dp_fit_evaluate(x_train, y_train, x_test, y_test, m.config().road_vocab, cfg, rng.derive(2));
}

}  // namespace tigr::ds
