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
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "tigr/adam.hpp"
#include "tigr/data/csv.hpp"
#include "tigr/encoder/checkpoint.hpp"
#include "tigr/masking.hpp"
#include "tigr/training/queue.hpp"

namespace tigr::train {

using model::Batch;
using model::Branch;
using model::KeepLists;
using model::TigrModel;

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch = 512;
  std::size_t epochs = 10;
  double tau = 0.05;
  double lambda = 0.5;
  std::size_t queue = 2048;
  std::uint64_t seed = 0;
  masking::ViewConfig view1 = masking::default_view1();
  masking::ViewConfig view2 = masking::default_view2();

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("train.tau must be positive", "train.tau");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("train.lambda must lie in [0, 1]", "train.lambda");
    if (batch < 2) throw ConfigError("train.batch must be at least 2", "train.batch");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive", "train.lr");
    masking::validate(view1, "masking.view1");
    masking::validate(view2, "masking.view2");
  }
};

struct LossReport {
  double intra = 0.0;
  double inter = 0.0;
  double total = 0.0;
  std::map<std::string, double> components;  // intra.<branch>, inter.r-g, inter.st-r
};

/// One queue per active branch, each holding target projections.
template <class Real = float>
class Queues {
 public:
  Queues() = default;
  Queues(const model::ModelConfig& cfg, std::size_t capacity) {
    for (auto b : cfg.branches.active()) q_.emplace(b, NegativeQueue<Real>(capacity, cfg.d_proj()));
  }
  NegativeQueue<Real>& at(Branch b) { return q_.at(b); }
  const NegativeQueue<Real>& at(Branch b) const { return q_.at(b); }
  bool has(Branch b) const { return q_.count(b) != 0; }

 private:
  std::map<Branch, NegativeQueue<Real>> q_;
};

/// Surviving positions of both views for every branch of a batch.
struct ViewPlan {
  std::map<Branch, KeepLists> view1, view2;
};

inline std::size_t sequence_length(const model::Sample& s, Branch b) {
  return b == Branch::kGrid ? s.grid.size() : s.road.size();
}

/// Draws View 1 then View 2 for each branch in turn; every draw is independent.
inline ViewPlan draw_views(const model::ModelConfig& mc, const Batch& batch, const TrainConfig& cfg, Rng& rng) {
  ViewPlan plan;
  for (auto b : mc.branches.active()) {
    auto& v1 = plan.view1[b];
    auto& v2 = plan.view2[b];
    for (const auto* s : batch) v1.push_back(masking::apply_view(sequence_length(*s, b), cfg.view1, rng));
    for (const auto* s : batch) v2.push_back(masking::apply_view(sequence_length(*s, b), cfg.view2, rng));
  }
  return plan;
}

/// Cross-branch pairs (query branch, positive branch); the positive's queue
/// supplies the negatives.
inline std::vector<std::pair<Branch, Branch>> inter_pairs(const model::BranchSet& s) {
  std::vector<std::pair<Branch, Branch>> out;
  if (s.road && s.grid) out.emplace_back(Branch::kRoad, Branch::kGrid);
  if (s.st && s.road) out.emplace_back(Branch::kSt, Branch::kRoad);
  return out;
}

inline std::string pair_name(std::pair<Branch, Branch> p) {
  return std::string(model::branch_short(p.first)) + "-" + model::branch_short(p.second);
}

/// L2-normalised View-2 projections from the target encoders and heads,
/// computed without gradient.
template <class Real>
std::map<Branch, Tensor<Real>> target_projections(TigrModel<Real>& m, const Batch& batch, const ViewPlan& plan,
                                                  double dropout = 0.0, Rng* rng = nullptr) {
  Tape<Real> tape(false);
  Binder<Real> emb(tape, m.anchor()), tgt(tape, m.target());
  std::map<Branch, Tensor<Real>> out;
  for (auto b : m.config().branches.active()) {
    auto z = m.encode_branch(emb, tgt, b, batch, &plan.view2.at(b), dropout, rng);
    out.emplace(b, l2_normalize_rows(enc::project(tgt, model::head_prefix(b), z)).value());
  }
  return out;
}

template <class Real>
struct LossVars {
  Var<Real> total, intra, inter;
  std::map<std::string, Var<Real>> components;
};

/// total = lambda * intra + (1 - lambda) * inter on the anchor tape of `a`.
/// Intra averages the per-branch terms; inter averages whichever of the
/// r-g and st-r pairs exist (zero when none do).
template <class Real>
LossVars<Real> contrastive_loss(Binder<Real>& a, const TigrModel<Real>& m, const Batch& batch, const ViewPlan& plan,
                                const std::map<Branch, Tensor<Real>>& targets, const Queues<Real>& queues,
                                const TrainConfig& cfg, double dropout = 0.0, Rng* rng = nullptr) {
  auto& tape = a.tape();
  std::map<Branch, Var<Real>> query, positive;
  std::map<Branch, Tensor<Real>> negatives;
  for (auto b : m.config().branches.active()) {
    auto z = m.encode_branch(a, a, b, batch, &plan.view1.at(b), dropout, rng);
    query.emplace(b, l2_normalize_rows(enc::project(a, model::head_prefix(b), z)));
    positive.emplace(b, tape.constant(targets.at(b)));
    negatives.emplace(b, queues.at(b).rows());
  }
  LossVars<Real> out;
  std::vector<Var<Real>> intra_terms;
  for (auto b : m.config().branches.active()) {
    auto l = info_nce(query.at(b), positive.at(b), negatives.at(b), cfg.tau);
    out.components.emplace(std::string("intra.") + model::branch_short(b), l);
    intra_terms.push_back(l);
  }
  std::vector<Var<Real>> inter_terms;
  for (auto p : inter_pairs(m.config().branches)) {
    auto l = info_nce(query.at(p.first), positive.at(p.second), negatives.at(p.second), cfg.tau);
    out.components.emplace("inter." + pair_name(p), l);
    inter_terms.push_back(l);
  }
  auto mean_of = [&](const std::vector<Var<Real>>& terms) {
    if (terms.empty()) return tape.constant(Tensor<Real>::scalar(Real{0}));
    auto s = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) s = add(s, terms[i]);
    return scale(s, 1.0 / static_cast<double>(terms.size()));
  };
  out.intra = mean_of(intra_terms);
  out.inter = mean_of(inter_terms);
  out.total = add(scale(out.intra, cfg.lambda), scale(out.inter, 1.0 - cfg.lambda));
  return out;
}

template <class Real>
LossReport report_of(const LossVars<Real>& v) {
  LossReport r;
  r.intra = v.intra.value()[0];
  r.inter = v.inter.value()[0];
  r.total = v.total.value()[0];
  for (const auto& [k, var] : v.components) r.components[k] = var.value()[0];
  return r;
}

/// One optimisation step: masks, target projections, loss, backward, Adam on
/// the anchor set, EMA, then enqueue of this batch's target projections.
template <class Real>
LossReport train_step(TigrModel<Real>& m, Adam<Real>& adam, Queues<Real>& queues, const Batch& batch,
                      const TrainConfig& cfg, Rng& rng) {
  if (batch.size() < 2) throw ContractError("a training batch needs at least 2 trajectories");
  const double dropout = m.config().dropout;
  const auto plan = draw_views(m.config(), batch, cfg, rng);
  const auto targets = target_projections(m, batch, plan, dropout, &rng);
  Tape<Real> tape;
  Binder<Real> a(tape, m.anchor());
  auto vars = contrastive_loss(a, m, batch, plan, targets, queues, cfg, dropout, &rng);
  auto report = report_of(vars);
  if (!std::isfinite(report.total)) {
    throw NumericError("non-finite loss at optimizer step " + std::to_string(adam.steps() + 1) +
                       " (intra " + std::to_string(report.intra) + ", inter " + std::to_string(report.inter) + ")");
  }
  tape.backward(vars.total);
  adam.step(m.anchor());
  m.ema_update();
  for (const auto& [b, t] : targets) queues.at(b).push(t);
  return report;
}

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double mean_intra = 0.0, mean_inter = 0.0, mean_total = 0.0;
};

struct PretrainOptions {
  std::filesystem::path loss_csv;        // empty: no CSV
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  nlohmann::json checkpoint_extra = nlohmann::json::object();
  std::function<void(const EpochSummary&)> on_epoch;
};

inline std::string epoch_dir_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04zu", epoch);
  return buf;
}

/// Shuffled mini-batch epochs over `samples`. A trailing batch of one
/// trajectory is skipped. Checkpoint epoch_0000 holds the initial weights.
template <class Real>
std::vector<EpochSummary> pretrain(TigrModel<Real>& m, Adam<Real>& adam, const std::vector<model::Sample>& samples,
                                   const TrainConfig& cfg, const Rng& rng, const PretrainOptions& opt = {}) {
  cfg.validate();
  if (samples.size() < 2) throw ContractError("pretraining needs at least 2 trajectories");
  adam.set_lr(cfg.lr);
  Queues<Real> queues(m.config(), cfg.queue);
  std::ofstream csv_out;
  if (!opt.loss_csv.empty()) {
    if (opt.loss_csv.has_parent_path()) std::filesystem::create_directories(opt.loss_csv.parent_path());
    csv_out = data::csv::open_out(opt.loss_csv.string());
    csv_out << "epoch,step,intra,inter,total\n";
  }
  auto checkpoint = [&](std::size_t epoch) {
    if (!opt.checkpoint_dir.empty()) {
      model::save_checkpoint(opt.checkpoint_dir / epoch_dir_name(epoch), m, adam, epoch, opt.checkpoint_extra);
    }
  };
  checkpoint(0);

  std::vector<EpochSummary> out;
  std::vector<std::size_t> order(samples.size());
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = rng.derive(e, 0);
    shuffle_rng.shuffle(order);
    EpochSummary sum{e, 0, 0.0, 0.0, 0.0};
    for (std::size_t lo = 0; lo + 1 < order.size(); lo += cfg.batch) {
      const auto hi = std::min(order.size(), lo + cfg.batch);
      Batch batch;
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(&samples[order[i]]);
      Rng step_rng = rng.derive(e, sum.steps + 1);
      const auto r = train_step(m, adam, queues, batch, cfg, step_rng);
      ++sum.steps;
      sum.mean_intra += r.intra;
      sum.mean_inter += r.inter;
      sum.mean_total += r.total;
      if (csv_out.is_open()) {
        csv_out << e << ',' << adam.steps() << ',' << data::csv::fmt(r.intra) << ',' << data::csv::fmt(r.inter)
                << ',' << data::csv::fmt(r.total) << '\n';
      }
    }
    if (sum.steps) {
      sum.mean_intra /= static_cast<double>(sum.steps);
      sum.mean_inter /= static_cast<double>(sum.steps);
      sum.mean_total /= static_cast<double>(sum.steps);
    }
    out.push_back(sum);
    if (csv_out.is_open()) csv_out.flush();
    checkpoint(e);
    if (opt.on_epoch) opt.on_epoch(sum);
  }
  return out;
}

}  // namespace tigr::train
