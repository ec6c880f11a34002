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


#include <gtest/gtest.h>

#include <cmath>

#include "fixture.hpp"
#include "test_util.hpp"
#include "tigr/encoder/checkpoint.hpp"
#include "tigr/gradient_check.hpp"

using namespace tigr;
using namespace tigr::enc;
using tigr::testing::probe;
using tigr::testing::random_tensor;

namespace {

double rms_scale(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return 1.0 / std::sqrt(s / static_cast<double>(v.size()) + kRmsNormEps);
}

std::vector<double> vec_mat(const std::vector<double>& v, const Tensor<double>& w) {
  std::vector<double> out(w.cols(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) out[j] += v[i] * w.row(i)[j];
  return out;
}

}  // namespace

TEST(EmbedTokens, RepeatedIdsGiveIdenticalRows) {
  Rng rng(1);
  ParameterSet<double> ps;
  init_embedding(ps, "e", 5, 4, rng);
  Tape<double> tape;
  Binder<double> b(tape, ps);
  auto x = embed_tokens(b, "e", {0, 0, 3});
  EXPECT_EQ(x.value().row(0)[0], x.value().row(1)[0]);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(x.value().row(0)[j], x.value().row(1)[j]);
}

TEST(EmbedTokens, GradientCountsOccurrences) {
  Rng rng(2);
  ParameterSet<double> ps;
  init_embedding(ps, "e", 4, 3, rng);
  const std::vector<std::size_t> ids{1, 2, 1, 1};
  Tape<double> tape;
  Binder<double> b(tape, ps);
  tape.backward(sum(embed_tokens(b, "e", ids)));
  const auto& g = *ps.at("e").grad;
  const double expect[4] = {0, 3, 1, 0};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(g.row(r)[c], expect[r]);

  auto report = gradient_check<double>(
      [&](Tape<double>& t) {
        Binder<double> bb(t, ps);
        return probe(embed_tokens(bb, "e", ids), Tensor<double>({4, 3}, 0.5));
      },
      ps);
  EXPECT_LT(report.worst(), 1e-6);
}

TEST(EmbedTokens, OutOfVocabularyNamesTheId) {
  Rng rng(3);
  ParameterSet<float> ps;
  init_embedding(ps, "e", 5, 2, rng);
  Tape<float> tape;
  Binder<float> b(tape, ps);
  try {
    embed_tokens(b, "e", {1, 5});
    FAIL() << "expected IndexError";
  } catch (const IndexError& e) {
    EXPECT_NE(std::string(e.what()).find("token id 5"), std::string::npos);
  }
}

TEST(EmbedTokens, LoadsExternalTable) {
  tigr::testing::TempDir dir;
  tigr::testing::write_file(dir.file("t.txt"), "1 2\n3 4\n\n5 6\n");
  Rng rng(4);
  ParameterSet<float> ps;
  init_embedding(ps, "e", 3, 2, rng);
  load_embedding_table(ps, "e", dir.file("t.txt"));
  EXPECT_EQ(ps.at("e").value, Tensor<float>::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
  tigr::testing::write_file(dir.file("bad.txt"), "1 2\n3\n5 6\n");
  EXPECT_THROW(load_embedding_table(ps, "e", dir.file("bad.txt")), ParseError);
}

TEST(Rope, PositionZeroIsIdentity) {
  Rng rng(5);
  Tape<double> tape;
  auto x = tape.constant(random_tensor<double>({3, 8}, rng));
  auto y = rope(x, {0.0, 0.0, 0.0}, 4);
  EXPECT_EQ(y.value(), x.value());
}

TEST(Rope, PreservesPairNorms) {
  Rng rng(6);
  Tape<double> tape;
  auto x = tape.constant(random_tensor<double>({5, 8}, rng));
  auto y = rope(x, {0.0, 1.0, 7.0, 33.0, 1000.0}, 8);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t i = 0; i < 8; i += 2) {
      const double a = std::hypot(x.value().row(r)[i], x.value().row(r)[i + 1]);
      const double b = std::hypot(y.value().row(r)[i], y.value().row(r)[i + 1]);
      EXPECT_NEAR(a, b, 1e-6);
    }
  }
}

TEST(Rope, RelativePositionProperty) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tape<double> tape;
    auto q = tape.constant(random_tensor<double>({1, 16}, rng));
    auto k = tape.constant(random_tensor<double>({1, 16}, rng));
    const double m = static_cast<double>(rng.below(50)), n = static_cast<double>(rng.below(50));
    const double s = static_cast<double>(rng.below(500));
    auto dot = [&](double pm, double pn) {
      auto a = rope(q, {pm}, 16).value();
      auto b = rope(k, {pn}, 16).value();
      double d = 0.0;
      for (std::size_t i = 0; i < 16; ++i) d += a[i] * b[i];
      return d;
    };
    EXPECT_NEAR(dot(m, n), dot(m + s, n + s), 1e-4);
  }
}

TEST(Rope, OddHeadWidthRejected) {
  EncoderShape s{12, 1, 4, 4, true};  // head width 3
  EXPECT_THROW(validate(s, "x"), ConfigError);
  s.rope = false;
  EXPECT_NO_THROW(validate(s, "x"));
}

TEST(Encoder, SingleTokenMatchesDirectEvaluation) {
  // With one token the attention weight is 1 and RoPE cancels, so the layer
  // reduces to matrix-vector products.
  Rng rng(8);
  ParameterSet<double> ps;
  EncoderShape shape{8, 1, 2, 4, true};
  init_encoder(ps, "enc", shape, rng);
  for (auto& p : ps) {
    if (p.name.find("norm") != std::string::npos || p.name.find(".b") != std::string::npos) {
      for (auto& v : p.value.values()) v = rng.uniform(0.5, 1.5);
    }
  }
  auto x0 = random_tensor<double>({1, 8}, rng);
  Tape<double> tape(false);
  Binder<double> b(tape, ps);
  auto z = encoder_forward(b, "enc", shape, tape.constant(x0), layout_from_lengths({1})).value();

  auto norm = [&](std::vector<double> v, const std::string& gain) {
    const double s = rms_scale(v);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= s * ps.at(gain).value[i];
    return v;
  };
  auto affine = [&](const std::vector<double>& v, const std::string& w, const std::string& bias) {
    auto o = vec_mat(v, ps.at(w).value);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += ps.at(bias).value[i];
    return o;
  };
  std::vector<double> x(x0.values().begin(), x0.values().end());
  auto h = norm(x, "enc.layer0.attn_norm");
  auto attn = vec_mat(vec_mat(h, ps.at("enc.layer0.wv").value), ps.at("enc.layer0.wo").value);
  for (std::size_t i = 0; i < 8; ++i) x[i] += attn[i];
  auto f = affine(norm(x, "enc.layer0.ffn_norm"), "enc.layer0.w1", "enc.layer0.b1");
  for (auto& v : f) v = detail::gelu_value(v);
  f = affine(f, "enc.layer0.w2", "enc.layer0.b2");
  for (std::size_t i = 0; i < 8; ++i) x[i] += f[i];
  x = norm(x, "enc.final_norm");
  ASSERT_EQ(z.rows(), 1u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(z[i], x[i], 1e-12);
}

TEST(Encoder, GradientCheckTwoLayers) {
  Rng rng(9);
  ParameterSet<double> ps;
  EncoderShape shape{16, 2, 2, 4, true};
  init_encoder(ps, "enc", shape, rng);
  for (auto& p : ps) {
    if (p.name.find("norm") != std::string::npos) {
      for (auto& v : p.value.values()) v = rng.uniform(0.8, 1.2);
    }
  }
  ps.add("x", random_tensor<double>({10, 16}, rng));
  const auto w = random_tensor<double>({2, 16}, rng);
  const auto layout = layout_from_lengths({6, 4});
  auto report = gradient_check<double>(
      [&](Tape<double>& t) {
        Binder<double> b(t, ps);
        return probe(encoder_forward(b, "enc", shape, b("x"), layout), w);
      },
      ps);
  EXPECT_LT(report.worst(), 1e-3) << report.worst_name();
}

TEST(Encoder, DeterministicWithoutDropout) {
  Rng rng(10);
  ParameterSet<float> ps;
  EncoderShape shape{16, 2, 4, 4, true};
  init_encoder(ps, "enc", shape, rng);
  auto x = random_tensor<float>({7, 16}, rng);
  auto run = [&] {
    Tape<float> t(false);
    Binder<float> b(t, ps);
    return encoder_forward(b, "enc", shape, t.constant(x), layout_from_lengths({3, 4})).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Encoder, DropoutNeedsRngAndChangesOutput) {
  Rng rng(11);
  ParameterSet<float> ps;
  EncoderShape shape{8, 1, 2, 4, true};
  init_encoder(ps, "enc", shape, rng);
  auto x = random_tensor<float>({4, 8}, rng);
  Tape<float> t(false);
  Binder<float> b(t, ps);
  EXPECT_THROW(encoder_forward(b, "enc", shape, t.constant(x), layout_from_lengths({4}), 0.5), ContractError);
  Rng r(1);
  auto a = encoder_forward(b, "enc", shape, t.constant(x), layout_from_lengths({4})).value();
  auto d = encoder_forward(b, "enc", shape, t.constant(x), layout_from_lengths({4}), 0.5, &r).value();
  EXPECT_FALSE(a == d);
}

TEST(Encoder, EmptySequenceIsContractViolation) {
  Rng rng(12);
  ParameterSet<float> ps;
  EncoderShape shape{8, 1, 2, 4, true};
  init_encoder(ps, "enc", shape, rng);
  Tape<float> t(false);
  Binder<float> b(t, ps);
  auto x = t.constant(random_tensor<float>({3, 8}, rng));
  EXPECT_THROW(encoder_forward(b, "enc", shape, x, layout_from_lengths({3, 0})), ContractError);
}

TEST(Encoder, DuplicatedSequencesGetIdenticalEmbeddings) {
  Rng rng(13);
  ParameterSet<float> ps;
  EncoderShape shape{16, 2, 4, 4, true};
  init_encoder(ps, "enc", shape, rng);
  auto a = random_tensor<float>({5, 16}, rng);
  auto other = random_tensor<float>({3, 16}, rng);
  Tape<float> t(false);
  Binder<float> b(t, ps);
  auto solo = encoder_forward(b, "enc", shape, t.constant(a), layout_from_lengths({5})).value();
  auto packed = concat_rows<float>({t.constant(a), t.constant(other), t.constant(a)});
  auto z = encoder_forward(b, "enc", shape, packed, layout_from_lengths({5, 3, 5})).value();
  for (std::size_t j = 0; j < 16; ++j) {
    EXPECT_EQ(z.row(0)[j], z.row(2)[j]);
    EXPECT_NEAR(z.row(0)[j], solo[j], 1e-6);
  }
}

TEST(Encoder, RopeBreaksPermutationInvariance) {
  Rng rng(14);
  ParameterSet<float> ps;
  EncoderShape shape{8, 1, 2, 4, true};
  init_encoder(ps, "enc", shape, rng);
  auto tok = random_tensor<float>({2, 8}, rng);
  Tensor<float> aab({3, 8}), aba({3, 8});
  for (std::size_t j = 0; j < 8; ++j) {
    aab.row(0)[j] = aab.row(1)[j] = aba.row(0)[j] = aba.row(2)[j] = tok.row(0)[j];
    aab.row(2)[j] = aba.row(1)[j] = tok.row(1)[j];
  }
  auto run = [&](const EncoderShape& s, const Tensor<float>& x) {
    Tape<float> t(false);
    Binder<float> b(t, ps);
    return encoder_forward(b, "enc", s, t.constant(x), layout_from_lengths({3})).value();
  };
  auto no_rope = shape;
  no_rope.rope = false;
  const auto p = run(no_rope, aab), q = run(no_rope, aba);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(p[j], q[j], 1e-6);
  const auto r = run(shape, aab), s = run(shape, aba);
  double diff = 0.0;
  for (std::size_t j = 0; j < 8; ++j) diff = std::max(diff, std::abs(double(r[j]) - s[j]));
  EXPECT_GT(diff, 1e-4);
}

TEST(ProjectionHead, ZeroWeightsGiveZero) {
  Rng rng(15);
  ParameterSet<float> ps;
  init_head(ps, "h", 8, 4, rng);
  for (auto& p : ps) p.value.fill(0.0f);
  Tape<float> t(false);
  Binder<float> b(t, ps);
  auto y = project(b, "h", t.constant(random_tensor<float>({3, 8}, rng))).value();
  EXPECT_EQ(y, Tensor<float>({3, 4}));
}

TEST(ProjectionHead, GradientCheck) {
  Rng rng(16);
  ParameterSet<double> ps;
  init_head(ps, "h", 6, 6, rng);
  for (auto& p : ps)
    if (p.name.find(".b") != std::string::npos) p.value = random_tensor<double>(p.value.shape(), rng, 0.3);
  ps.add("z", random_tensor<double>({3, 6}, rng));
  const auto w = random_tensor<double>({3, 6}, rng);
  auto report = gradient_check<double>(
      [&](Tape<double>& t) {
        Binder<double> b(t, ps);
        return probe(project(b, "h", b("z")), w);
      },
      ps);
  EXPECT_LT(report.worst(), 1e-3) << report.worst_name();
}

TEST(Ema, EndpointsAreBitExact) {
  Rng rng(17);
  ParameterSet<float> anchor, target;
  init_head(anchor, "h", 4, 4, rng);
  clone_frozen(anchor, target, "h.");
  for (auto& p : anchor) p.value = random_tensor<float>(p.value.shape(), rng);
  std::vector<Tensor<float>> before;
  for (const auto& p : target) before.push_back(p.value);

  ema_update(target, anchor, 1.0);
  std::size_t i = 0;
  for (const auto& p : target) EXPECT_EQ(p.value, before[i++]);

  ema_update(target, anchor, 0.0);
  for (const auto& p : target) EXPECT_EQ(p.value, anchor.at(p.name).value);
}

TEST(Ema, HalfwayAverage) {
  ParameterSet<float> anchor, target;
  anchor.add("w", Tensor<float>({3}, 1.0f));
  target.add("w", Tensor<float>({3}, 0.0f), false);
  ema_update(target, anchor, 0.5);
  EXPECT_EQ(target.at("w").value, Tensor<float>({3}, 0.5f));
  EXPECT_THROW(ema_update(target, anchor, 1.5), ConfigError);
}

TEST(Ema, TargetHasNoGradientSlot) {
  Rng rng(18);
  ParameterSet<float> anchor, target;
  init_encoder(anchor, "enc", EncoderShape{8, 1, 2, 4, true}, rng);
  clone_frozen(anchor, target, "enc.");
  EXPECT_EQ(target.size(), anchor.size());
  for (const auto& p : target) EXPECT_FALSE(p.trainable());
}

// Model-level tests on the small synthetic dataset.

using tigr::model::Branch;
using tigr::model::TigrModel;

TEST(Model, DefaultEmbeddingWidth) {
  auto c = tigr::testing::small_dataset().base_config();
  EXPECT_EQ(c.embedding_dim(), 512u);
  EXPECT_EQ(c.d_proj(), 128u);
  c.branches = model::BranchSet::parse("g");
  EXPECT_EQ(c.embedding_dim(), 256u);
  EXPECT_EQ(c.branches.describe(), "g");
  EXPECT_EQ(model::BranchSet::parse("r+st").describe(), "r+st");
  EXPECT_THROW(model::BranchSet::parse("g+x"), ConfigError);
}

TEST(Model, EmbeddingIsDeterministicAndSkipsProjection) {
  const auto& ds = tigr::testing::small_dataset();
  Rng rng(19);
  TigrModel<float> m(tigr::testing::tiny_config(), rng);
  m.set_traffic(ds.features<float>());
  const auto calls = projection_calls().load();
  auto a = m.embed(ds.test);
  auto b = m.embed(ds.test);
  EXPECT_EQ(projection_calls().load(), calls);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.rows(), ds.test.size());
  EXPECT_EQ(a.cols(), 48u);
  EXPECT_TRUE(a.all_finite());
}

TEST(Model, BatchCompositionDoesNotLeak) {
  const auto& ds = tigr::testing::small_dataset();
  Rng rng(20);
  TigrModel<float> m(tigr::testing::tiny_config(), rng);
  m.set_traffic(ds.features<float>());
  const auto& s0 = ds.train[0];
  auto solo = m.embed(model::Batch{&s0});
  auto mixed = m.embed(model::Batch{&s0, &ds.train[1], &s0});
  for (std::size_t j = 0; j < solo.cols(); ++j) {
    EXPECT_EQ(mixed.row(0)[j], mixed.row(2)[j]);
    EXPECT_NEAR(mixed.row(0)[j], solo[j], 1e-6);
  }
}

TEST(Model, RoadTimesOnlyMoveTheSpatioTemporalBlock) {
  const auto& ds = tigr::testing::small_dataset();
  Rng rng(21);
  auto cfg = tigr::testing::tiny_config();
  TigrModel<float> m(cfg, rng);
  m.set_traffic(ds.features<float>());
  auto s = ds.train[0];
  auto shifted = s;
  for (auto& t : shifted.road) t.t += 5 * 3600;
  auto a = m.embed(model::Batch{&s});
  auto b = m.embed(model::Batch{&shifted});
  const std::size_t fixed = cfg.d_g + cfg.d_r;
  for (std::size_t j = 0; j < fixed; ++j) EXPECT_EQ(a[j], b[j]);
  double diff = 0.0;
  for (std::size_t j = fixed; j < a.cols(); ++j) diff = std::max(diff, std::abs(double(a[j]) - b[j]));
  EXPECT_GT(diff, 0.0);
}

TEST(Model, BranchSubsetControlsParameters) {
  Rng rng(22);
  auto cfg = tigr::testing::tiny_config();
  cfg.branches = model::BranchSet::parse("g");
  TigrModel<float> m(cfg, rng);
  for (const auto& p : m.anchor()) EXPECT_EQ(p.name.rfind("grid.", 0), 0u) << p.name;
  EXPECT_EQ(m.embed(tigr::testing::small_dataset().test).cols(), 16u);
}

TEST(Model, TargetUntouchedByBackward) {
  const auto& ds = tigr::testing::small_dataset();
  Rng rng(23);
  TigrModel<float> m(tigr::testing::tiny_config(), rng);
  m.set_traffic(ds.features<float>());
  std::vector<Tensor<float>> before;
  for (const auto& p : m.target()) before.push_back(p.value);
  auto batch = tigr::testing::batch_of(ds.train, 4);
  Tape<float> tape;
  Binder<float> a(tape, m.anchor()), t(tape, m.target());
  auto z = m.encode_branch(a, t, Branch::kRoad, batch);
  auto za = m.encode_branch(a, a, Branch::kRoad, batch);
  tape.backward(sum(add(project(a, "road.head", za), project(t, "road.head", z))));
  std::size_t i = 0;
  for (const auto& p : m.target()) {
    EXPECT_EQ(p.value, before[i++]);
    EXPECT_FALSE(p.grad.has_value());
  }
}

TEST(Model, MaskedEncodingUsesKeptRows) {
  const auto& ds = tigr::testing::small_dataset();
  Rng rng(24);
  TigrModel<float> m(tigr::testing::tiny_config(), rng);
  m.set_traffic(ds.features<float>());
  const auto& s = ds.train[0];
  model::Sample cut{s.id, s.grid, {s.road.begin() + 2, s.road.end()}};
  std::vector<std::size_t> keep;
  for (std::size_t i = 2; i < s.road.size(); ++i) keep.push_back(i);
  model::KeepLists lists{keep};
  Tape<float> tape(false);
  Binder<float> b(tape, m.anchor());
  auto masked = m.encode_branch(b, b, Branch::kRoad, model::Batch{&s}, &lists).value();
  auto direct = m.encode_branch(b, b, Branch::kRoad, model::Batch{&cut}).value();
  for (std::size_t j = 0; j < masked.cols(); ++j) EXPECT_NEAR(masked[j], direct[j], 1e-6);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto& ds = tigr::testing::small_dataset();
  Rng rng(25);
  TigrModel<float> m(tigr::testing::tiny_config(), rng);
  m.set_traffic(ds.features<float>());
  Adam<float> adam;
  // one optimizer step so moments exist
  {
    Tape<float> tape;
    Binder<float> b(tape, m.anchor());
    tape.backward(sum(m.encode_branch(b, b, Branch::kGrid, tigr::testing::batch_of(ds.train, 3))));
    adam.step(m.anchor());
  }
  m.ema_update();
  tigr::testing::TempDir dir;
  save_checkpoint(dir.path() / "ck", m, adam, 3, {{"note", "x"}});
  auto ck = model::load_checkpoint<float>(dir.path() / "ck");
  ck.model->set_traffic(ds.features<float>());
  EXPECT_EQ(ck.epoch, 3u);
  EXPECT_EQ(ck.extra.at("note"), "x");
  EXPECT_EQ(ck.adam.steps(), 1u);
  for (const auto& p : m.anchor()) EXPECT_EQ(ck.model->anchor().at(p.name).value, p.value) << p.name;
  for (const auto& p : m.target()) EXPECT_EQ(ck.model->target().at(p.name).value, p.value) << p.name;
  ASSERT_EQ(ck.adam.moments().size(), adam.moments().size());
  for (const auto& [name, mom] : adam.moments()) {
    EXPECT_EQ(ck.adam.moments().at(name).m, mom.m);
    EXPECT_EQ(ck.adam.moments().at(name).v, mom.v);
  }
  EXPECT_EQ(ck.model->embed(ds.test), m.embed(ds.test));
}

TEST(Checkpoint, RejectsCorruptBlob) {
  Rng rng(26);
  TigrModel<float> m(tigr::testing::tiny_config(), rng);
  tigr::testing::TempDir dir;
  save_checkpoint(dir.path(), m, Adam<float>{});
  std::filesystem::resize_file(dir.path() / "params.bin", 16);
  EXPECT_THROW(model::load_checkpoint<float>(dir.path()), ParseError);
  EXPECT_THROW(model::load_checkpoint<float>(dir.path() / "missing"), ParseError);
}
