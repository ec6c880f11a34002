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

#include "test_util.hpp"
#include "tigr/adam.hpp"
#include "tigr/gradient_check.hpp"
#include "tigr/ops.hpp"

using namespace tigr;
using tigr::testing::probe;
using tigr::testing::random_tensor;

namespace {

Tensor<float> eval_matmul(const Tensor<float>& a, const Tensor<float>& b) {
  Tape<float> t(false);
  return matmul(t.constant(a), t.constant(b)).value();
}

}  // namespace

TEST(Matmul, IdentityReturnsOperand) {
  Rng rng(1);
  auto b = random_tensor<float>({3, 4}, rng);
  auto eye = Tensor<float>::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(eval_matmul(eye, b), b);
}

TEST(Matmul, HandArithmetic) {
  auto out = eval_matmul(Tensor<float>::matrix(2, 2, {1, 2, 3, 4}), Tensor<float>::matrix(2, 1, {1, 1}));
  EXPECT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_FLOAT_EQ(out[0], 3.0f);
  EXPECT_FLOAT_EQ(out[1], 7.0f);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(2);
  for (std::size_t m : {5, 1, 9}) {
    auto a = random_tensor<float>({m, 7}, rng);
    auto b = random_tensor<float>({7, 3}, rng);
    auto out = eval_matmul(a, b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double s = 0;
        for (std::size_t p = 0; p < 7; ++p) s += double(a(i, p)) * b(p, j);
        EXPECT_NEAR(out(i, j), s, 1e-6);
      }
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape<float> t;
  auto a = t.constant(Tensor<float>({2, 3}));
  auto b = t.constant(Tensor<float>({4, 2}));
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4x2]"), std::string::npos);
  }
}

TEST(Softmax, UniformRow) {
  Tape<float> t(false);
  auto y = softmax_rows(t.constant(Tensor<float>::matrix(1, 3, {0, 0, 0}))).value();
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 1.0 / 3.0, 1e-7);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  Tape<float> t(false);
  auto y = softmax_rows(t.constant(Tensor<float>::matrix(1, 2, {1000, 0}))).value();
  EXPECT_TRUE(y.all_finite());
  EXPECT_NEAR(y[0], 1.0, 1e-7);
  EXPECT_NEAR(y[1], 0.0, 1e-7);
}

TEST(Softmax, MatchesDirectExpSum) {
  // direct evaluation: exp(k) / (e + e^2 + e^3)
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  const double expect[3] = {std::exp(1.0) / z, std::exp(2.0) / z, std::exp(3.0) / z};
  EXPECT_NEAR(expect[0], 0.09003, 1e-4);
  EXPECT_NEAR(expect[1], 0.24473, 1e-4);
  EXPECT_NEAR(expect[2], 0.66524, 1e-4);
  Tape<float> t(false);
  auto y = softmax_rows(t.constant(Tensor<float>::matrix(1, 3, {1, 2, 3}))).value();
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], expect[i], 1e-6);
}

TEST(Softmax, RowsSumToOneProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(6), d = 1 + rng.below(40);
    auto x = random_tensor<float>({n, d}, rng, 1.0 + 50.0 * rng.uniform());
    Tape<float> t(false);
    auto y = softmax_rows(t.constant(x)).value();
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0;
      for (auto v : y.row(r)) {
        EXPECT_GE(v, 0.0f);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(RmsNorm, ConstantVectorBecomesOnes) {
  Tape<float> t(false);
  auto y = rmsnorm(t.constant(Tensor<float>::vector({2, 2, 2, 2})), t.constant(Tensor<float>({4}, 1.0f))).value();
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(y[i], 1.0, 1e-6);
}

TEST(RmsNorm, DirectFormula) {
  const double s = 1.0 / std::sqrt(12.5 + 1e-6);
  EXPECT_NEAR(3 * s, 0.8485, 1e-4);
  EXPECT_NEAR(4 * s, 1.1314, 1e-4);
  Tape<float> t(false);
  auto x = t.constant(Tensor<float>::vector({3, 4}));
  auto y1 = rmsnorm(x, t.constant(Tensor<float>({2}, 1.0f))).value();
  auto y2 = rmsnorm(x, t.constant(Tensor<float>({2}, 2.0f))).value();
  EXPECT_NEAR(y1[0], 3 * s, 1e-6);
  EXPECT_NEAR(y1[1], 4 * s, 1e-6);
  EXPECT_FLOAT_EQ(y2[0], 2 * y1[0]);
  EXPECT_FLOAT_EQ(y2[1], 2 * y1[1]);
}

TEST(RmsNorm, ZeroVectorStaysFinite) {
  Tape<float> t(false);
  auto y = rmsnorm(t.constant(Tensor<float>({1, 8})), t.constant(Tensor<float>({8}, 1.0f))).value();
  EXPECT_TRUE(y.all_finite());
}

TEST(RmsNorm, ScaleInvarianceAndUnitRmsProperty) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    // invariance is exact up to the eps term, so keep mean(x^2) * c^2 >> eps
    const std::size_t d = 1 + rng.below(64);
    auto x = random_tensor<float>({3, d}, rng);
    for (auto& v : x.values()) v = v >= 0 ? v + 0.5f : v - 0.5f;
    const double c = std::exp(rng.uniform(-1.0, 3.0));
    Tensor<float> xc = x;
    for (auto& v : xc.values()) v = static_cast<float>(v * c);
    Tape<float> t(false);
    auto g = t.constant(Tensor<float>({d}, 1.0f));
    auto y = rmsnorm(t.constant(x), g).value();
    auto yc = rmsnorm(t.constant(xc), g).value();
    EXPECT_LT(max_abs_diff(y, yc), 1e-5);
    for (std::size_t r = 0; r < 3; ++r) {
      double ms = 0;
      for (auto v : y.row(r)) ms += double(v) * v;
      EXPECT_NEAR(std::sqrt(ms / d), 1.0, 1e-5);
    }
  }
}

TEST(Adam, ZeroGradientLeavesValueUnchanged) {
  ParameterSet<float> ps;
  auto& p = ps.add("w", Tensor<float>::vector({1.5f, -2.0f}));
  Adam<float> opt;
  opt.step(ps);
  EXPECT_EQ(p.value, Tensor<float>::vector({1.5f, -2.0f}));
  EXPECT_EQ(opt.moments().at("w").m, Tensor<float>({2}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // step 1 with constant g: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
  ParameterSet<float> ps;
  auto& p = ps.add("x", Tensor<float>::scalar(0.5f));
  Adam<float> opt(AdamConfig{.lr = 1e-3});
  (*p.grad)[0] = 1.0f;
  opt.step(ps);
  EXPECT_NEAR(0.5 - p.value[0], 1e-3 / (1.0 + 1e-8), 1e-7);
  EXPECT_EQ((*p.grad)[0], 0.0f);
}

TEST(Adam, IdenticalInputsGiveIdenticalUpdates) {
  ParameterSet<float> a, b;
  Rng rng(5);
  auto init = random_tensor<float>({4, 3}, rng);
  auto grad = random_tensor<float>({4, 3}, rng);
  auto& pa = a.add("w", init);
  auto& pb = b.add("w", init);
  Adam<float> oa, ob;
  for (int s = 0; s < 3; ++s) {
    *pa.grad = grad;
    *pb.grad = grad;
    oa.step(a);
    ob.step(b);
  }
  EXPECT_EQ(pa.value, pb.value);
}

TEST(Adam, NonFiniteGradientAbortsAndNamesParameter) {
  ParameterSet<float> ps;
  auto& ok = ps.add("ok", Tensor<float>::scalar(1.0f));
  auto& bad = ps.add("layer.bad", Tensor<float>::scalar(1.0f));
  (*ok.grad)[0] = 1.0f;
  (*bad.grad)[0] = std::nanf("");
  Adam<float> opt;
  try {
    opt.step(ps);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.bad"), std::string::npos);
  }
  EXPECT_EQ(ok.value[0], 1.0f);
  EXPECT_EQ(opt.steps(), 0u);
}

TEST(GradientCheck, SquareAtThree) {
  ParameterSet<double> ps;
  auto& x = ps.add("x", Tensor<double>::scalar(3.0));
  auto report = gradient_check<double>([&](Tape<double>& t) {
    auto v = t.parameter(x);
    return mul(v, v);
  }, ps);
  EXPECT_LT(report.max_relative_error.at("x"), 1e-3);
}

TEST(GradientCheck, SquareAtThreeSinglePrecision) {
  ParameterSet<float> ps;
  auto& x = ps.add("x", Tensor<float>::scalar(3.0f));
  auto report = gradient_check<float>([&](Tape<float>& t) {
    auto v = t.parameter(x);
    return mul(v, v);
  }, ps);
  EXPECT_LT(report.max_relative_error.at("x"), 1e-3);
}

TEST(GradientCheck, ConstantLossHasZeroError) {
  ParameterSet<double> ps;
  auto& x = ps.add("x", Tensor<double>::vector({1.0, 2.0}));
  auto report = gradient_check<double>([&](Tape<double>& t) {
    t.parameter(x);
    return t.constant(Tensor<double>::scalar(4.0));
  }, ps);
  EXPECT_EQ(report.max_relative_error.at("x"), 0.0);
}

TEST(GradientCheck, DetectsNondeterministicLoss) {
  ParameterSet<double> ps;
  auto& x = ps.add("x", Tensor<double>::scalar(1.0));
  int calls = 0;
  EXPECT_THROW(gradient_check<double>([&](Tape<double>& t) {
                 auto v = t.parameter(x);
                 return scale(v, 1.0 + 0.1 * (calls++));
               }, ps),
               NumericError);
}

// Every op with a backward rule, probed with a random linear functional.
template <class Real>
class OpGradients : public ::testing::Test {};

// float32 central differences at h = 1e-3 sit at the rounding-noise floor
// (errors of 1e-2..1e-1 on small entries), so the 1e-3 bound is asserted on
// the double instantiation of the same code.
using Precisions = ::testing::Types<double>;
TYPED_TEST_SUITE(OpGradients, Precisions);

template <class Real, class Build>
GradCheckReport check_op(std::vector<std::pair<std::string, Tensor<Real>>> inputs, Build build,
                         std::uint64_t seed) {
  ParameterSet<Real> ps;
  std::vector<Parameter<Real>*> params;
  for (auto& [name, value] : inputs) params.push_back(&ps.add(name, value));
  Tensor<Real> weights;
  auto loss = [&](Tape<Real>& t) {
    std::vector<Var<Real>> vars;
    for (auto* p : params) vars.push_back(t.parameter(*p));
    auto out = build(vars);
    if (weights.empty()) {
      Rng rng(seed);
      weights = Tensor<Real>::normal(out.shape(), 1.0, rng);
    }
    return probe(out, weights);
  };
  return gradient_check<Real>(loss, ps);
}

TYPED_TEST(OpGradients, AllOps) {
  using Real = TypeParam;
  Rng rng(11);
  auto rt = [&](Shape s, double sd = 1.0) { return Tensor<Real>::normal(std::move(s), sd, rng); };
  const Segments segs{{0, 3}, {3, 4}};
  std::map<std::string, double> worst;
  worst["matmul"] = check_op<Real>({{"a", rt({3, 4})}, {"b", rt({4, 2})}},
                                   [](auto& v) { return matmul(v[0], v[1]); }, 1).worst();
  worst["add_bias"] = check_op<Real>({{"x", rt({3, 4})}, {"b", rt({4})}},
                                     [](auto& v) { return add_bias(v[0], v[1]); }, 2).worst();
  worst["gelu"] = check_op<Real>({{"x", rt({3, 5})}}, [](auto& v) { return gelu(v[0]); }, 3).worst();
  worst["rmsnorm"] = check_op<Real>({{"x", rt({3, 5})}, {"g", rt({5})}},
                                    [](auto& v) { return rmsnorm(v[0], v[1]); }, 4).worst();
  worst["softmax"] = check_op<Real>({{"x", rt({3, 5})}}, [](auto& v) { return softmax_rows(v[0]); }, 5).worst();
  worst["gather"] = check_op<Real>({{"x", rt({4, 3})}},
                                   [](auto& v) { return gather_rows(v[0], {0, 2, 2, 3}); }, 6).worst();
  worst["concat"] = check_op<Real>({{"a", rt({2, 3})}, {"b", rt({2, 2})}}, [](auto& v) {
                      return concat_rows<Real>({concat_cols(v[0], v[1]), concat_cols(v[1], v[0])});
                    }, 7).worst();
  worst["rope"] = check_op<Real>({{"x", rt({3, 8})}},
                                 [](auto& v) { return rope(v[0], {0.0, 1.0, 5.0}, 4); }, 8).worst();
  worst["attention"] = check_op<Real>({{"q", rt({7, 4})}, {"k", rt({7, 4})}, {"v", rt({7, 6})}},
                                      [&](auto& v) { return segment_attention(v[0], v[1], v[2], segs, 2, 0.5); },
                                      9).worst();
  worst["segment_mean"] = check_op<Real>({{"x", rt({7, 3})}},
                                         [&](auto& v) { return segment_mean(v[0], segs); }, 10).worst();
  worst["l2norm"] = check_op<Real>({{"x", rt({3, 4})}}, [](auto& v) { return l2_normalize_rows(v[0]); }, 11).worst();
  worst["time_embedding"] = check_op<Real>({{"w", rt({4}, 5.0)}, {"phi", rt({4})}}, [](auto& v) {
                              return time_embedding({0.5, 30.0, 100.0}, v[0], v[1]);
                            }, 12).worst();
  worst["info_nce"] = check_op<Real>({{"q", rt({3, 4})}, {"p", rt({3, 4})}}, [&](auto& v) {
                        Rng r2(99);
                        auto neg = Tensor<Real>::normal({5, 4}, 0.5, r2);
                        return info_nce(l2_normalize_rows(v[0]), l2_normalize_rows(v[1]), neg, 0.5);
                      }, 13).worst();
  worst["mse"] = check_op<Real>({{"x", rt({4, 1})}}, [](auto& v) { return mse_loss(v[0], {0.1, 0.2, -1.0, 3.0}); },
                                14).worst();
  worst["cross_entropy"] = check_op<Real>({{"x", rt({3, 5})}},
                                          [](auto& v) { return cross_entropy(v[0], {0, 4, 2}); }, 15).worst();
  for (const auto& [op, err] : worst) {
    EXPECT_LT(err, 1e-3) << op;
  }
}
