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
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "tigr/autograd.hpp"

// Differentiable tensor operations on a Tape. Every reduction (matmul inner
// products, softmax normalizers, means, norms) accumulates in double and is
// rounded to Real once, in a fixed loop order, so results are bit-reproducible.

namespace tigr {

namespace kernels {

/// C (+)= A[m x k] * B[k x n], row-major, double accumulators.
template <class Real>
void gemm(const Real* A, const Real* B, Real* C, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  std::vector<double> acc(4 * n);
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* a0 = acc.data();
    double* a1 = a0 + n;
    double* a2 = a1 + n;
    double* a3 = a2 + n;
    std::fill(acc.begin(), acc.end(), 0.0);
    const Real* r0 = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double x0 = r0[p], x1 = r0[k + p], x2 = r0[2 * k + p], x3 = r0[3 * k + p];
      const Real* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double bj = b[j];
        a0[j] += x0 * bj;
        a1[j] += x1 * bj;
        a2[j] += x2 * bj;
        a3[j] += x3 * bj;
      }
    }
    for (std::size_t r = 0; r < 4; ++r) {
      Real* c = C + (i + r) * n;
      const double* a = acc.data() + r * n;
      if (accumulate) {
        for (std::size_t j = 0; j < n; ++j) c[j] = static_cast<Real>(c[j] + a[j]);
      } else {
        for (std::size_t j = 0; j < n; ++j) c[j] = static_cast<Real>(a[j]);
      }
    }
  }
  for (; i < m; ++i) {
    double* a0 = acc.data();
    std::fill(a0, a0 + n, 0.0);
    const Real* r0 = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double x0 = r0[p];
      const Real* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) a0[j] += x0 * static_cast<double>(b[j]);
    }
    Real* c = C + i * n;
    if (accumulate) {
      for (std::size_t j = 0; j < n; ++j) c[j] = static_cast<Real>(c[j] + a0[j]);
    } else {
      for (std::size_t j = 0; j < n; ++j) c[j] = static_cast<Real>(a0[j]);
    }
  }
}

template <class Real>
std::vector<Real> transpose(const Real* X, std::size_t rows, std::size_t cols) {
  std::vector<Real> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = X[r * cols + c];
  return t;
}

/// D[k x n] += A[m x k]^T * G[m x n].
template <class Real>
void gemm_tn_accumulate(const Real* A, const Real* G, Real* D, std::size_t m, std::size_t k,
                        std::size_t n) {
  std::vector<double> acc(k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const Real* a = A + i * k;
    const Real* g = G + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double ap = a[p];
      double* row = acc.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += ap * static_cast<double>(g[j]);
    }
  }
  for (std::size_t x = 0; x < k * n; ++x) D[x] = static_cast<Real>(D[x] + acc[x]);
}

template <class Real>
double dot(const Real* a, const Real* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

}  // namespace kernels

namespace detail {

template <class Real>
void require_matrix(const Tensor<Real>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

template <class Real>
bool any_grad(std::initializer_list<Var<Real>> vars) {
  for (const auto& v : vars)
    if (v.requires_grad()) return true;
  return false;
}

inline double gelu_value(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_derivative(double x) {
  constexpr double c = 0.7978845608028654;
  const double u = c * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace detail

/// a[m x k] * b[k x n].
template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  detail::require_matrix(A, "matmul");
  detail::require_matrix(B, "matmul");
  const std::size_t m = A.shape()[0], k = A.shape()[1], n = B.shape()[1];
  if (B.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(A.shape()) + " x " +
                         shape_string(B.shape()));
  }
  Tensor<Real> out({m, n});
  kernels::gemm(A.data(), B.data(), out.data(), m, k, n, false);
  return a.tape().record(std::move(out), detail::any_grad({a, b}),
                         [a, b, m, k, n](Tape<Real>& t, const Tensor<Real>& g) {
                           if (a.requires_grad()) {
                             auto bt = kernels::transpose(t.value(b.id()).data(), k, n);
                             kernels::gemm(g.data(), bt.data(), t.grad(a.id()).data(), m, n, k, true);
                           }
                           if (b.requires_grad()) {
                             kernels::gemm_tn_accumulate(t.value(a.id()).data(), g.data(),
                                                         t.grad(b.id()).data(), m, k, n);
                           }
                         });
}

template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  a.value().require_same_shape(b.value(), "add");
  Tensor<Real> out = a.value();
  out += b.value();
  return a.tape().record(std::move(out), detail::any_grad({a, b}),
                         [a, b](Tape<Real>& t, const Tensor<Real>& g) {
                           if (a.requires_grad()) t.grad(a.id()) += g;
                           if (b.requires_grad()) t.grad(b.id()) += g;
                         });
}

template <class Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  a.value().require_same_shape(b.value(), "sub");
  Tensor<Real> out = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return a.tape().record(std::move(out), detail::any_grad({a, b}),
                         [a, b](Tape<Real>& t, const Tensor<Real>& g) {
                           if (a.requires_grad()) t.grad(a.id()) += g;
                           if (b.requires_grad()) {
                             auto& gb = t.grad(b.id());
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                           }
                         });
}

template <class Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  a.value().require_same_shape(b.value(), "mul");
  Tensor<Real> out = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return a.tape().record(std::move(out), detail::any_grad({a, b}),
                         [a, b](Tape<Real>& t, const Tensor<Real>& g) {
                           const auto& A = t.value(a.id());
                           const auto& B = t.value(b.id());
                           if (a.requires_grad()) {
                             auto& ga = t.grad(a.id());
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
                           }
                           if (b.requires_grad()) {
                             auto& gb = t.grad(b.id());
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
                           }
                         });
}

template <class Real>
Var<Real> scale(Var<Real> a, double c) {
  Tensor<Real> out = a.value();
  for (auto& x : out.values()) x = static_cast<Real>(x * c);
  return a.tape().record(std::move(out), a.requires_grad(),
                         [a, c](Tape<Real>& t, const Tensor<Real>& g) {
                           auto& ga = t.grad(a.id());
                           for (std::size_t i = 0; i < g.size(); ++i)
                             ga[i] = static_cast<Real>(ga[i] + c * g[i]);
                         });
}

/// x[N x d] + b[d] broadcast over rows.
template <class Real>
Var<Real> add_bias(Var<Real> x, Var<Real> b) {
  const auto& X = x.value();
  const auto& B = b.value();
  const std::size_t d = X.cols();
  if (B.size() != d) {
    throw DimensionError("add_bias: bias " + shape_string(B.shape()) + " vs input " +
                         shape_string(X.shape()));
  }
  Tensor<Real> out = X;
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) out(r, c) += B[c];
  return x.tape().record(std::move(out), detail::any_grad({x, b}),
                         [x, b, d](Tape<Real>& t, const Tensor<Real>& g) {
                           if (x.requires_grad()) t.grad(x.id()) += g;
                           if (b.requires_grad()) {
                             std::vector<double> acc(d, 0.0);
                             const std::size_t n = g.size() / d;
                             for (std::size_t r = 0; r < n; ++r)
                               for (std::size_t c = 0; c < d; ++c) acc[c] += g[r * d + c];
                             auto& gb = t.grad(b.id());
                             for (std::size_t c = 0; c < d; ++c)
                               gb[c] = static_cast<Real>(gb[c] + acc[c]);
                           }
                         });
}

/// x W (+ b).
template <class Real>
Var<Real> linear(Var<Real> x, Var<Real> w, const Var<Real>* b = nullptr) {
  auto y = matmul(x, w);
  return b ? add_bias(y, *b) : y;
}

/// Tanh-approximated GELU, the nonlinearity used throughout the model.
template <class Real>
Var<Real> gelu(Var<Real> x) {
  Tensor<Real> out = x.value();
  for (auto& v : out.values()) v = static_cast<Real>(detail::gelu_value(v));
  return x.tape().record(std::move(out), x.requires_grad(),
                         [x](Tape<Real>& t, const Tensor<Real>& g) {
                           const auto& X = t.value(x.id());
                           auto& gx = t.grad(x.id());
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gx[i] = static_cast<Real>(gx[i] + g[i] * detail::gelu_derivative(X[i]));
                         });
}

inline constexpr double kRmsNormEps = 1e-6;

/// Row-wise RMS normalisation over the last axis: x / sqrt(mean(x^2) + eps) * gain.
template <class Real>
Var<Real> rmsnorm(Var<Real> x, Var<Real> gain, double eps = kRmsNormEps) {
  const auto& X = x.value();
  const auto& G = gain.value();
  const std::size_t d = X.rank() == 1 ? X.size() : X.cols();
  if (d == 0 || G.size() != d) {
    throw DimensionError("rmsnorm: gain " + shape_string(G.shape()) + " vs input " +
                         shape_string(X.shape()));
  }
  const std::size_t n = X.size() / d;
  auto inv = std::make_shared<std::vector<double>>(n);
  Tensor<Real> out(X.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const Real* xr = X.data() + r * d;
    const double ms = kernels::dot(xr, xr, d) / static_cast<double>(d);
    const double s = 1.0 / std::sqrt(ms + eps);
    (*inv)[r] = s;
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = static_cast<Real>(xr[c] * s * G[c]);
  }
  return x.tape().record(
      std::move(out), detail::any_grad({x, gain}),
      [x, gain, inv, n, d](Tape<Real>& t, const Tensor<Real>& g) {
        const auto& X = t.value(x.id());
        const auto& G = t.value(gain.id());
        std::vector<double> dgain(d, 0.0);
        Tensor<Real>* gx = x.requires_grad() ? &t.grad(x.id()) : nullptr;
        for (std::size_t r = 0; r < n; ++r) {
          const Real* xr = X.data() + r * d;
          const Real* gr = g.data() + r * d;
          const double s = (*inv)[r];
          double proj = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            proj += static_cast<double>(gr[c]) * G[c] * xr[c];
            dgain[c] += static_cast<double>(gr[c]) * xr[c] * s;
          }
          if (gx) {
            const double k = s * s * s * proj / static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c) {
              auto& v = (*gx)[r * d + c];
              v = static_cast<Real>(v + gr[c] * G[c] * s - xr[c] * k);
            }
          }
        }
        if (gain.requires_grad()) {
          auto& gg = t.grad(gain.id());
          for (std::size_t c = 0; c < d; ++c) gg[c] = static_cast<Real>(gg[c] + dgain[c]);
        }
      });
}

/// Row-wise softmax, stabilised by subtracting each row's maximum.
template <class Real>
Var<Real> softmax_rows(Var<Real> x) {
  const auto& X = x.value();
  detail::require_matrix(X, "softmax_rows");
  const std::size_t n = X.rows(), d = X.cols();
  Tensor<Real> out(X.shape());
  std::vector<double> e(d);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = X.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      e[c] = std::exp(static_cast<double>(row[c]) - mx);
      sum += e[c];
    }
    for (std::size_t c = 0; c < d; ++c) out(r, c) = static_cast<Real>(e[c] / sum);
  }
  auto y = std::make_shared<Tensor<Real>>(out);
  return x.tape().record(std::move(out), x.requires_grad(),
                         [x, y, n, d](Tape<Real>& t, const Tensor<Real>& g) {
                           auto& gx = t.grad(x.id());
                           for (std::size_t r = 0; r < n; ++r) {
                             const double s = kernels::dot(y->data() + r * d, g.data() + r * d, d);
                             for (std::size_t c = 0; c < d; ++c) {
                               const double yc = (*y)(r, c);
                               gx(r, c) = static_cast<Real>(gx(r, c) + yc * (g(r, c) - s));
                             }
                           }
                         });
}

/// Selects rows of x; the backward pass scatter-adds. Used for embedding
/// lookups and for masking (dropping) tokens.
template <class Real>
Var<Real> gather_rows(Var<Real> x, std::vector<std::size_t> indices) {
  const auto& X = x.value();
  const std::size_t n = X.rows(), d = X.cols();
  for (auto i : indices) {
    if (i >= n) {
      throw IndexError("row id " + std::to_string(i) + " out of range for " + std::to_string(n) +
                       " rows");
    }
  }
  Tensor<Real> out({indices.size(), d});
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(X.data() + indices[r] * d, d, out.data() + r * d);
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(indices));
  return x.tape().record(std::move(out), x.requires_grad(),
                         [x, idx, d](Tape<Real>& t, const Tensor<Real>& g) {
                           auto& gx = t.grad(x.id());
                           for (std::size_t r = 0; r < idx->size(); ++r) {
                             Real* dst = gx.data() + (*idx)[r] * d;
                             const Real* src = g.data() + r * d;
                             for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                           }
                         });
}

/// Stacks matrices with equal column counts along the row axis.
template <class Real>
Var<Real> concat_rows(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t d = parts[0].value().cols();
  std::size_t n = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.value().cols() != d) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
    n += p.value().rows();
    rg = rg || p.requires_grad();
  }
  Tensor<Real> out({n, d});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + off * d);
    off += p.value().rows();
  }
  return parts[0].tape().record(std::move(out), rg,
                                [parts, d](Tape<Real>& t, const Tensor<Real>& g) {
                                  std::size_t off = 0;
                                  for (const auto& p : parts) {
                                    const std::size_t rows = t.value(p.id()).rows();
                                    if (p.requires_grad()) {
                                      auto& gp = t.grad(p.id());
                                      for (std::size_t i = 0; i < rows * d; ++i)
                                        gp[i] += g[off * d + i];
                                    }
                                    off += rows;
                                  }
                                });
}

/// [a | b] along the feature axis.
template <class Real>
Var<Real> concat_cols(Var<Real> a, Var<Real> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rows() != B.rows()) {
    throw DimensionError("concat_cols: row mismatch " + shape_string(A.shape()) + " vs " +
                         shape_string(B.shape()));
  }
  const std::size_t n = A.rows(), da = A.cols(), db = B.cols();
  Tensor<Real> out({n, da + db});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(A.data() + r * da, da, out.data() + r * (da + db));
    std::copy_n(B.data() + r * db, db, out.data() + r * (da + db) + da);
  }
  return a.tape().record(std::move(out), detail::any_grad({a, b}),
                         [a, b, n, da, db](Tape<Real>& t, const Tensor<Real>& g) {
                           if (a.requires_grad()) {
                             auto& ga = t.grad(a.id());
                             for (std::size_t r = 0; r < n; ++r)
                               for (std::size_t c = 0; c < da; ++c) ga[r * da + c] += g[r * (da + db) + c];
                           }
                           if (b.requires_grad()) {
                             auto& gb = t.grad(b.id());
                             for (std::size_t r = 0; r < n; ++r)
                               for (std::size_t c = 0; c < db; ++c)
                                 gb[r * db + c] += g[r * (da + db) + da + c];
                           }
                         });
}

inline constexpr double kRopeBase = 10000.0;

/// Rotary position embedding. Columns are split into heads of width
/// `head_dim`; inside each head the pair (2i, 2i+1) is rotated by
/// position * base^(-2i / head_dim).
template <class Real>
Var<Real> rope(Var<Real> x, const std::vector<double>& positions, std::size_t head_dim,
               double base = kRopeBase) {
  const auto& X = x.value();
  detail::require_matrix(X, "rope");
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ConfigError("rope: head dimension must be even, got " + std::to_string(head_dim),
                      "model.head_dim");
  }
  const std::size_t n = X.rows(), d = X.cols();
  if (d % head_dim != 0) {
    throw DimensionError("rope: width " + std::to_string(d) + " not a multiple of head dim " +
                         std::to_string(head_dim));
  }
  if (positions.size() != n) {
    throw DimensionError("rope: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(n) + " rows");
  }
  const std::size_t half = head_dim / 2;
  auto cs = std::make_shared<std::vector<double>>(n * half * 2);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double omega = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double ang = positions[r] * omega;
      (*cs)[(r * half + i) * 2] = std::cos(ang);
      (*cs)[(r * half + i) * 2 + 1] = std::sin(ang);
    }
  }
  Tensor<Real> out(X.shape());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t h0 = 0; h0 < d; h0 += head_dim) {
      for (std::size_t i = 0; i < half; ++i) {
        const double c = (*cs)[(r * half + i) * 2], s = (*cs)[(r * half + i) * 2 + 1];
        const double x0 = X(r, h0 + 2 * i), x1 = X(r, h0 + 2 * i + 1);
        out(r, h0 + 2 * i) = static_cast<Real>(x0 * c - x1 * s);
        out(r, h0 + 2 * i + 1) = static_cast<Real>(x0 * s + x1 * c);
      }
    }
  }
  return x.tape().record(std::move(out), x.requires_grad(),
                         [x, cs, n, d, head_dim, half](Tape<Real>& t, const Tensor<Real>& g) {
                           auto& gx = t.grad(x.id());
                           for (std::size_t r = 0; r < n; ++r) {
                             for (std::size_t h0 = 0; h0 < d; h0 += head_dim) {
                               for (std::size_t i = 0; i < half; ++i) {
                                 const double c = (*cs)[(r * half + i) * 2];
                                 const double s = (*cs)[(r * half + i) * 2 + 1];
                                 const double g0 = g(r, h0 + 2 * i), g1 = g(r, h0 + 2 * i + 1);
                                 gx(r, h0 + 2 * i) = static_cast<Real>(gx(r, h0 + 2 * i) + g0 * c + g1 * s);
                                 gx(r, h0 + 2 * i + 1) =
                                     static_cast<Real>(gx(r, h0 + 2 * i + 1) - g0 * s + g1 * c);
                               }
                             }
                           }
                         });
}

/// Scaled dot-product attention restricted to segments: a query row attends
/// only to key rows of its own segment. Columns split into `heads` equal
/// slices attended independently. Rows outside every segment produce zeros.
template <class Real>
Var<Real> segment_attention(Var<Real> q, Var<Real> k, Var<Real> v, const Segments& segments,
                            std::size_t heads, double scale) {
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  detail::require_matrix(Q, "segment_attention");
  detail::require_matrix(K, "segment_attention");
  detail::require_matrix(V, "segment_attention");
  const std::size_t n = Q.rows(), dk = Q.cols(), dv = V.cols();
  if (K.rows() != n || V.rows() != n || K.cols() != dk) {
    throw DimensionError("segment_attention: q " + shape_string(Q.shape()) + ", k " +
                         shape_string(K.shape()) + ", v " + shape_string(V.shape()));
  }
  if (heads == 0 || dk % heads != 0 || dv % heads != 0) {
    throw DimensionError("segment_attention: widths " + std::to_string(dk) + "/" +
                         std::to_string(dv) + " not divisible by " + std::to_string(heads) +
                         " heads");
  }
  for (const auto& s : segments) {
    if (s.start + s.length > n) throw DimensionError("segment_attention: segment exceeds rows");
  }
  const std::size_t hk = dk / heads, hv = dv / heads;
  const bool rg = detail::any_grad({q, k, v}) && q.tape().grad_enabled();
  auto probs = std::make_shared<std::vector<double>>();
  Tensor<Real> out({n, dv});
  std::vector<double> p;
  std::vector<double> acc(hv);
  for (const auto& seg : segments) {
    const std::size_t L = seg.length;
    p.resize(L * L);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        const Real* qi = Q.data() + (seg.start + i) * dk + h * hk;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < L; ++j) {
          const Real* kj = K.data() + (seg.start + j) * dk + h * hk;
          p[i * L + j] = scale * kernels::dot(qi, kj, hk);
          mx = std::max(mx, p[i * L + j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          p[i * L + j] = std::exp(p[i * L + j] - mx);
          sum += p[i * L + j];
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < L; ++j) {
          p[i * L + j] /= sum;
          const Real* vj = V.data() + (seg.start + j) * dv + h * hv;
          for (std::size_t c = 0; c < hv; ++c) acc[c] += p[i * L + j] * vj[c];
        }
        Real* o = out.data() + (seg.start + i) * dv + h * hv;
        for (std::size_t c = 0; c < hv; ++c) o[c] = static_cast<Real>(acc[c]);
      }
      if (rg) probs->insert(probs->end(), p.begin(), p.end());
    }
  }
  return q.tape().record(
      std::move(out), rg,
      [q, k, v, segments, heads, scale, probs, dk, dv, hk, hv](Tape<Real>& t, const Tensor<Real>& g) {
        const auto& Q = t.value(q.id());
        const auto& K = t.value(k.id());
        const auto& V = t.value(v.id());
        Tensor<Real>* gq = q.requires_grad() ? &t.grad(q.id()) : nullptr;
        Tensor<Real>* gk = k.requires_grad() ? &t.grad(k.id()) : nullptr;
        Tensor<Real>* gv = v.requires_grad() ? &t.grad(v.id()) : nullptr;
        std::size_t off = 0;
        std::vector<double> ds, dqa, dka, dva;
        for (const auto& seg : segments) {
          const std::size_t L = seg.length;
          ds.resize(L * L);
          for (std::size_t h = 0; h < heads; ++h) {
            const double* P = probs->data() + off;
            off += L * L;
            // dP = dO V^T ; dS = P * (dP - rowsum(P * dP))
            for (std::size_t i = 0; i < L; ++i) {
              const Real* gi = g.data() + (seg.start + i) * dv + h * hv;
              double rs = 0.0;
              for (std::size_t j = 0; j < L; ++j) {
                const Real* vj = V.data() + (seg.start + j) * dv + h * hv;
                ds[i * L + j] = kernels::dot(gi, vj, hv);
                rs += P[i * L + j] * ds[i * L + j];
              }
              for (std::size_t j = 0; j < L; ++j) ds[i * L + j] = P[i * L + j] * (ds[i * L + j] - rs) * scale;
            }
            if (gv) {
              dva.assign(hv, 0.0);
              for (std::size_t j = 0; j < L; ++j) {
                std::fill(dva.begin(), dva.end(), 0.0);
                for (std::size_t i = 0; i < L; ++i) {
                  const Real* gi = g.data() + (seg.start + i) * dv + h * hv;
                  for (std::size_t c = 0; c < hv; ++c) dva[c] += P[i * L + j] * gi[c];
                }
                Real* dst = gv->data() + (seg.start + j) * dv + h * hv;
                for (std::size_t c = 0; c < hv; ++c) dst[c] = static_cast<Real>(dst[c] + dva[c]);
              }
            }
            if (gq) {
              dqa.assign(hk, 0.0);
              for (std::size_t i = 0; i < L; ++i) {
                std::fill(dqa.begin(), dqa.end(), 0.0);
                for (std::size_t j = 0; j < L; ++j) {
                  const Real* kj = K.data() + (seg.start + j) * dk + h * hk;
                  for (std::size_t c = 0; c < hk; ++c) dqa[c] += ds[i * L + j] * kj[c];
                }
                Real* dst = gq->data() + (seg.start + i) * dk + h * hk;
                for (std::size_t c = 0; c < hk; ++c) dst[c] = static_cast<Real>(dst[c] + dqa[c]);
              }
            }
            if (gk) {
              dka.assign(hk, 0.0);
              for (std::size_t j = 0; j < L; ++j) {
                std::fill(dka.begin(), dka.end(), 0.0);
                for (std::size_t i = 0; i < L; ++i) {
                  const Real* qi = Q.data() + (seg.start + i) * dk + h * hk;
                  for (std::size_t c = 0; c < hk; ++c) dka[c] += ds[i * L + j] * qi[c];
                }
                Real* dst = gk->data() + (seg.start + j) * dk + h * hk;
                for (std::size_t c = 0; c < hk; ++c) dst[c] = static_cast<Real>(dst[c] + dka[c]);
              }
            }
          }
        }
      });
}

/// Mean over the rows of each segment -> [segments x d].
template <class Real>
Var<Real> segment_mean(Var<Real> x, const Segments& segments) {
  const auto& X = x.value();
  const std::size_t d = X.cols();
  Tensor<Real> out({segments.size(), d});
  std::vector<double> acc(d);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    if (seg.length == 0) throw ContractError("segment_mean: sequence has no unpadded positions");
    if (seg.start + seg.length > X.rows()) throw DimensionError("segment_mean: segment exceeds rows");
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t r = seg.start; r < seg.start + seg.length; ++r)
      for (std::size_t c = 0; c < d; ++c) acc[c] += X(r, c);
    for (std::size_t c = 0; c < d; ++c) out(s, c) = static_cast<Real>(acc[c] / static_cast<double>(seg.length));
  }
  return x.tape().record(std::move(out), x.requires_grad(),
                         [x, segments, d](Tape<Real>& t, const Tensor<Real>& g) {
                           auto& gx = t.grad(x.id());
                           for (std::size_t s = 0; s < segments.size(); ++s) {
                             const double inv = 1.0 / static_cast<double>(segments[s].length);
                             for (std::size_t r = segments[s].start;
                                  r < segments[s].start + segments[s].length; ++r)
                               for (std::size_t c = 0; c < d; ++c)
                                 gx(r, c) = static_cast<Real>(gx(r, c) + g(s, c) * inv);
                           }
                         });
}

/// Scales every row to unit L2 norm.
template <class Real>
Var<Real> l2_normalize_rows(Var<Real> x) {
  const auto& X = x.value();
  const std::size_t n = X.rows(), d = X.cols();
  auto norms = std::make_shared<std::vector<double>>(n);
  Tensor<Real> out(X.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double nr = std::max(std::sqrt(kernels::dot(X.data() + r * d, X.data() + r * d, d)), 1e-12);
    (*norms)[r] = nr;
    for (std::size_t c = 0; c < d; ++c) out(r, c) = static_cast<Real>(X(r, c) / nr);
  }
  return x.tape().record(std::move(out), x.requires_grad(),
                         [x, norms, n, d](Tape<Real>& t, const Tensor<Real>& g) {
                           const auto& X = t.value(x.id());
                           auto& gx = t.grad(x.id());
                           for (std::size_t r = 0; r < n; ++r) {
                             const double nr = (*norms)[r];
                             const double proj = kernels::dot(X.data() + r * d, g.data() + r * d, d) / nr;
                             for (std::size_t c = 0; c < d; ++c) {
                               const double y = X(r, c) / nr;
                               gx(r, c) = static_cast<Real>(gx(r, c) + (g(r, c) - y * proj) / nr);
                             }
                           }
                         });
}

/// Inverted dropout; identity when p == 0.
template <class Real>
Var<Real> dropout(Var<Real> x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout probability must be < 1", "model.dropout");
  const auto& X = x.value();
  auto mask = std::make_shared<std::vector<Real>>(X.size());
  const double keep = 1.0 - p;
  Tensor<Real> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    (*mask)[i] = rng.bernoulli(keep) ? static_cast<Real>(1.0 / keep) : Real{0};
    out[i] = X[i] * (*mask)[i];
  }
  return x.tape().record(std::move(out), x.requires_grad(),
                         [x, mask](Tape<Real>& t, const Tensor<Real>& g) {
                           auto& gx = t.grad(x.id());
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
                         });
}

template <class Real>
Var<Real> sum(Var<Real> x) {
  double s = 0.0;
  for (auto v : x.value().values()) s += v;
  return x.tape().record(Tensor<Real>::scalar(static_cast<Real>(s)), x.requires_grad(),
                         [x](Tape<Real>& t, const Tensor<Real>& g) {
                           auto& gx = t.grad(x.id());
                           for (auto& v : gx.values()) v += g[0];
                         });
}

template <class Real>
Var<Real> mean(Var<Real> x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

/// Learnable time embedding over a periodic time coordinate `tau` (one value
/// per row, in hours). Slot 0 is linear, w0 * tau + phi0; every other slot is
/// cos(w_k * tau + phi_k).
///
/// Frequencies are stored as omega_k = w_k * period_hours (radians per
/// period) so that all learnable values are O(1); the function family is the
/// same as with raw per-hour frequencies.
template <class Real>
Var<Real> time_embedding(const std::vector<double>& tau, Var<Real> omega, Var<Real> phi,
                         double period_hours = 168.0) {
  const auto& W = omega.value();
  const auto& F = phi.value();
  const std::size_t q = W.size();
  if (F.size() != q) {
    throw DimensionError("time_embedding: omega " + shape_string(W.shape()) + " vs phi " +
                         shape_string(F.shape()));
  }
  if (q < 2) throw ConfigError("time embedding needs at least 2 slots", "model.q");
  const std::size_t n = tau.size();
  std::vector<double> u(n);
  for (std::size_t r = 0; r < n; ++r) u[r] = tau[r] / period_hours;
  Tensor<Real> out({n, q});
  for (std::size_t r = 0; r < n; ++r) {
    out(r, 0) = static_cast<Real>(static_cast<double>(W[0]) * u[r] + F[0]);
    for (std::size_t k = 1; k < q; ++k)
      out(r, k) = static_cast<Real>(std::cos(static_cast<double>(W[k]) * u[r] + F[k]));
  }
  return omega.tape().record(std::move(out), detail::any_grad({omega, phi}),
                             [u, omega, phi, n, q](Tape<Real>& t, const Tensor<Real>& g) {
                               const auto& W = t.value(omega.id());
                               const auto& F = t.value(phi.id());
                               std::vector<double> dw(q, 0.0), dphi(q, 0.0);
                               for (std::size_t r = 0; r < n; ++r) {
                                 dw[0] += g(r, 0) * u[r];
                                 dphi[0] += g(r, 0);
                                 for (std::size_t k = 1; k < q; ++k) {
                                   const double s = -std::sin(static_cast<double>(W[k]) * u[r] + F[k]);
                                   dw[k] += g(r, k) * s * u[r];
                                   dphi[k] += g(r, k) * s;
                                 }
                               }
                               if (omega.requires_grad()) {
                                 auto& gw = t.grad(omega.id());
                                 for (std::size_t k = 0; k < q; ++k) gw[k] = static_cast<Real>(gw[k] + dw[k]);
                               }
                               if (phi.requires_grad()) {
                                 auto& gp = t.grad(phi.id());
                                 for (std::size_t k = 0; k < q; ++k) gp[k] = static_cast<Real>(gp[k] + dphi[k]);
                               }
                             });
}

/// Mean over rows of -log( e^{q.p/tau} / (sum_j e^{q.n_j/tau} + e^{q.p/tau}) ),
/// with n_j the rows of `negatives`. The positive term sits in the denominator
/// alongside the negatives. Inputs are used as given (normalise beforehand).
template <class Real>
Var<Real> info_nce(Var<Real> query, Var<Real> positive, const Tensor<Real>& negatives, double tau) {
  const auto& Q = query.value();
  const auto& P = positive.value();
  Q.require_same_shape(P, "info_nce");
  detail::require_matrix(Q, "info_nce");
  const std::size_t b = Q.rows(), d = Q.cols();
  const std::size_t nq = negatives.empty() ? 0 : negatives.rows();
  if (nq && negatives.cols() != d) {
    throw DimensionError("info_nce: queue width " + std::to_string(negatives.cols()) +
                         " vs projection width " + std::to_string(d));
  }
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive", "train.tau");
  // softmax weights over [positive, negatives...] per row, kept for backward
  auto weights = std::make_shared<std::vector<double>>(b * (nq + 1));
  double total = 0.0;
  std::vector<double> logits(nq + 1);
  for (std::size_t r = 0; r < b; ++r) {
    const Real* qr = Q.data() + r * d;
    logits[0] = kernels::dot(qr, P.data() + r * d, d) / tau;
    for (std::size_t j = 0; j < nq; ++j) logits[j + 1] = kernels::dot(qr, negatives.data() + j * d, d) / tau;
    const std::size_t am = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    const double mx = logits[am];
    double rest = 0.0;
    for (std::size_t j = 0; j <= nq; ++j)
      if (j != am) rest += std::exp(logits[j] - mx);
    const double lse = mx + std::log1p(rest);
    total += lse - logits[0];
    for (std::size_t j = 0; j <= nq; ++j) (*weights)[r * (nq + 1) + j] = std::exp(logits[j] - lse);
  }
  const double loss = total / static_cast<double>(b);
  auto neg = std::make_shared<Tensor<Real>>(negatives);
  return query.tape().record(
      Tensor<Real>::scalar(static_cast<Real>(loss)), detail::any_grad({query, positive}),
      [query, positive, weights, neg, b, d, nq, tau](Tape<Real>& t, const Tensor<Real>& g) {
        const auto& Q = t.value(query.id());
        const auto& P = t.value(positive.id());
        const double c = g[0] / (static_cast<double>(b) * tau);
        std::vector<double> acc(d);
        for (std::size_t r = 0; r < b; ++r) {
          const double* w = weights->data() + r * (nq + 1);
          if (query.requires_grad()) {
            // d/dq = (sum_k w_k y_k - p) / tau
            for (std::size_t c2 = 0; c2 < d; ++c2) acc[c2] = (w[0] - 1.0) * P(r, c2);
            for (std::size_t j = 0; j < nq; ++j) {
              const Real* nj = neg->data() + j * d;
              for (std::size_t c2 = 0; c2 < d; ++c2) acc[c2] += w[j + 1] * nj[c2];
            }
            auto& gq = t.grad(query.id());
            for (std::size_t c2 = 0; c2 < d; ++c2) gq(r, c2) = static_cast<Real>(gq(r, c2) + c * acc[c2]);
          }
          if (positive.requires_grad()) {
            auto& gp = t.grad(positive.id());
            for (std::size_t c2 = 0; c2 < d; ++c2)
              gp(r, c2) = static_cast<Real>(gp(r, c2) + c * (w[0] - 1.0) * Q(r, c2));
          }
        }
      });
}

/// Mean squared error between pred (N values) and targets.
template <class Real>
Var<Real> mse_loss(Var<Real> pred, const std::vector<double>& target) {
  const auto& P = pred.value();
  if (P.size() != target.size()) {
    throw DimensionError("mse_loss: " + std::to_string(P.size()) + " predictions for " +
                         std::to_string(target.size()) + " targets");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) s += (P[i] - target[i]) * (P[i] - target[i]);
  const double n = static_cast<double>(P.size());
  return pred.tape().record(Tensor<Real>::scalar(static_cast<Real>(s / n)), pred.requires_grad(),
                            [pred, target, n](Tape<Real>& t, const Tensor<Real>& g) {
                              const auto& P = t.value(pred.id());
                              auto& gp = t.grad(pred.id());
                              for (std::size_t i = 0; i < P.size(); ++i)
                                gp[i] = static_cast<Real>(gp[i] + g[0] * 2.0 * (P[i] - target[i]) / n);
                            });
}

/// Mean softmax cross-entropy of logits[N x C] against class labels.
template <class Real>
Var<Real> cross_entropy(Var<Real> logits, const std::vector<std::size_t>& labels) {
  const auto& X = logits.value();
  detail::require_matrix(X, "cross_entropy");
  const std::size_t n = X.rows(), c = X.cols();
  if (labels.size() != n) throw DimensionError("cross_entropy: label count mismatch");
  auto probs = std::make_shared<std::vector<double>>(n * c);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] >= c) throw IndexError("cross_entropy: label " + std::to_string(labels[r]) + " >= " + std::to_string(c));
    const auto row = X.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    total += lse - row[labels[r]];
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] = std::exp(row[j] - lse);
  }
  return logits.tape().record(Tensor<Real>::scalar(static_cast<Real>(total / static_cast<double>(n))),
                              logits.requires_grad(),
                              [logits, labels, probs, n, c](Tape<Real>& t, const Tensor<Real>& g) {
                                auto& gx = t.grad(logits.id());
                                const double k = g[0] / static_cast<double>(n);
                                for (std::size_t r = 0; r < n; ++r)
                                  for (std::size_t j = 0; j < c; ++j) {
                                    const double y = (j == labels[r]) ? 1.0 : 0.0;
                                    gx(r, j) = static_cast<Real>(gx(r, j) + k * ((*probs)[r * c + j] - y));
                                  }
                              });
}

}  // namespace tigr
