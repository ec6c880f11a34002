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
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tigr/common.hpp"
#include "tigr/rng.hpp"

namespace tigr {

/// Dense row-major tensor. Rank is usually 1 or 2; `rows()`/`cols()` view any
/// tensor as a matrix whose rows run along the first axis.
template <class Real = float>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real{0})
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  Tensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != count(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<Real> values) {
    return Tensor({rows, cols}, std::vector<Real>(values));
  }

  static Tensor vector(std::initializer_list<Real> values) {
    return Tensor({values.size()}, std::vector<Real>(values));
  }

  static Tensor scalar(Real v) { return Tensor({1}, std::vector<Real>{v}); }

  static Tensor normal(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = static_cast<Real>(rng.normal(0.0, stddev));
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const noexcept {
    if (shape_.empty()) return 0;
    return shape_[0] == 0 ? 0 : data_.size() / shape_[0];
  }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  std::vector<Real>& storage() noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

  Real& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  const Real& operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols() + c];
  }

  std::span<Real> row(std::size_t r) noexcept {
    const auto c = cols();
    return {data_.data() + r * c, c};
  }
  std::span<const Real> row(std::size_t r) const noexcept {
    const auto c = cols();
    return {data_.data() + r * c, c};
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    if (count(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <class Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real x) { return std::isfinite(x); });
  }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  void require_same_shape(const Tensor& o, const char* what) const {
    if (shape_ != o.shape_) {
      throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(shape_) + " vs " +
                           shape_string(o.shape_));
    }
  }

  static std::size_t count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  Shape shape_;
  std::vector<Real> data_;
};

template <class Real>
double max_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b) {
  a.require_same_shape(b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

}  // namespace tigr
