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
#include <vector>

#include "tigr/tensor.hpp"

namespace tigr::train {

/// Fixed-capacity FIFO of row vectors. Once full, each push overwrites the
/// oldest row.
template <class Real = float>
class NegativeQueue {
 public:
  NegativeQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim), data_(capacity * dim) {}

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }

  void push(const Tensor<Real>& rows) {
    if (rows.empty()) return;
    if (rows.cols() != dim_) {
      throw DimensionError("queue width " + std::to_string(dim_) + " vs rows of width " + std::to_string(rows.cols()));
    }
    if (capacity_ == 0) return;
    for (std::size_t r = 0; r < rows.rows(); ++r) {
      std::copy_n(rows.row(r).data(), dim_, data_.data() + head_ * dim_);
      head_ = (head_ + 1) % capacity_;
      size_ = std::min(size_ + 1, capacity_);
    }
  }

  /// Contents oldest first; an empty tensor when nothing is queued.
  Tensor<Real> rows() const {
    if (size_ == 0) return {};
    Tensor<Real> out({size_, dim_});
    const std::size_t start = size_ < capacity_ ? 0 : head_;
    for (std::size_t i = 0; i < size_; ++i) {
      std::copy_n(data_.data() + ((start + i) % capacity_) * dim_, dim_, out.row(i).data());
    }
    return out;
  }

  void clear() {
    size_ = 0;
    head_ = 0;
  }

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::vector<Real> data_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

}  // namespace tigr::train
