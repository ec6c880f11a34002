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

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tigr/tensor.hpp"

namespace tigr {

/// A named model tensor. Trainable parameters own a gradient slot; frozen ones
/// (EMA targets) have none, so nothing can accumulate into them.
template <class Real = float>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  std::optional<Tensor<Real>> grad;

  bool trainable() const noexcept { return grad.has_value(); }
};

/// Owns every parameter of a model. Addresses are stable for its lifetime;
/// names are unique and iteration follows insertion order.
template <class Real = float>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;

  Parameter<Real>& add(std::string name, Tensor<Real> init, bool trainable = true) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'", name);
    Parameter<Real> p;
    p.name = name;
    if (trainable) p.grad = Tensor<Real>(init.shape());
    p.value = std::move(init);
    index_.emplace(std::move(name), params_.size());
    params_.push_back(std::move(p));
    return params_.back();
  }

  Parameter<Real>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  const Parameter<Real>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  Parameter<Real>& at(const std::string& name) {
    auto* p = find(name);
    if (!p) throw IndexError("unknown parameter '" + name + "'");
    return *p;
  }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) {
      if (p.grad) p.grad->fill(Real{0});
    }
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.trainable() ? 1 : 0;
    return n;
  }

 private:
  std::deque<Parameter<Real>> params_;
  std::map<std::string, std::size_t> index_;
};

template <class Real>
class Tape;

/// Handle to a node on a Tape.
template <class Real = float>
class Var {
 public:
  Var() = default;
  Var(Tape<Real>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape<Real>& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  const Tensor<Real>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<Real>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so the
/// reverse of creation order is a valid topological order for backward.
///
/// A tape built with grad disabled records values only; it is the inference
/// and target-encoder path.
template <class Real = float>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<Real>&)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<Real> constant(Tensor<Real> value) { return push(std::move(value), false, {}, nullptr); }

  Var<Real> parameter(Parameter<Real>& p) {
    const bool rg = grad_enabled_ && p.trainable();
    return push(p.value, rg, {}, rg ? &p : nullptr);
  }

  /// Appends an op result. `backward` is kept only when the node requires grad.
  Var<Real> record(Tensor<Real> value, bool requires_grad, Backward backward) {
    const bool rg = grad_enabled_ && requires_grad;
    return push(std::move(value), rg, rg ? std::move(backward) : Backward{}, nullptr);
  }

  const Tensor<Real>& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

  /// Gradient accumulator of a node, allocated as zeros on first use.
  Tensor<Real>& grad(std::uint32_t id) {
    auto& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor<Real>(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Back-propagates from a single-element root, accumulating into the
  /// gradient slots of every trainable parameter reached.
  void backward(Var<Real> root) {
    if (root.value().size() != 1) {
      throw DimensionError("backward root must be a scalar, got " + shape_string(root.shape()));
    }
    if (!requires_grad(root.id())) return;
    grad(root.id())[0] = Real{1};
    for (std::int64_t id = root.id(); id >= 0; --id) {
      auto& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || !n.has_grad) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) *n.param->grad += n.grad;
    }
  }

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
    Parameter<Real>* param = nullptr;
  };

  Var<Real> push(Tensor<Real> value, bool rg, Backward backward, Parameter<Real>* param) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    n.backward = std::move(backward);
    n.param = param;
    nodes_.push_back(std::move(n));
    return Var<Real>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
};

}  // namespace tigr
