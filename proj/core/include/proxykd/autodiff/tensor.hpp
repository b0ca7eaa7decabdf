// Copyright 2026 The ProxyKD Authors.
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

// Dense tensors with a define-by-run gradient graph.
//
// Every primitive in ops.hpp returns a Tensor whose storage owns the values
// and, when any input requires a gradient, a Node that records the inputs and
// a closure accumulating into their gradients. backward() linearises the
// reachable graph into a Tape (topological order) and walks it once in reverse.
//
// Two precisions are instantiated: float for training and double for the
// checked test mode. In double mode every primitive rejects non-finite inputs.

#pragma once

#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pkd::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <std::floating_point T>
class Tensor;

template <std::floating_point T>
struct Node {
  const char* op = "";
  std::vector<Tensor<T>> inputs;
  // Receives the gradient of the node's output and accumulates into inputs.
  std::function<void(std::span<const T>)> backward;
};

template <std::floating_point T>
struct TensorStorage {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until a gradient is first accumulated
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;  // null for leaves
};

/// Shared handle to tensor storage. Copies alias the same storage.
template <std::floating_point T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(T value);

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t size() const { return data_->values.size(); }

  std::span<const T> values() const { return data_->values; }
  std::span<T> mutable_values() { return data_->values; }
  T item() const;

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool on) { data_->requires_grad = on; }
  bool has_grad() const { return !data_->grad.empty(); }
  std::span<const T> grad() const { return data_->grad; }
  std::span<T> mutable_grad();  // allocates zeros on first use
  void zero_grad();
  void clear_grad() { data_->grad.clear(); }

  bool is_leaf() const { return data_->node == nullptr; }
  const std::shared_ptr<Node<T>>& node() const { return data_->node; }
  TensorStorage<T>* storage() const { return data_.get(); }

  /// Deep copy of values (and shape); the copy is a leaf without gradient.
  Tensor clone() const;

  void attach(std::shared_ptr<Node<T>> node);

 private:
  std::shared_ptr<TensorStorage<T>> data_;
};

/// Topologically ordered record of the operations reachable from a root.
template <std::floating_point T>
class Tape {
 public:
  /// Fails when the root is not a scalar or was not produced through the graph.
  static Tape record(const Tensor<T>& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<Tensor<T>>& entries() const { return order_; }

  /// Runs every node's backward exactly once in reverse order. Leaf gradients
  /// accumulate across calls; interior gradients are reset first.
  void run();

 private:
  Tensor<T> root_;
  std::vector<Tensor<T>> order_;  // inputs precede the nodes that consume them
};

template <std::floating_point T>
void backward(const Tensor<T>& loss);

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace pkd::ad
