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

#include "proxykd/autodiff/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "proxykd/error.hpp"

namespace pkd::ad {

namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <std::floating_point T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : data_(std::make_shared<TensorStorage<T>>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
  }
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " needs " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  data_->shape = std::move(shape);
  data_->values = std::move(values);
  data_->requires_grad = requires_grad;
}

template <std::floating_point T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <std::floating_point T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <std::floating_point T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return data_->values[0];
}

template <std::floating_point T>
std::span<T> Tensor<T>::mutable_grad() {
  if (data_->grad.empty()) data_->grad.assign(data_->values.size(), T(0));
  return data_->grad;
}

template <std::floating_point T>
void Tensor<T>::zero_grad() {
  std::fill(data_->grad.begin(), data_->grad.end(), T(0));
}

template <std::floating_point T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(data_->shape, data_->values, false);
}

template <std::floating_point T>
void Tensor<T>::attach(std::shared_ptr<Node<T>> node) {
  data_->node = std::move(node);
  data_->requires_grad = true;
}

template <std::floating_point T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
  if (!root.defined()) throw ValidationError("backward: undefined loss tensor");
  if (root.rank() != 0) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(root.shape()));
  }
  if (root.is_leaf()) {
    throw ValidationError("backward: loss is detached (no recorded operations)");
  }
  Tape tape;
  tape.root_ = root;
  // Iterative post-order DFS.
  std::unordered_set<const TensorStorage<T>*> visited;
  std::vector<std::pair<Tensor<T>, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.storage());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto& node = t.node();
    if (node && next < node->inputs.size()) {
      Tensor<T> child = node->inputs[next++];
      if (!child.is_leaf() && visited.insert(child.storage()).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    tape.order_.push_back(t);
    stack.pop_back();
  }
  return tape;
}

template <std::floating_point T>
void Tape<T>::run() {
  for (auto& t : order_) {
    auto g = t.mutable_grad();
    std::fill(g.begin(), g.end(), T(0));
  }
  root_.mutable_grad()[0] = T(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    it->node()->backward(it->grad());
  }
}

template <std::floating_point T>
void backward(const Tensor<T>& loss) {
  Tape<T>::record(loss).run();
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace pkd::ad
