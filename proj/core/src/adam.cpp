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

#include "proxykd/autodiff/adam.hpp"

#include <cmath>

#include "proxykd/error.hpp"

namespace pkd::ad {

template <std::floating_point T>
void AdamState<T>::step(std::span<NamedParameter<T>> params) {
  std::string missing;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) missing += (missing.empty() ? "" : ", ") + p.name;
  }
  if (!missing.empty()) throw ValidationError("adam_step: missing gradients for " + missing);

  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.size(), T(0));
      v_.emplace_back(p.tensor.size(), T(0));
    }
  }
  if (m_.size() != params.size()) {
    throw ValidationError("adam_step: optimizer state tracks " + std::to_string(m_.size()) +
                          " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (m_[i].size() != params[i].tensor.size()) {
      throw ShapeError("adam_step: moment size mismatch for " + params[i].name);
    }
  }

  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const T lr = static_cast<T>(config_.lr);
  const T eps = static_cast<T>(config_.eps);
  const T decay = static_cast<T>(config_.lr * config_.weight_decay);
  const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
  const T inv_c1 = static_cast<T>(1.0 / c1), inv_c2 = static_cast<T>(1.0 / c2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].tensor.mutable_values();
    auto g = params[i].tensor.mutable_grad();
    auto& m = m_[i];
    auto& v = v_[i];
    const T wd = params[i].tensor.rank() >= 2 ? decay : T(0);
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = tb1 * m[j] + (T(1) - tb1) * g[j];
      v[j] = tb2 * v[j] + (T(1) - tb2) * g[j] * g[j];
      const T mhat = m[j] * inv_c1;
      const T vhat = v[j] * inv_c2;
      if (wd != T(0)) w[j] -= wd * w[j];
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      g[j] = T(0);
    }
  }
}

template <std::floating_point T>
double clip_grad_norm(std::span<NamedParameter<T>> params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) {
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / (norm + 1e-12));
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (T& g : p.tensor.mutable_grad()) g *= f;
    }
  }
  return norm;
}

template class AdamState<float>;
template class AdamState<double>;
template double clip_grad_norm<float>(std::span<NamedParameter<float>>, double);
template double clip_grad_norm<double>(std::span<NamedParameter<double>>, double);

}  // namespace pkd::ad
