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

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "proxykd/autodiff/tensor.hpp"

namespace pkd::ad {

template <std::floating_point T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

struct AdamConfig {
  double lr = 3e-4;  // desk-scale default; 1e-5 is the large-model setting
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW), matrices only; 0 gives plain Adam
};

template <std::floating_point T>
class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  std::int64_t step_count() const { return step_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

  /// One bias-corrected Adam update, then zeroes every gradient. Fails,
  /// listing the offenders, when a parameter has no gradient buffer.
  void step(std::span<NamedParameter<T>> params);

 private:
  AdamConfig config_;
  std::int64_t step_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

template <std::floating_point T>
void adam_step(std::span<NamedParameter<T>> params, AdamState<T>& state) {
  state.step(params);
}

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <std::floating_point T>
double clip_grad_norm(std::span<NamedParameter<T>> params, double max_norm);

extern template class AdamState<float>;
extern template class AdamState<double>;

}  // namespace pkd::ad
