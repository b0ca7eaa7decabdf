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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "proxykd/autodiff/tensor.hpp"

namespace pkd::ad {

struct GradCheckOptions {
  double step = 1e-5;
  // Relative error uses max(|analytic|, |numeric|, floor) as denominator.
  double floor = 1e-3;
  // Coordinates probed per input; 0 probes all of them.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // "input#i[j]: analytic=.. numeric=.."
};

/// Compares reverse-mode gradients of a scalar function with central finite
/// differences. The function is re-evaluated from scratch for every probe.
GradCheckResult check_gradients(const std::function<Tensor<double>()>& f,
                                std::vector<Tensor<double>> inputs,
                                const GradCheckOptions& options = {});

}  // namespace pkd::ad
