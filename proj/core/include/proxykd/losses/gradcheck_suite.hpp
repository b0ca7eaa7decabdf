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
#include <string>
#include <vector>

namespace pkd::losses {

struct LossGradCheck {
  std::string loss;
  int instances = 0;
  std::size_t coords = 0;
  double max_rel_error = 0.0;
  std::string worst;
};

/// Central finite differences against reverse-mode gradients, in double
/// precision, for every training objective on small random models and
/// inputs: nll, forward_kl, truncated_kl, dpo, student (cache and model
/// targets) and proxy.
std::vector<LossGradCheck> run_loss_gradchecks(int instances = 10, std::uint64_t seed = 1);

}  // namespace pkd::losses
