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

#include "proxykd/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "proxykd/util/rng.hpp"

namespace pkd::ad {

GradCheckResult check_gradients(const std::function<Tensor<double>()>& f,
                                std::vector<Tensor<double>> inputs,
                                const GradCheckOptions& options) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  backward(f());

  GradCheckResult result;
  util::Rng rng(options.seed);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor<double>& t = inputs[i];
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(t.size(), 0.0);

    std::vector<std::size_t> coords(t.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_input > 0 && coords.size() > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }

    auto values = t.mutable_values();
    for (std::size_t j : coords) {
      const double saved = values[j];
      double plus = 0, minus = 0;
      {
        NoGradGuard guard;
        values[j] = saved + options.step;
        plus = f().item();
        values[j] = saved - options.step;
        minus = f().item();
      }
      values[j] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double denom = std::max({std::abs(analytic[j]), std::abs(numeric), options.floor});
      const double rel = std::abs(analytic[j] - numeric) / denom;
      ++result.coords_checked;
      if (rel > result.max_rel_error || result.worst.empty()) {
        if (rel >= result.max_rel_error) {
          result.max_rel_error = rel;
          std::ostringstream os;
          os << "input#" << i << '[' << j << "]: analytic=" << analytic[j]
             << " numeric=" << numeric;
          result.worst = os.str();
        }
      }
    }
  }
  for (auto& t : inputs) t.clear_grad();
  return result;
}

}  // namespace pkd::ad
