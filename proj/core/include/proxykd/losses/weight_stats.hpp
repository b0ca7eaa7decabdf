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

#include <filesystem>
#include <map>
#include <string>

#include "proxykd/corpus/example.hpp"
#include "proxykd/model/language_model.hpp"

namespace pkd::losses {

inline constexpr double kGammaEpsilon = 1e-8;

/// Dataset-level standardisation of proxy sequence log-likelihoods and the
/// resulting per-example weights w = sigmoid((loglik - mu) / gamma).
struct WeightStats {
  double mu = 0.0;
  double gamma = 0.0;  // population standard deviation
  std::map<std::string, double> loglik;
  std::map<std::string, double> weights;

  double weight(const std::string& id) const;
  bool operator==(const WeightStats&) const = default;
};

/// Builds stats from already computed sequence log-likelihoods.
WeightStats weight_stats_from_logliks(std::map<std::string, double> loglik);

template <std::floating_point T>
WeightStats compute_weight_stats(const model::LanguageModel<T>& proxy, const corpus::Examples& examples,
                                 int threads = 1);

std::string weight_stats_to_json(const WeightStats& stats);
WeightStats weight_stats_from_json(const std::string& text);
void save_weight_stats(const WeightStats& stats, const std::filesystem::path& path);
WeightStats load_weight_stats(const std::filesystem::path& path);

}  // namespace pkd::losses
