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

// Small models and labelled corpora shared by the unit tests.

#pragma once

#include <random>

#include "proxykd/blackbox/teacher.hpp"
#include "proxykd/corpus/task.hpp"
#include "proxykd/model/language_model.hpp"
#include "proxykd/util/rng.hpp"

namespace fixtures {

inline pkd::corpus::TaskSpec small_modadd() { return {pkd::corpus::TaskKind::kModAdd, 13}; }

/// Fits every small_modadd prompt with its answer.
inline pkd::model::ModelConfig small_model(int layers = 1, int d_model = 16) {
  pkd::model::ModelConfig c;
  c.vocab_size = 32;
  c.max_seq_len = 10;
  c.n_layers = layers;
  c.n_heads = 2;
  c.d_model = d_model;
  c.d_ff = 2 * d_model;
  return c;
}

/// Randomised model whose distributions are far from uniform.
template <std::floating_point T>
pkd::model::LanguageModel<T> random_model(std::uint64_t seed, pkd::model::Role role = pkd::model::Role::kProxy,
                                          int layers = 1, int d_model = 16) {
  pkd::model::LanguageModel<T> m(small_model(layers, d_model), role, seed, 1.0);
  pkd::util::Rng rng(seed ^ 0x9e37u);
  std::normal_distribution<double> n(0.0, 0.2);
  for (auto& p : m.parameters()) {
    for (auto& v : p.tensor.mutable_values()) v += static_cast<T>(n(rng));
  }
  return m;
}

/// n ground-truth-labelled small_modadd examples.
inline pkd::corpus::Examples labelled(std::size_t n, std::uint64_t seed, double noise = 0.0) {
  auto spec = small_modadd();
  auto teacher = pkd::blackbox::make_programmatic_teacher(spec, noise);
  return pkd::blackbox::label_examples(*teacher, pkd::corpus::generate_task_corpus(spec, n, seed), seed + 1);
}

}  // namespace fixtures
