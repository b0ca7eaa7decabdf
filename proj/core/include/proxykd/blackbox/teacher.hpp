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
#include <memory>
#include <span>
#include <vector>

#include "proxykd/corpus/example.hpp"
#include "proxykd/corpus/task.hpp"
#include "proxykd/model/language_model.hpp"

namespace pkd::blackbox {

using model::Tokens;

/// A teacher reachable only through sampled responses. Concrete backends are
/// created by the factories below and expose nothing beyond generate; no
/// logits, probabilities or parameters can be obtained through this type.
class BlackBoxTeacher {
 public:
  virtual ~BlackBoxTeacher() = default;

  /// <eos>-terminated response, deterministic in (teacher, x, seed).
  virtual Tokens generate(const Tokens& x, std::uint64_t seed) const = 0;

  /// Element b equals generate(prompts[b], seeds[b]).
  virtual std::vector<Tokens> generate_batch(std::span<const Tokens> prompts,
                                             std::span<const std::uint64_t> seeds) const;
};

/// Answers with the task's ground truth; with probability noise_rate the
/// answer is replaced by a different well-formed one.
std::unique_ptr<BlackBoxTeacher> make_programmatic_teacher(corpus::TaskSpec spec, double noise_rate = 0.0);

/// Wraps a trained model behind the generate-only boundary. Responses are
/// sampled at the given temperature (0 = greedy) for at most max_new tokens;
/// a response that does not end in <eos> is cut to max_new - 1 tokens and
/// terminated.
std::unique_ptr<BlackBoxTeacher> make_transformer_teacher(model::LanguageModel<float> model,
                                                          double temperature, int max_new);

/// Sets every response to teacher.generate(x, derive_seed(seed, id)), so a
/// label depends only on the example and the seed.
corpus::Examples label_examples(const BlackBoxTeacher& teacher, corpus::Examples examples, std::uint64_t seed);

}  // namespace pkd::blackbox
