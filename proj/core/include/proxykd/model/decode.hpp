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
#include <vector>

#include "proxykd/autodiff/tensor.hpp"
#include "proxykd/model/language_model.hpp"
#include "proxykd/model/response_batch.hpp"

namespace pkd::model {

/// log p(y | x) = sum_t log softmax(logits)[y_t] as a differentiable scalar.
template <std::floating_point T>
ad::Tensor<T> sequence_log_prob(const LanguageModel<T>& model, const Tokens& x, const Tokens& y);

/// Per-example sequence log-probabilities, shape (B).
template <std::floating_point T>
ad::Tensor<T> sequence_log_probs(const LanguageModel<T>& model, const ResponseBatch& batch);

/// Per-target log-probabilities, shape (number of targets), and the log-softmax
/// rows they came from, shape (number of targets, V).
template <std::floating_point T>
struct TargetLogProbs {
  ad::Tensor<T> picked;
  ad::Tensor<T> logits;  // raw logits at target rows, (n_targets, V)
};

template <std::floating_point T>
TargetLogProbs<T> target_log_probs(const LanguageModel<T>& model, const ResponseBatch& batch);

/// Ancestral sampling of up to max_new tokens after x. Stops after emitting
/// kEos or when the sequence reaches max_seq_len. temperature 0 is greedy
/// (ties go to the lower token id). <pad> and <bos> are never emitted.
/// Returns only the generated tokens.
template <std::floating_point T>
Tokens sample(const LanguageModel<T>& model, const Tokens& x, double temperature, int max_new,
              std::uint64_t seed);

/// Row b is identical to sample(model, prompts[b], temperature, max_new, seeds[b]).
template <std::floating_point T>
std::vector<Tokens> sample_batch(const LanguageModel<T>& model, std::span<const Tokens> prompts,
                                 double temperature, int max_new, std::span<const std::uint64_t> seeds);

template <std::floating_point T>
Tokens greedy_decode(const LanguageModel<T>& model, const Tokens& x, int max_new);

template <std::floating_point T>
std::vector<Tokens> greedy_decode_batch(const LanguageModel<T>& model, std::span<const Tokens> prompts,
                                        int max_new);

/// Index of the largest value; ties resolve to the lowest index.
template <std::floating_point T>
std::size_t argmax(std::span<const T> values);

}  // namespace pkd::model
