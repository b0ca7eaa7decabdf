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
#include "proxykd/blackbox/logit_cache.hpp"
#include "proxykd/corpus/example.hpp"
#include "proxykd/model/language_model.hpp"
#include "proxykd/model/response_batch.hpp"

namespace pkd::losses {

using model::LanguageModel;
using model::Tokens;

struct LossConfig {
  double alpha = 100.0;  // weight on the weighted KL term
  double beta = 0.1;     // preference inverse temperature

  void validate() const;
};

struct PreferencePair {
  Tokens x;
  Tokens y_teacher;  // preferred
  Tokens y_proxy;    // dispreferred, sampled from the current policy
  std::uint64_t seed = 0;
};

/// Per-token mean of -log p(y_t | x, y_<t).
template <std::floating_point T>
ad::Tensor<T> nll_loss(const LanguageModel<T>& model, const Tokens& x, const Tokens& y);

/// Per-row KL(p || q) for logits of shape (N, C); p is a constant given by
/// its logits, gradient flows into q. Returns shape (N).
template <std::floating_point T>
ad::Tensor<T> kl_rows(std::span<const T> p_logits, const ad::Tensor<T>& q_logits);

/// Per-token mean of KL(softmax p || softmax q) over (T, V) logits; p is
/// treated as constant.
template <std::floating_point T>
ad::Tensor<T> forward_kl(const ad::Tensor<T>& p_logits, const ad::Tensor<T>& q_logits);

/// KL between the renormalised cached top-K distribution and the student's
/// distribution restricted to the same ids. student_logits has shape (V).
template <std::floating_point T>
ad::Tensor<T> truncated_kl(const blackbox::LogitCacheEntry<T>& entry, const ad::Tensor<T>& student_logits);

/// -log sigmoid(beta * margin) with sequence-sum log-probabilities; the
/// reference is evaluated without gradient.
template <std::floating_point T>
ad::Tensor<T> dpo_loss(const LanguageModel<T>& policy, const LanguageModel<T>& reference,
                       const PreferencePair& pair, double beta);

template <std::floating_point T>
ad::Tensor<T> proxy_loss(const LanguageModel<T>& policy, const LanguageModel<T>& reference,
                         const corpus::Example& example, const PreferencePair& pair, double beta);

/// Where the student's KL target comes from: a top-K cache or a full model.
template <std::floating_point T>
struct KlSource {
  const blackbox::LogitCache<T>* cache = nullptr;
  const LanguageModel<T>* model = nullptr;
};

/// nll_loss + alpha * weight * (per-token mean KL against source). With
/// alpha == 0 the KL term is not evaluated and the NLL is returned as is.
template <std::floating_point T>
ad::Tensor<T> student_loss(const LanguageModel<T>& student, const corpus::Example& example,
                           const KlSource<T>& source, double weight, double alpha);

// Batched forms used by the training loops. Every batch loss is the mean
// over examples of the per-example loss.

/// Per-example per-token mean NLL from per-target log-probs, shape (B).
template <std::floating_point T>
ad::Tensor<T> per_example_nll(const ad::Tensor<T>& picked, const model::ResponseBatch& batch);

/// Per-example mean over positions of per-target values, shape (B).
template <std::floating_point T>
ad::Tensor<T> per_example_mean(const ad::Tensor<T>& per_target, const model::ResponseBatch& batch);

template <std::floating_point T>
struct StudentBatchLoss {
  ad::Tensor<T> loss;
  double nll = 0.0;  // batch means, for logging
  double kl = 0.0;
};

/// weights[b] scales the KL of example b. Fails naming the example id when a
/// cache entry is missing or does not cover the response.
template <std::floating_point T>
StudentBatchLoss<T> student_batch_loss(const LanguageModel<T>& student, std::span<const corpus::Example> examples,
                                       const KlSource<T>& source, std::span<const double> weights, double alpha);

template <std::floating_point T>
struct ProxyBatchLoss {
  ad::Tensor<T> loss;
  double nll = 0.0;
  double pref = 0.0;
  double margin = 0.0;  // mean log-ratio margin (before beta) over scored pairs
  std::size_t scored = 0;  // pairs with y_proxy != y_teacher
};

/// Mean over pairs of NLL(y_teacher) + dpo. Pairs whose sampled response
/// equals the teacher's contribute only NLL. use_pref = false drops the
/// preference term altogether.
template <std::floating_point T>
ProxyBatchLoss<T> proxy_batch_loss(const LanguageModel<T>& policy, const LanguageModel<T>& reference,
                                   std::span<const PreferencePair> pairs, double beta, bool use_pref = true);

/// Mean log-ratio margin of the pairs, without gradient.
template <std::floating_point T>
std::vector<double> preference_margins(const LanguageModel<T>& policy, const LanguageModel<T>& reference,
                                       std::span<const PreferencePair> pairs);

}  // namespace pkd::losses
