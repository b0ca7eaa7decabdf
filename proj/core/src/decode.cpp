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

#include "proxykd/model/decode.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "proxykd/autodiff/ops.hpp"
#include "proxykd/error.hpp"
#include "proxykd/util/rng.hpp"

namespace pkd::model {

template <std::floating_point T>
std::size_t argmax(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

template <std::floating_point T>
TargetLogProbs<T> target_log_probs(const LanguageModel<T>& model, const ResponseBatch& batch) {
  ad::Tensor<T> logits = model.forward(batch.inputs);
  ad::Tensor<T> rows = ad::take_rows(logits, batch.target_rows);
  ad::Tensor<T> lsm = ad::log_softmax(rows);
  const auto V = static_cast<std::size_t>(model.config().vocab_size);
  std::vector<std::size_t> flat(batch.targets.size());
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = i * V + static_cast<std::size_t>(batch.targets[i]);
  return {ad::gather(lsm, flat), rows};
}

template <std::floating_point T>
ad::Tensor<T> sequence_log_probs(const LanguageModel<T>& model, const ResponseBatch& batch) {
  auto tl = target_log_probs(model, batch);
  return ad::segment_sum(tl.picked, batch.segment, batch.examples());
}

template <std::floating_point T>
ad::Tensor<T> sequence_log_prob(const LanguageModel<T>& model, const Tokens& x, const Tokens& y) {
  const Tokens* xs = &x;
  const Tokens* ys = &y;
  auto batch = ResponseBatch::build(std::span(xs, 1), std::span(ys, 1), model.config());
  return ad::sum(target_log_probs(model, batch).picked);
}

namespace {

// <pad> and <bos> never appear inside a response, so they are never emitted.
constexpr std::size_t kFirstEmittable = kEos;

template <std::floating_point T>
TokenId choose(std::span<const T> logits, double temperature, util::Rng& rng) {
  logits = logits.subspan(kFirstEmittable);
  if (temperature <= 0.0) return static_cast<TokenId>(argmax(logits) + kFirstEmittable);
  const double mx = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
  std::vector<double> w(logits.size());
  double total = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp((static_cast<double>(logits[i]) - mx) / temperature);
    total += w[i];
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng) * total;
  double acc = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc) return static_cast<TokenId>(i + kFirstEmittable);
  }
  // u landed in the rounding slack past the last bucket.
  for (std::size_t i = w.size(); i-- > 0;) {
    if (w[i] > 0) return static_cast<TokenId>(i + kFirstEmittable);
  }
  return static_cast<TokenId>(kEos);
}

}  // namespace

template <std::floating_point T>
std::vector<Tokens> sample_batch(const LanguageModel<T>& model, std::span<const Tokens> prompts,
                                 double temperature, int max_new, std::span<const std::uint64_t> seeds) {
  if (temperature < 0.0) throw ValidationError("sample: temperature must be >= 0");
  if (max_new < 1) throw ValidationError("sample: max_new must be >= 1");
  if (seeds.size() != prompts.size()) throw ValidationError("sample: need one seed per prompt");
  const auto max_len = static_cast<std::size_t>(model.config().max_seq_len);
  std::vector<Tokens> seqs(prompts.begin(), prompts.end());
  std::vector<Tokens> generated(prompts.size());
  std::vector<util::Rng> rngs;
  rngs.reserve(seeds.size());
  for (auto s : seeds) rngs.emplace_back(s);
  std::vector<std::size_t> active;
  for (std::size_t b = 0; b < prompts.size(); ++b) {
    if (prompts[b].empty()) throw ValidationError("sample: empty prompt at index " + std::to_string(b));
    if (prompts[b].size() > max_len) {
      throw ValidationError("sample: prompt " + std::to_string(b) + " longer than max_seq_len");
    }
    if (prompts[b].size() < max_len) active.push_back(b);
  }
  ad::NoGradGuard no_grad;
  const auto V = static_cast<std::size_t>(model.config().vocab_size);
  for (int step = 0; step < max_new && !active.empty(); ++step) {
    std::vector<Tokens> rows;
    rows.reserve(active.size());
    for (std::size_t b : active) rows.push_back(seqs[b]);
    TokenBatch tb = TokenBatch::from_sequences(rows);
    ad::Tensor<T> logits = model.forward(tb);
    auto lv = logits.values();
    std::vector<std::size_t> still;
    for (std::size_t r = 0; r < active.size(); ++r) {
      const std::size_t b = active[r];
      const std::size_t pos = seqs[b].size() - 1;
      auto row = lv.subspan((r * tb.length + pos) * V, V);
      const TokenId tok = choose<T>(row, temperature, rngs[b]);
      seqs[b].push_back(tok);
      generated[b].push_back(tok);
      if (tok != kEos && seqs[b].size() < max_len) still.push_back(b);
    }
    active = std::move(still);
  }
  return generated;
}

template <std::floating_point T>
Tokens sample(const LanguageModel<T>& model, const Tokens& x, double temperature, int max_new,
              std::uint64_t seed) {
  return sample_batch(model, std::span(&x, 1), temperature, max_new, std::span(&seed, 1)).front();
}

template <std::floating_point T>
std::vector<Tokens> greedy_decode_batch(const LanguageModel<T>& model, std::span<const Tokens> prompts,
                                        int max_new) {
  std::vector<std::uint64_t> seeds(prompts.size(), 0);
  return sample_batch(model, prompts, 0.0, max_new, seeds);
}

template <std::floating_point T>
Tokens greedy_decode(const LanguageModel<T>& model, const Tokens& x, int max_new) {
  return sample(model, x, 0.0, max_new, 0);
}

#define PKD_INSTANTIATE_DECODE(T)                                                                  \
  template std::size_t argmax(std::span<const T>);                                                \
  template TargetLogProbs<T> target_log_probs(const LanguageModel<T>&, const ResponseBatch&);     \
  template ad::Tensor<T> sequence_log_probs(const LanguageModel<T>&, const ResponseBatch&);       \
  template ad::Tensor<T> sequence_log_prob(const LanguageModel<T>&, const Tokens&, const Tokens&); \
  template std::vector<Tokens> sample_batch(const LanguageModel<T>&, std::span<const Tokens>,     \
                                            double, int, std::span<const std::uint64_t>);         \
  template Tokens sample(const LanguageModel<T>&, const Tokens&, double, int, std::uint64_t);     \
  template std::vector<Tokens> greedy_decode_batch(const LanguageModel<T>&,                       \
                                                   std::span<const Tokens>, int);                 \
  template Tokens greedy_decode(const LanguageModel<T>&, const Tokens&, int);

PKD_INSTANTIATE_DECODE(float)
PKD_INSTANTIATE_DECODE(double)

}  // namespace pkd::model
