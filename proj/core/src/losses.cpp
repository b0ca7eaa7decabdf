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

#include "proxykd/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "proxykd/autodiff/ops.hpp"
#include "proxykd/error.hpp"
#include "proxykd/model/decode.hpp"

namespace pkd::losses {

using ad::Tensor;
using model::TokenId;

void LossConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("loss config: alpha must be >= 0");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ValidationError("loss config: beta must be > 0");
}

namespace {

void check_response(const Tokens& y, const char* what) {
  if (y.empty()) throw ValidationError(std::string(what) + ": empty response");
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (y[t] == model::kPad) throw ValidationError(std::string(what) + ": <pad> inside response at position " + std::to_string(t));
  }
}

template <std::floating_point T>
model::ResponseBatch single(const LanguageModel<T>& m, const Tokens& x, const Tokens& y) {
  return model::ResponseBatch::build(std::span(&x, 1), std::span(&y, 1), m.config());
}

template <std::floating_point T>
Tensor<T> constant(std::size_t n, std::vector<T> values) {
  return Tensor<T>({n}, std::move(values));
}

// (N) -> rows [lo, lo + n) as (n).
template <std::floating_point T>
Tensor<T> slice(const Tensor<T>& v, std::size_t lo, std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), lo);
  return ad::reshape(ad::take_rows(ad::reshape(v, {v.size(), 1}), rows), {n});
}

// Cached top-K ids and logits for one position, reordered by token id.
template <std::floating_point T>
void sorted_entry(std::span<const TokenId> ids, std::span<const T> logits, int vocab, const std::string& id,
                  std::vector<TokenId>& out_ids, std::vector<T>& out_logits) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  for (std::size_t j = 0; j < order.size(); ++j) {
    const TokenId t = ids[order[j]];
    if (t < 0 || t >= vocab) throw ValidationError("truncated_kl: token id " + std::to_string(t) + " out of range in " + id);
    if (j > 0 && t == ids[order[j - 1]]) throw ValidationError("truncated_kl: duplicate token id " + std::to_string(t) + " in " + id);
    out_ids.push_back(t);
    out_logits.push_back(logits[order[j]]);
  }
}

// Per-target KL of the student rows (N, V) against the source, shape (N).
template <std::floating_point T>
Tensor<T> kl_targets(const Tensor<T>& rows, const model::ResponseBatch& batch,
                     std::span<const corpus::Example> examples, const KlSource<T>& source) {
  const std::size_t V = rows.shape().back();
  const std::size_t N = batch.targets.size();
  if (source.cache != nullptr) {
    const auto& cache = *source.cache;
    const auto K = static_cast<std::size_t>(cache.k());
    if (static_cast<std::size_t>(cache.vocab_size()) != V) {
      throw ValidationError("student loss: cache vocabulary " + std::to_string(cache.vocab_size()) +
                            " does not match student vocabulary " + std::to_string(V));
    }
    std::vector<std::size_t> flat;
    std::vector<T> p;
    flat.reserve(N * K);
    p.reserve(N * K);
    std::vector<TokenId> ids;
    std::size_t r = 0;
    for (std::size_t b = 0; b < examples.size(); ++b) {
      const auto& e = cache.at(examples[b].id);
      if (e.positions != batch.response_len[b]) {
        throw ValidationError("student loss: cache entry for " + examples[b].id + " covers " +
                              std::to_string(e.positions) + " positions, response has " +
                              std::to_string(batch.response_len[b]));
      }
      for (std::size_t t = 0; t < e.positions; ++t, ++r) {
        ids.clear();
        sorted_entry<T>(std::span(e.ids).subspan(t * K, K), std::span(e.logits).subspan(t * K, K),
                        static_cast<int>(V), examples[b].id, ids, p);
        for (TokenId id : ids) flat.push_back(r * V + static_cast<std::size_t>(id));
      }
    }
    auto q = ad::reshape(ad::gather(rows, flat), {N, K});
    return kl_rows<T>(p, q);
  }
  if (source.model != nullptr) {
    std::vector<T> p;
    {
      ad::NoGradGuard no_grad;
      auto full = source.model->forward(batch.inputs);
      if (full.shape().back() != V) throw ValidationError("student loss: KL source vocabulary does not match student");
      const auto picked = ad::take_rows(full, batch.target_rows);
      p.assign(picked.values().begin(), picked.values().end());
    }
    return kl_rows<T>(p, rows);
  }
  throw ValidationError("student loss: KL source has neither a cache nor a model");
}

}  // namespace

template <std::floating_point T>
Tensor<T> nll_loss(const LanguageModel<T>& model, const Tokens& x, const Tokens& y) {
  check_response(y, "nll_loss");
  auto tl = model::target_log_probs(model, single(model, x, y));
  return ad::scale(ad::mean(tl.picked), T(-1));
}

template <std::floating_point T>
Tensor<T> kl_rows(std::span<const T> p_logits, const Tensor<T>& q_logits) {
  if (q_logits.shape().size() != 2) throw ShapeError("kl_rows: q must be (N, C), got " + ad::shape_str(q_logits.shape()));
  const std::size_t N = q_logits.shape()[0];
  const std::size_t C = q_logits.shape()[1];
  if (p_logits.size() != N * C) {
    throw ShapeError("kl_rows: p has " + std::to_string(p_logits.size()) + " values, q is " + ad::shape_str(q_logits.shape()));
  }
  Tensor<T> lp;
  {
    ad::NoGradGuard no_grad;
    lp = ad::log_softmax(Tensor<T>({N, C}, std::vector<T>(p_logits.begin(), p_logits.end())));
  }
  std::vector<T> p(lp.values().begin(), lp.values().end());
  for (T& v : p) v = std::exp(v);
  auto diff = ad::sub(lp, ad::log_softmax(q_logits));
  return ad::sum_last(ad::mul(Tensor<T>({N, C}, std::move(p)), diff));
}

template <std::floating_point T>
Tensor<T> forward_kl(const Tensor<T>& p_logits, const Tensor<T>& q_logits) {
  if (p_logits.shape() != q_logits.shape() || p_logits.shape().empty()) {
    throw ShapeError("forward_kl: shape mismatch " + ad::shape_str(p_logits.shape()) + " vs " +
                     ad::shape_str(q_logits.shape()));
  }
  const std::size_t C = q_logits.shape().back();
  const std::size_t N = q_logits.size() / C;
  return ad::mean(kl_rows<T>(p_logits.values(), ad::reshape(q_logits, {N, C})));
}

template <std::floating_point T>
Tensor<T> truncated_kl(const blackbox::LogitCacheEntry<T>& entry, const Tensor<T>& student_logits) {
  if (student_logits.shape().size() != 1) {
    throw ShapeError("truncated_kl: student logits must be (V), got " + ad::shape_str(student_logits.shape()));
  }
  if (entry.ids.empty() || entry.ids.size() != entry.logits.size()) throw ValidationError("truncated_kl: malformed entry");
  std::vector<TokenId> ids;
  std::vector<T> p;
  const std::string where = entry.example_id + "@" + std::to_string(entry.position);
  sorted_entry<T>(entry.ids, entry.logits, static_cast<int>(student_logits.size()), where, ids, p);
  std::vector<std::size_t> flat(ids.begin(), ids.end());
  auto q = ad::reshape(ad::gather(student_logits, flat), {1, ids.size()});
  return ad::mean(kl_rows<T>(p, q));
}

template <std::floating_point T>
Tensor<T> dpo_loss(const LanguageModel<T>& policy, const LanguageModel<T>& reference, const PreferencePair& pair,
                   double beta) {
  check_response(pair.y_teacher, "dpo_loss");
  check_response(pair.y_proxy, "dpo_loss");
  if (!(beta > 0.0)) throw ValidationError("dpo_loss: beta must be > 0");
  T ref_w, ref_l;
  {
    ad::NoGradGuard no_grad;
    ref_w = model::sequence_log_prob(reference, pair.x, pair.y_teacher).item();
    ref_l = model::sequence_log_prob(reference, pair.x, pair.y_proxy).item();
  }
  auto pol_w = model::sequence_log_prob(policy, pair.x, pair.y_teacher);
  auto pol_l = model::sequence_log_prob(policy, pair.x, pair.y_proxy);
  auto margin = ad::add(ad::sub(pol_w, pol_l), Tensor<T>::scalar(ref_l - ref_w));
  return ad::scale(ad::log_sigmoid(ad::scale(margin, static_cast<T>(beta))), T(-1));
}

template <std::floating_point T>
Tensor<T> proxy_loss(const LanguageModel<T>& policy, const LanguageModel<T>& reference,
                     const corpus::Example& example, const PreferencePair& pair, double beta) {
  if (pair.x != example.x) throw ValidationError("proxy_loss: pair prompt differs from example " + example.id);
  return ad::add(nll_loss(policy, example.x, pair.y_teacher), dpo_loss(policy, reference, pair, beta));
}

template <std::floating_point T>
Tensor<T> student_loss(const LanguageModel<T>& student, const corpus::Example& example, const KlSource<T>& source,
                       double weight, double alpha) {
  if (!(alpha >= 0.0)) throw ValidationError("student_loss: alpha must be >= 0");
  if (alpha == 0.0) return nll_loss(student, example.x, example.y);
  check_response(example.y, "student_loss");
  auto batch = single(student, example.x, example.y);
  auto tl = model::target_log_probs(student, batch);
  auto nll = ad::scale(ad::mean(tl.picked), T(-1));
  auto kl = ad::mean(kl_targets(tl.logits, batch, std::span(&example, 1), source));
  return ad::add(nll, ad::scale(kl, static_cast<T>(alpha * weight)));
}

template <std::floating_point T>
Tensor<T> per_example_nll(const Tensor<T>& picked, const model::ResponseBatch& batch) {
  const std::size_t B = batch.examples();
  std::vector<T> coef(B);
  for (std::size_t b = 0; b < B; ++b) coef[b] = T(-1) / static_cast<T>(batch.response_len[b]);
  return ad::mul(ad::segment_sum(picked, batch.segment, B), constant(B, std::move(coef)));
}

template <std::floating_point T>
Tensor<T> per_example_mean(const Tensor<T>& per_target, const model::ResponseBatch& batch) {
  const std::size_t B = batch.examples();
  std::vector<T> coef(B);
  for (std::size_t b = 0; b < B; ++b) coef[b] = T(1) / static_cast<T>(batch.response_len[b]);
  return ad::mul(ad::segment_sum(per_target, batch.segment, B), constant(B, std::move(coef)));
}

template <std::floating_point T>
StudentBatchLoss<T> student_batch_loss(const LanguageModel<T>& student, std::span<const corpus::Example> examples,
                                       const KlSource<T>& source, std::span<const double> weights, double alpha) {
  if (!(alpha >= 0.0)) throw ValidationError("student loss: alpha must be >= 0");
  std::vector<Tokens> xs, ys;
  for (const auto& e : examples) {
    check_response(e.y, "student loss");
    xs.push_back(e.x);
    ys.push_back(e.y);
  }
  auto batch = model::ResponseBatch::build(xs, ys, student.config());
  auto tl = model::target_log_probs(student, batch);
  auto nll = per_example_nll(tl.picked, batch);
  StudentBatchLoss<T> out;
  out.nll = static_cast<double>(std::accumulate(nll.values().begin(), nll.values().end(), T(0))) /
            static_cast<double>(examples.size());
  if (alpha == 0.0) {
    out.loss = ad::mean(nll);
    return out;
  }
  if (weights.size() != examples.size()) throw ValidationError("student loss: need one weight per example");
  auto kl = per_example_mean(kl_targets(tl.logits, batch, examples, source), batch);
  std::vector<T> coef(examples.size());
  for (std::size_t b = 0; b < coef.size(); ++b) coef[b] = static_cast<T>(alpha * weights[b]);
  out.kl = static_cast<double>(std::accumulate(kl.values().begin(), kl.values().end(), T(0))) /
           static_cast<double>(examples.size());
  out.loss = ad::mean(ad::add(nll, ad::mul(kl, constant(examples.size(), std::move(coef)))));
  return out;
}

namespace {

template <std::floating_point T>
model::ResponseBatch stacked(const LanguageModel<T>& m, std::span<const PreferencePair> pairs) {
  std::vector<Tokens> xs, ys;
  for (const auto& p : pairs) {
    check_response(p.y_teacher, "preference pair");
    check_response(p.y_proxy, "preference pair");
    xs.push_back(p.x);
    ys.push_back(p.y_teacher);
  }
  for (const auto& p : pairs) {
    xs.push_back(p.x);
    ys.push_back(p.y_proxy);
  }
  return model::ResponseBatch::build(xs, ys, m.config());
}

template <std::floating_point T>
std::vector<T> reference_logps(const LanguageModel<T>& reference, const model::ResponseBatch& batch) {
  ad::NoGradGuard no_grad;
  const auto lp = model::sequence_log_probs(reference, batch);
  return {lp.values().begin(), lp.values().end()};
}

}  // namespace

template <std::floating_point T>
ProxyBatchLoss<T> proxy_batch_loss(const LanguageModel<T>& policy, const LanguageModel<T>& reference,
                                   std::span<const PreferencePair> pairs, double beta, bool use_pref) {
  if (pairs.empty()) throw ValidationError("proxy loss: no preference pairs");
  if (!(beta > 0.0)) throw ValidationError("proxy loss: beta must be > 0");
  const std::size_t B = pairs.size();
  auto batch = stacked(policy, pairs);
  auto ref = reference_logps(reference, batch);
  ProxyBatchLoss<T> out;
  std::vector<T> ref_delta(B);
  for (std::size_t b = 0; b < B; ++b) ref_delta[b] = ref[B + b] - ref[b];

  Tensor<T> nll, seq;
  if (use_pref) {
    auto tl = model::target_log_probs(policy, batch);
    nll = slice(per_example_nll(tl.picked, batch), 0, B);
    seq = ad::segment_sum(tl.picked, batch.segment, 2 * B);
  } else {
    // Only the preferred responses carry gradient; margins are for logging.
    std::vector<Tokens> xs, ys;
    for (const auto& p : pairs) {
      xs.push_back(p.x);
      ys.push_back(p.y_teacher);
    }
    auto wb = model::ResponseBatch::build(xs, ys, policy.config());
    nll = per_example_nll(model::target_log_probs(policy, wb).picked, wb);
    ad::NoGradGuard no_grad;
    seq = model::sequence_log_probs(policy, batch);
  }
  auto sv = seq.values();
  std::vector<T> mask(B);
  double margin_sum = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (pairs[b].y_proxy == pairs[b].y_teacher) continue;
    mask[b] = T(1);
    ++out.scored;
    margin_sum += static_cast<double>((sv[b] - sv[B + b]) + ref_delta[b]);
  }
  if (out.scored > 0) out.margin = margin_sum / static_cast<double>(out.scored);
  out.nll = static_cast<double>(std::accumulate(nll.values().begin(), nll.values().end(), T(0))) / static_cast<double>(B);
  if (!use_pref) {
    out.loss = ad::mean(nll);
    return out;
  }
  auto margin = ad::add(ad::sub(slice(seq, 0, B), slice(seq, B, B)), constant(B, std::move(ref_delta)));
  auto dpo = ad::mul(ad::scale(ad::log_sigmoid(ad::scale(margin, static_cast<T>(beta))), T(-1)),
                     constant(B, std::move(mask)));
  if (out.scored > 0) {
    out.pref = static_cast<double>(std::accumulate(dpo.values().begin(), dpo.values().end(), T(0))) /
               static_cast<double>(out.scored);
  }
  out.loss = ad::mean(ad::add(nll, dpo));
  return out;
}

template <std::floating_point T>
std::vector<double> preference_margins(const LanguageModel<T>& policy, const LanguageModel<T>& reference,
                                       std::span<const PreferencePair> pairs) {
  if (pairs.empty()) return {};
  const std::size_t B = pairs.size();
  auto batch = stacked(policy, pairs);
  auto ref = reference_logps(reference, batch);
  auto pol = reference_logps(policy, batch);
  std::vector<double> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    out[b] = static_cast<double>((pol[b] - pol[B + b]) + (ref[B + b] - ref[b]));
  }
  return out;
}

#define PKD_INSTANTIATE_LOSSES(T)                                                                               \
  template Tensor<T> nll_loss(const LanguageModel<T>&, const Tokens&, const Tokens&);                          \
  template Tensor<T> kl_rows(std::span<const T>, const Tensor<T>&);                                            \
  template Tensor<T> forward_kl(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> truncated_kl(const blackbox::LogitCacheEntry<T>&, const Tensor<T>&);                      \
  template Tensor<T> dpo_loss(const LanguageModel<T>&, const LanguageModel<T>&, const PreferencePair&, double); \
  template Tensor<T> proxy_loss(const LanguageModel<T>&, const LanguageModel<T>&, const corpus::Example&,      \
                                const PreferencePair&, double);                                                \
  template Tensor<T> student_loss(const LanguageModel<T>&, const corpus::Example&, const KlSource<T>&, double,  \
                                  double);                                                                     \
  template Tensor<T> per_example_nll(const Tensor<T>&, const model::ResponseBatch&);                          \
  template Tensor<T> per_example_mean(const Tensor<T>&, const model::ResponseBatch&);                         \
  template StudentBatchLoss<T> student_batch_loss(const LanguageModel<T>&, std::span<const corpus::Example>,   \
                                                  const KlSource<T>&, std::span<const double>, double);        \
  template ProxyBatchLoss<T> proxy_batch_loss(const LanguageModel<T>&, const LanguageModel<T>&,                \
                                              std::span<const PreferencePair>, double, bool);                  \
  template std::vector<double> preference_margins(const LanguageModel<T>&, const LanguageModel<T>&,            \
                                                  std::span<const PreferencePair>);

PKD_INSTANTIATE_LOSSES(float)
PKD_INSTANTIATE_LOSSES(double)

}  // namespace pkd::losses
