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

#include "proxykd/pipeline/training.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <numeric>

#include "proxykd/autodiff/adam.hpp"
#include "proxykd/autodiff/ops.hpp"
#include "proxykd/error.hpp"
#include "proxykd/losses/losses.hpp"
#include "proxykd/model/decode.hpp"
#include "proxykd/util/rng.hpp"

namespace pkd::pipeline {

namespace {

// Seeded per-epoch permutation cut into consecutive batches.
class BatchPlan {
 public:
  BatchPlan(std::size_t n, int batch, std::uint64_t seed)
      : n_(n), batch_(static_cast<std::size_t>(batch)), seed_(seed), per_epoch_((n + batch_ - 1) / batch_) {}

  std::vector<std::size_t> batch(int step) {
    const auto s = static_cast<std::size_t>(step);
    const auto epoch = static_cast<std::int64_t>(s / per_epoch_);
    if (epoch != epoch_) {
      perm_.resize(n_);
      std::iota(perm_.begin(), perm_.end(), 0);
      util::Rng rng(util::derive_seed(seed_, {static_cast<std::uint64_t>(epoch)}));
      std::shuffle(perm_.begin(), perm_.end(), rng);
      epoch_ = epoch;
    }
    const std::size_t lo = (s % per_epoch_) * batch_;
    return {perm_.begin() + static_cast<std::ptrdiff_t>(lo),
            perm_.begin() + static_cast<std::ptrdiff_t>(std::min(n_, lo + batch_))};
  }

  std::size_t per_epoch() const { return per_epoch_; }

 private:
  std::size_t n_;
  std::size_t batch_;
  std::uint64_t seed_;
  std::size_t per_epoch_;
  std::int64_t epoch_ = -1;
  std::vector<std::size_t> perm_;
};

template <std::floating_point T>
void optimizer_step(LanguageModel<T>& model, const ad::Tensor<T>& loss, ad::AdamState<T>& adam, double clip) {
  ad::backward(loss);
  if (clip > 0) ad::clip_grad_norm<T>(model.parameters(), clip);
  adam.step(model.parameters());
}

model::Tokens terminate(model::Tokens y, int max_new) {
  if (y.empty() || y.back() != model::kEos) {
    if (y.size() >= static_cast<std::size_t>(max_new)) y.resize(static_cast<std::size_t>(max_new - 1));
    y.push_back(model::kEos);
  }
  return y;
}

}  // namespace

double scheduled_lr(const StageTrain& cfg, int step, int total) {
  if (!cfg.cosine || total <= 0) return cfg.adam.lr;
  return cfg.adam.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * step / total));
}

int planned_steps(const StageTrain& cfg, std::size_t n) {
  if (cfg.steps > 0) return cfg.steps;
  const std::size_t per_epoch = (n + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);
  return static_cast<int>(per_epoch * static_cast<std::size_t>(cfg.epochs));
}

template <std::floating_point T>
void train_nll(LanguageModel<T>& model, const corpus::Examples& data, const StageTrain& cfg, std::uint64_t seed,
               eval::MetricLog* log, const StepHook& hook) {
  if (data.empty()) throw ValidationError("train_nll: empty training set");
  if (cfg.batch_size < 1) throw ValidationError("train_nll: batch_size must be >= 1");
  const int total = planned_steps(cfg, data.size());
  BatchPlan plan(data.size(), cfg.batch_size, seed);
  ad::AdamState<T> adam(cfg.adam);
  std::vector<model::Tokens> xs, ys;
  for (int step = 0; step < total; ++step) {
    adam.set_lr(scheduled_lr(cfg, step, total));
    xs.clear();
    ys.clear();
    for (auto i : plan.batch(step)) {
      xs.push_back(data[i].x);
      ys.push_back(data[i].y);
    }
    auto batch = model::ResponseBatch::build(xs, ys, model.config());
    auto nll = losses::per_example_nll(model::target_log_probs(model, batch).picked, batch);
    auto loss = ad::mean(nll);
    const double value = static_cast<double>(loss.item());
    optimizer_step(model, loss, adam, cfg.clip);
    if (log) log->add(step + 1, "train", "loss", value);
    if (hook) hook(step + 1);
  }
}

template <std::floating_point T>
void warmup_proxy(LanguageModel<T>& proxy, const corpus::Examples& d_w, const StageTrain& cfg, std::uint64_t seed,
                  eval::MetricLog* log) {
  if (d_w.empty()) throw ValidationError("warmup_proxy: empty warm-up set");
  if (planned_steps(cfg, d_w.size()) == 0) return;
  train_nll(proxy, d_w, cfg, seed, log);
}

template <std::floating_point T>
AlignResult align_proxy(LanguageModel<T>& proxy, const corpus::Examples& d_p, const AlignmentSchedule& schedule,
                        const StageTrain& cfg, std::uint64_t seed, eval::MetricLog* log,
                        const corpus::Examples* heldout, int threads) {
  if (schedule.k < 0) throw ValidationError("align_proxy: k must be >= 0");
  if (schedule.pairs_per_prompt < 1) throw ValidationError("align_proxy: pairs_per_prompt must be >= 1");
  if (!(schedule.beta > 0)) throw ValidationError("align_proxy: beta must be > 0");
  AlignResult result;
  if (schedule.k == 0) return result;
  if (d_p.empty()) throw ValidationError("align_proxy: empty alignment set");
  for (const auto& e : d_p) {
    if (e.y.empty()) throw ValidationError("align_proxy: example " + e.id + " has no teacher response");
  }
  const int max_new = proxy.config().max_seq_len;
  const std::size_t units = d_p.size() * static_cast<std::size_t>(schedule.pairs_per_prompt);
  ad::AdamState<T> adam(cfg.adam);
  std::deque<double> recent;  // last 2 * conv_window preference losses
  const auto window = static_cast<std::size_t>(std::max(1, schedule.conv_window));

  for (int it = 1; it <= schedule.k && !result.converged; ++it) {
    LanguageModel<T> reference = proxy.clone();
    reference.set_requires_grad(false);
    AlignIteration rec;
    rec.iteration = it;
    rec.reference_hash = reference.parameter_hash();
    const std::uint64_t it_seed = util::derive_seed(seed, {static_cast<std::uint64_t>(it)});
    BatchPlan plan(units, cfg.batch_size, it_seed);
    double nll_sum = 0, pref_sum = 0, margin_sum = 0;
    std::size_t scored = 0;
    for (std::size_t b = 0; b < plan.per_epoch() && !result.converged; ++b) {
      auto idx = plan.batch(static_cast<int>(b));
      std::vector<model::Tokens> xs;
      std::vector<std::uint64_t> seeds;
      for (auto u : idx) {
        xs.push_back(d_p[u / static_cast<std::size_t>(schedule.pairs_per_prompt)].x);
        seeds.push_back(util::derive_seed(it_seed, {0x5a3b1e, static_cast<std::uint64_t>(u)}));
      }
      auto sampled = model::sample_batch(proxy, xs, schedule.temperature, max_new, seeds);
      std::vector<losses::PreferencePair> pairs;
      for (std::size_t j = 0; j < idx.size(); ++j) {
        const auto& e = d_p[idx[j] / static_cast<std::size_t>(schedule.pairs_per_prompt)];
        pairs.push_back({e.x, e.y, std::move(sampled[j]), seeds[j]});
      }
      auto out = losses::proxy_batch_loss(proxy, reference, std::span<const losses::PreferencePair>(pairs),
                                          schedule.beta, schedule.use_pref);
      const double loss_value = static_cast<double>(out.loss.item());
      optimizer_step(proxy, out.loss, adam, cfg.clip);
      ++result.total_steps;
      ++rec.steps;
      rec.pairs += pairs.size();
      rec.skipped += pairs.size() - out.scored;
      nll_sum += out.nll * static_cast<double>(pairs.size());
      pref_sum += out.pref * static_cast<double>(out.scored);
      margin_sum += out.margin * static_cast<double>(out.scored);
      scored += out.scored;
      if (log) {
        log->add(result.total_steps, "d_p", "loss", loss_value);
        log->add(result.total_steps, "d_p", "nll", out.nll);
        log->add(result.total_steps, "d_p", "pref", out.pref);
        log->add(result.total_steps, "d_p", "margin", out.margin);
      }
      if (schedule.conv_eps > 0) {
        recent.push_back(schedule.use_pref ? out.pref : out.nll);
        if (recent.size() > 2 * window) recent.pop_front();
        if (recent.size() == 2 * window) {
          const double older = std::accumulate(recent.begin(), recent.begin() + static_cast<std::ptrdiff_t>(window), 0.0);
          const double newer = std::accumulate(recent.begin() + static_cast<std::ptrdiff_t>(window), recent.end(), 0.0);
          if (std::abs(newer - older) / static_cast<double>(window) < schedule.conv_eps) result.converged = true;
        }
      }
    }
    if (reference.parameter_hash() != rec.reference_hash) {
      throw Error("align_proxy: reference parameters changed during iteration " + std::to_string(it));
    }
    rec.nll = nll_sum / static_cast<double>(std::max<std::size_t>(rec.pairs, 1));
    rec.pref = scored ? pref_sum / static_cast<double>(scored) : 0.0;
    rec.margin = scored ? margin_sum / static_cast<double>(scored) : 0.0;
    if (heldout != nullptr && !heldout->empty()) {
      rec.heldout_match = eval::match_ratio(proxy, *heldout, threads);
      std::vector<model::Tokens> xs;
      std::vector<std::uint64_t> seeds;
      for (std::size_t i = 0; i < heldout->size(); ++i) {
        xs.push_back((*heldout)[i].x);
        seeds.push_back(util::derive_seed(seed, {0x4e1d, static_cast<std::uint64_t>(it), i}));
      }
      auto sampled = model::sample_batch(proxy, xs, schedule.temperature, max_new, seeds);
      std::vector<losses::PreferencePair> pairs;
      for (std::size_t i = 0; i < heldout->size(); ++i) {
        if (sampled[i] == (*heldout)[i].y) continue;
        pairs.push_back({(*heldout)[i].x, (*heldout)[i].y, std::move(sampled[i]), seeds[i]});
      }
      auto margins = losses::preference_margins(proxy, reference, std::span<const losses::PreferencePair>(pairs));
      rec.heldout_margin = margins.empty() ? 0.0
                                           : std::accumulate(margins.begin(), margins.end(), 0.0) /
                                                 static_cast<double>(margins.size());
    }
    result.iterations.push_back(std::move(rec));
  }
  return result;
}

bool mode_uses_proxy(RunMode mode) {
  return mode != RunMode::kVanillaBlackBox && mode != RunMode::kWhiteBoxFkl;
}

bool mode_uses_weights(RunMode mode) {
  return mode == RunMode::kProxyKd || mode == RunMode::kTakdUnalignedProxy || mode == RunMode::kProxyKdNoPref;
}

template <std::floating_point T>
corpus::Examples relabel_greedy(const LanguageModel<T>& model, const corpus::Examples& examples, int max_new) {
  std::vector<model::Tokens> xs;
  for (const auto& e : examples) xs.push_back(e.x);
  auto ys = model::greedy_decode_batch(model, xs, max_new);
  corpus::Examples out = examples;
  for (std::size_t i = 0; i < out.size(); ++i) out[i].y = terminate(std::move(ys[i]), max_new);
  return out;
}

template <std::floating_point T>
void distill_student(LanguageModel<T>& student, const corpus::Examples& d_s, const DistillResources<T>& resources,
                     const DistillConfig& cfg, std::uint64_t seed, eval::MetricLog* log, const corpus::Examples* test,
                     const std::vector<const corpus::Examples*>& training_sets) {
  const std::string mode(mode_name(cfg.mode));
  auto fail = [&](const std::string& m) { throw ValidationError("distill_student (" + mode + "): " + m); };
  if (d_s.empty()) fail("empty student set");
  if (!(cfg.alpha >= 0)) fail("alpha must be >= 0");
  if (cfg.eval_every < 1) fail("eval_every must be >= 1");

  losses::KlSource<T> source{resources.cache, resources.kl_model};
  const bool uses_kl = cfg.mode != RunMode::kVanillaBlackBox;
  if (uses_kl) {
    if (cfg.mode == RunMode::kWhiteBoxFkl && resources.kl_model == nullptr) fail("needs a white-box model");
    if (resources.cache == nullptr && resources.kl_model == nullptr) fail("needs a logit cache or a proxy model");
    if (mode_uses_weights(cfg.mode) && resources.stats == nullptr) fail("needs weight statistics");
    if (cfg.mode == RunMode::kWhiteBoxFkl) source.cache = nullptr;
  }
  corpus::Examples data = cfg.mode == RunMode::kWhiteBoxFkl
                              ? relabel_greedy(*resources.kl_model, d_s, cfg.task.max_response_len())
                              : d_s;
  std::vector<double> weights(data.size(), 1.0);
  if (uses_kl) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (mode_uses_weights(cfg.mode)) weights[i] = resources.stats->weight(data[i].id);
      if (source.cache != nullptr) {
        const auto* e = source.cache->find(data[i].id);
        if (e == nullptr) fail("logit cache has no entry for example " + data[i].id);
        if (e->positions != data[i].y.size()) fail("logit cache entry for " + data[i].id + " does not cover its response");
      }
    }
  }
  const double alpha = uses_kl ? cfg.alpha : 0.0;
  if (test != nullptr) eval::check_disjoint(*test, training_sets);

  auto evaluate = [&](int step) {
    if (log && test) log->add(step, "test", "accuracy", eval::task_accuracy(student, *test, cfg.task, {}, cfg.threads));
  };
  evaluate(0);
  const int total = planned_steps(cfg.train, data.size());
  BatchPlan plan(data.size(), cfg.train.batch_size, seed);
  ad::AdamState<T> adam(cfg.train.adam);
  for (int step = 0; step < total; ++step) {
    adam.set_lr(scheduled_lr(cfg.train, step, total));
    auto idx = plan.batch(step);
    corpus::Examples batch;
    std::vector<double> w;
    for (auto i : idx) {
      batch.push_back(data[i]);
      w.push_back(weights[i]);
    }
    auto out = losses::student_batch_loss(student, std::span<const corpus::Example>(batch), source,
                                          std::span<const double>(w), alpha);
    const double value = static_cast<double>(out.loss.item());
    optimizer_step(student, out.loss, adam, cfg.train.clip);
    if (log) {
      log->add(step + 1, "d_s", "loss", value);
      log->add(step + 1, "d_s", "nll", out.nll);
      if (alpha > 0) log->add(step + 1, "d_s", "kl", out.kl);
    }
    if ((step + 1) % cfg.eval_every == 0 || step + 1 == total) evaluate(step + 1);
  }
}

#define PKD_INSTANTIATE_TRAINING(T)                                                                             \
  template void train_nll(LanguageModel<T>&, const corpus::Examples&, const StageTrain&, std::uint64_t,         \
                          eval::MetricLog*, const StepHook&);                                                   \
  template void warmup_proxy(LanguageModel<T>&, const corpus::Examples&, const StageTrain&, std::uint64_t,      \
                             eval::MetricLog*);                                                                 \
  template AlignResult align_proxy(LanguageModel<T>&, const corpus::Examples&, const AlignmentSchedule&,        \
                                   const StageTrain&, std::uint64_t, eval::MetricLog*, const corpus::Examples*, \
                                   int);                                                                        \
  template void distill_student(LanguageModel<T>&, const corpus::Examples&, const DistillResources<T>&,         \
                                const DistillConfig&, std::uint64_t, eval::MetricLog*, const corpus::Examples*,  \
                                const std::vector<const corpus::Examples*>&);                                   \
  template corpus::Examples relabel_greedy(const LanguageModel<T>&, const corpus::Examples&, int);

PKD_INSTANTIATE_TRAINING(float)
PKD_INSTANTIATE_TRAINING(double)

}  // namespace pkd::pipeline
