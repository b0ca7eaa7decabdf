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

#include "proxykd/losses/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>

#include "proxykd/autodiff/gradcheck.hpp"
#include "proxykd/blackbox/logit_cache.hpp"
#include "proxykd/losses/losses.hpp"
#include "proxykd/util/rng.hpp"

namespace pkd::losses {

namespace {

using Model = model::LanguageModel<double>;
using ad::Tensor;
using model::TokenId;

constexpr int kVocab = 9;

model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.vocab_size = kVocab;
  c.max_seq_len = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  return c;
}

// Random weights large enough that every gradient path is exercised.
Model random_model(util::Rng& rng) {
  Model m(tiny_config(), model::Role::kStudent, rng());
  std::normal_distribution<double> n(0.0, 0.4);
  for (auto& p : m.parameters()) {
    for (auto& v : p.tensor.mutable_values()) v = n(rng);
  }
  return m;
}

Tokens random_tokens(util::Rng& rng, std::size_t len, bool eos) {
  std::uniform_int_distribution<int> tok(3, kVocab - 1);
  Tokens t(len);
  for (auto& v : t) v = tok(rng);
  if (eos) t.back() = model::kEos;
  return t;
}

Tokens random_prompt(util::Rng& rng) {
  auto x = random_tokens(rng, 3, false);
  x.front() = model::kBos;
  return x;
}

std::vector<Tensor<double>> params_of(Model& m) {
  std::vector<Tensor<double>> out;
  for (auto& p : m.parameters()) out.push_back(p.tensor);
  return out;
}

void merge(LossGradCheck& into, const ad::GradCheckResult& r) {
  ++into.instances;
  into.coords += r.coords_checked;
  if (r.max_rel_error >= into.max_rel_error) {
    into.max_rel_error = r.max_rel_error;
    into.worst = r.worst;
  }
}

std::vector<double> random_logits(util::Rng& rng, std::size_t n, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

std::vector<LossGradCheck> run_loss_gradchecks(int instances, std::uint64_t seed) {
  std::vector<LossGradCheck> out;
  ad::GradCheckOptions opt;
  opt.max_coords_per_input = 6;
  auto add = [&](const std::string& name, const std::function<ad::GradCheckResult(util::Rng&)>& one) {
    LossGradCheck rec{name, 0, 0, 0.0, {}};
    for (int i = 0; i < instances; ++i) {
      util::Rng rng(util::derive_seed(seed, {std::hash<std::string>{}(name), static_cast<std::uint64_t>(i)}));
      opt.seed = rng();
      merge(rec, one(rng));
    }
    out.push_back(std::move(rec));
  };

  add("nll", [&](util::Rng& rng) {
    Model m = random_model(rng);
    auto x = random_prompt(rng);
    auto y = random_tokens(rng, 3, true);
    return ad::check_gradients([&] { return nll_loss(m, x, y); }, params_of(m), opt);
  });

  add("forward_kl", [&](util::Rng& rng) {
    auto p = random_logits(rng, 3 * kVocab, 1.5);
    Tensor<double> q({3, kVocab}, random_logits(rng, 3 * kVocab, 1.5), true);
    Tensor<double> pt({3, kVocab}, p);
    return ad::check_gradients([&] { return forward_kl(pt, q); }, {q}, opt);
  });

  add("truncated_kl", [&](util::Rng& rng) {
    std::vector<TokenId> ids(kVocab);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(4);
    auto logits = random_logits(rng, 4, 1.5);
    std::sort(logits.rbegin(), logits.rend());
    blackbox::LogitCacheEntry<double> entry{"gc", 0, ids, logits};
    Tensor<double> s({kVocab}, random_logits(rng, kVocab, 1.5), true);
    return ad::check_gradients([&] { return truncated_kl(entry, s); }, {s}, opt);
  });

  add("dpo", [&](util::Rng& rng) {
    Model policy = random_model(rng);
    Model reference = random_model(rng);
    PreferencePair pair{random_prompt(rng), random_tokens(rng, 3, true), random_tokens(rng, 4, false), 0};
    return ad::check_gradients([&] { return dpo_loss(policy, reference, pair, 0.5); }, params_of(policy), opt);
  });

  add("student_weighted_kl_cache", [&](util::Rng& rng) {
    Model student = random_model(rng);
    Model proxy = random_model(rng);
    corpus::Example e{"gc:0", random_prompt(rng), random_tokens(rng, 3, true), "gc"};
    auto built = blackbox::build_logit_cache(proxy, {e}, 4);
    const double w = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
    KlSource<double> src{&built.cache, nullptr};
    return ad::check_gradients([&] { return student_loss(student, e, src, w, 2.0); }, params_of(student), opt);
  });

  add("student_weighted_kl_model", [&](util::Rng& rng) {
    Model student = random_model(rng);
    Model proxy = random_model(rng);
    corpus::Example e{"gc:0", random_prompt(rng), random_tokens(rng, 3, true), "gc"};
    const double w = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
    KlSource<double> src{nullptr, &proxy};
    return ad::check_gradients([&] { return student_loss(student, e, src, w, 2.0); }, params_of(student), opt);
  });

  add("proxy", [&](util::Rng& rng) {
    Model policy = random_model(rng);
    Model reference = random_model(rng);
    corpus::Example e{"gc:0", random_prompt(rng), random_tokens(rng, 3, true), "gc"};
    PreferencePair pair{e.x, e.y, random_tokens(rng, 2, true), 0};
    return ad::check_gradients([&] { return proxy_loss(policy, reference, e, pair, 0.5); }, params_of(policy), opt);
  });

  return out;
}

}  // namespace pkd::losses
