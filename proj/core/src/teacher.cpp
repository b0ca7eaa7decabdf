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

#include "proxykd/blackbox/teacher.hpp"

#include <algorithm>
#include <random>

#include "proxykd/error.hpp"
#include "proxykd/model/decode.hpp"
#include "proxykd/util/rng.hpp"

namespace pkd::blackbox {

std::vector<Tokens> BlackBoxTeacher::generate_batch(std::span<const Tokens> prompts,
                                                    std::span<const std::uint64_t> seeds) const {
  if (prompts.size() != seeds.size()) throw ValidationError("generate_batch: need one seed per prompt");
  std::vector<Tokens> out;
  out.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) out.push_back(generate(prompts[i], seeds[i]));
  return out;
}

namespace {

std::uint64_t prompt_seed(const Tokens& x, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto t : x) {
    h ^= static_cast<std::uint64_t>(t) + 0x9e37;
    h *= 1099511628211ULL;
  }
  return util::derive_seed(seed, {h});
}

class ProgrammaticTeacher final : public BlackBoxTeacher {
 public:
  ProgrammaticTeacher(corpus::TaskSpec spec, double noise_rate) : spec_(spec), noise_rate_(noise_rate) {
    spec_.validate();
    if (noise_rate < 0.0 || noise_rate > 1.0) throw ValidationError("programmatic teacher: noise_rate must be in [0,1]");
  }

  Tokens generate(const Tokens& x, std::uint64_t seed) const override {
    if (noise_rate_ == 0.0) return corpus::ground_truth(spec_, x);
    util::Rng rng(prompt_seed(x, seed));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const bool corrupt = noise_rate_ >= 1.0 || unif(rng) < noise_rate_;
    if (!corrupt) return corpus::ground_truth(spec_, x);
    return corpus::perturbed_answer(spec_, x, rng());
  }

 private:
  corpus::TaskSpec spec_;
  double noise_rate_;
};

class TransformerTeacher final : public BlackBoxTeacher {
 public:
  TransformerTeacher(model::LanguageModel<float> model, double temperature, int max_new)
      : model_(std::move(model)), temperature_(temperature), max_new_(max_new) {
    if (temperature < 0) throw ValidationError("transformer teacher: temperature must be >= 0");
    if (max_new < 1) throw ValidationError("transformer teacher: max_new must be >= 1");
    model_.set_requires_grad(false);
  }

  Tokens generate(const Tokens& x, std::uint64_t seed) const override {
    return generate_batch(std::span(&x, 1), std::span(&seed, 1)).front();
  }

  std::vector<Tokens> generate_batch(std::span<const Tokens> prompts,
                                     std::span<const std::uint64_t> seeds) const override {
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      if (prompts[i].size() >= static_cast<std::size_t>(model_.config().max_seq_len)) {
        throw ValidationError("transformer teacher: prompt " + std::to_string(i) + " of length " +
                              std::to_string(prompts[i].size()) + " leaves no room under max_seq_len " +
                              std::to_string(model_.config().max_seq_len));
      }
    }
    auto out = model::sample_batch(model_, prompts, temperature_, max_new_, seeds);
    for (auto& y : out) {
      if (y.empty() || y.back() != model::kEos) {
        if (y.size() >= static_cast<std::size_t>(max_new_)) y.resize(static_cast<std::size_t>(max_new_ - 1));
        y.push_back(model::kEos);
      }
    }
    return out;
  }

 private:
  model::LanguageModel<float> model_;
  double temperature_;
  int max_new_;
};

}  // namespace

std::unique_ptr<BlackBoxTeacher> make_programmatic_teacher(corpus::TaskSpec spec, double noise_rate) {
  return std::make_unique<ProgrammaticTeacher>(spec, noise_rate);
}

std::unique_ptr<BlackBoxTeacher> make_transformer_teacher(model::LanguageModel<float> model,
                                                          double temperature, int max_new) {
  return std::make_unique<TransformerTeacher>(std::move(model), temperature, max_new);
}

corpus::Examples label_examples(const BlackBoxTeacher& teacher, corpus::Examples examples, std::uint64_t seed) {
  constexpr std::size_t kChunk = 64;
  for (std::size_t lo = 0; lo < examples.size(); lo += kChunk) {
    const std::size_t hi = std::min(examples.size(), lo + kChunk);
    std::vector<Tokens> xs;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = lo; i < hi; ++i) {
      xs.push_back(examples[i].x);
      seeds.push_back(util::derive_seed(seed, examples[i].id));
    }
    auto ys = teacher.generate_batch(xs, seeds);
    for (std::size_t i = lo; i < hi; ++i) examples[i].y = std::move(ys[i - lo]);
  }
  return examples;
}

}  // namespace pkd::blackbox
