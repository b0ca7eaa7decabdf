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
#include <functional>
#include <string>
#include <vector>

#include "proxykd/blackbox/logit_cache.hpp"
#include "proxykd/corpus/example.hpp"
#include "proxykd/corpus/task.hpp"
#include "proxykd/eval/metrics.hpp"
#include "proxykd/losses/weight_stats.hpp"
#include "proxykd/model/language_model.hpp"
#include "proxykd/pipeline/run_config.hpp"

namespace pkd::pipeline {

using model::LanguageModel;

/// Called after every optimizer step with the 1-based step number.
using StepHook = std::function<void(int step)>;

/// Total optimizer steps of a stage over n examples.
int planned_steps(const StageTrain& cfg, std::size_t n);

/// Learning rate for a step: constant, or cosine-decayed to 0 at `total`.
double scheduled_lr(const StageTrain& cfg, int step, int total);

/// Next-token NLL training on (x, y) pairs. Batches are drawn from a fresh
/// seeded permutation each epoch; the last batch of an epoch may be short.
template <std::floating_point T>
void train_nll(LanguageModel<T>& model, const corpus::Examples& data, const StageTrain& cfg, std::uint64_t seed,
               eval::MetricLog* log = nullptr, const StepHook& hook = {});

/// Supervised warm-up of the proxy on d_w. Zero epochs and steps leave the
/// parameters untouched.
template <std::floating_point T>
void warmup_proxy(LanguageModel<T>& proxy, const corpus::Examples& d_w, const StageTrain& cfg, std::uint64_t seed,
                  eval::MetricLog* log = nullptr);

struct AlignmentSchedule {
  int k = 16;
  int pairs_per_prompt = 1;
  double temperature = 1.0;
  double conv_eps = 1e-3;  // 0 disables the convergence test
  int conv_window = 200;
  double beta = 0.1;
  bool use_pref = true;  // false trains on the NLL term alone
};

struct AlignIteration {
  int iteration = 0;  // 1-based
  int steps = 0;
  double nll = 0.0;
  double pref = 0.0;
  double margin = 0.0;
  std::size_t pairs = 0;
  std::size_t skipped = 0;  // sampled response equal to the teacher's
  double heldout_match = -1.0;   // -1 when no held-out set was given
  double heldout_margin = 0.0;
  std::string reference_hash;
};

struct AlignResult {
  std::vector<AlignIteration> iterations;
  int total_steps = 0;
  bool converged = false;
};

/// Iterative preference alignment on d_p. Each iteration freezes a copy of
/// the current policy as reference, makes one pass over d_p sampling a
/// proxy response per prompt, and minimises NLL on the teacher response plus
/// the preference loss. The reference is hash-checked at both ends of every
/// iteration.
template <std::floating_point T>
AlignResult align_proxy(LanguageModel<T>& proxy, const corpus::Examples& d_p, const AlignmentSchedule& schedule,
                        const StageTrain& cfg, std::uint64_t seed, eval::MetricLog* log = nullptr,
                        const corpus::Examples* heldout = nullptr, int threads = 1);

bool mode_uses_proxy(RunMode mode);
bool mode_uses_weights(RunMode mode);

template <std::floating_point T>
struct DistillResources {
  const blackbox::LogitCache<T>* cache = nullptr;  // top-K targets
  const LanguageModel<T>* kl_model = nullptr;       // full-softmax targets
  const losses::WeightStats* stats = nullptr;
};

struct DistillConfig {
  RunMode mode = RunMode::kProxyKd;
  double alpha = 100.0;
  StageTrain train;
  int eval_every = 200;
  corpus::TaskSpec task;
  int threads = 1;
};

/// Trains the student on d_s with the mode's objective. Resources are checked
/// against the mode and d_s before the first step. When test is given the
/// test accuracy is logged at step 0, every eval_every steps and at the end.
template <std::floating_point T>
void distill_student(LanguageModel<T>& student, const corpus::Examples& d_s, const DistillResources<T>& resources,
                     const DistillConfig& cfg, std::uint64_t seed, eval::MetricLog* log = nullptr,
                     const corpus::Examples* test = nullptr,
                     const std::vector<const corpus::Examples*>& training_sets = {});

/// Replaces each response by the model's greedy answer (<eos>-terminated).
template <std::floating_point T>
corpus::Examples relabel_greedy(const LanguageModel<T>& model, const corpus::Examples& examples, int max_new);

}  // namespace pkd::pipeline
