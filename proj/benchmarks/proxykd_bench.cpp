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

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "proxykd/autodiff/adam.hpp"
#include "proxykd/autodiff/ops.hpp"
#include "proxykd/blackbox/logit_cache.hpp"
#include "proxykd/blackbox/teacher.hpp"
#include "proxykd/corpus/task.hpp"
#include "proxykd/model/decode.hpp"
#include "proxykd/model/response_batch.hpp"
#include "proxykd/util/rng.hpp"

namespace {

using namespace pkd;

ad::Tensor<float> random_tensor(ad::Shape shape, std::uint64_t seed, bool grad = false) {
  util::Rng rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::size_t count = 1;
  for (auto d : shape) count *= d;
  std::vector<float> v(count);
  for (auto& x : v) x = n(rng);
  return ad::Tensor<float>(std::move(shape), std::move(v), grad);
}

const corpus::TaskSpec kTask{corpus::TaskKind::kModAdd, 97};

model::ModelConfig config_for(int layers, int d_model) {
  model::ModelConfig c;
  c.max_seq_len = kTask.required_seq_len();
  c.n_layers = layers;
  c.n_heads = 4;
  c.d_model = d_model;
  c.d_ff = 4 * d_model;
  return c;
}

corpus::Examples labelled(std::size_t n) {
  auto teacher = blackbox::make_programmatic_teacher(kTask);
  return blackbox::label_examples(*teacher, corpus::generate_task_corpus(kTask, n, 3), 4);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_tensor({n, n}, 1);
  auto b = random_tensor({n, n}, 2);
  ad::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ad::matmul(a, b).values().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_tensor({n, n}, 1, true);
  auto b = random_tensor({n, n}, 2, true);
  for (auto _ : state) {
    auto loss = ad::sum(ad::matmul(a, b));
    ad::backward(loss);
    a.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(128);

void BM_Forward(benchmark::State& state) {
  model::LanguageModel<float> m(config_for(2, static_cast<int>(state.range(0))), model::Role::kStudent, 5);
  const auto data = labelled(64);
  std::vector<model::Tokens> seqs;
  for (const auto& e : data) seqs.push_back(e.x);
  const auto batch = model::TokenBatch::from_sequences(seqs);
  ad::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(batch).values().data());
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(128);

// One optimizer step of next-token NLL on a batch of 64 examples.
void BM_TrainStep(benchmark::State& state) {
  model::LanguageModel<float> m(config_for(2, static_cast<int>(state.range(0))), model::Role::kStudent, 6);
  const auto data = labelled(64);
  std::vector<model::Tokens> xs, ys;
  for (const auto& e : data) {
    xs.push_back(e.x);
    ys.push_back(e.y);
  }
  const auto batch = model::ResponseBatch::build(xs, ys, m.config());
  ad::AdamState<float> adam;
  for (auto _ : state) {
    auto lp = model::target_log_probs(m, batch).picked;
    auto loss = ad::scale(ad::mean(lp), -1.0f);
    ad::backward(loss);
    adam.step(m.parameters());
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_TrainStep)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_GreedyDecode(benchmark::State& state) {
  model::LanguageModel<float> m(config_for(2, 128), model::Role::kStudent, 7);
  const auto data = labelled(64);
  std::vector<model::Tokens> prompts;
  for (const auto& e : data) prompts.push_back(e.x);
  for (auto _ : state) benchmark::DoNotOptimize(model::greedy_decode_batch(m, prompts, 4));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_GreedyDecode)->Unit(benchmark::kMillisecond);

void BM_BuildLogitCache(benchmark::State& state) {
  model::LanguageModel<float> proxy(config_for(2, 128), model::Role::kProxy, 8);
  const auto data = labelled(256);
  for (auto _ : state) benchmark::DoNotOptimize(blackbox::build_logit_cache(proxy, data, 10));
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_BuildLogitCache)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
