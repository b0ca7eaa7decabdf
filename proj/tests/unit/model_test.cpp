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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "oracle.hpp"
#include "proxykd/autodiff/ops.hpp"
#include "proxykd/error.hpp"
#include "proxykd/model/checkpoint.hpp"
#include "proxykd/model/decode.hpp"
#include "proxykd/model/language_model.hpp"
#include "proxykd/model/response_batch.hpp"
#include "proxykd/util/rng.hpp"

namespace pkd::model {
namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.vocab_size = 11;
  c.max_seq_len = 9;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 12;
  return c;
}

// Perturbs every parameter so layer norms, biases and the head all matter.
template <std::floating_point T>
void jitter(LanguageModel<T>& m, std::uint64_t seed, double scale = 0.3) {
  util::Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& p : m.parameters()) {
    for (auto& v : p.tensor.mutable_values()) v += static_cast<T>(n(rng));
  }
}

TEST(Model, ForwardMatchesNaiveReference) {
  LanguageModel<double> m(tiny(), Role::kStudent, 3);
  jitter(m, 4);
  const std::vector<Tokens> seqs = {{1, 5, 7, 3, 9}, {1, 4, 10}};
  auto logits = m.forward(TokenBatch::from_sequences(seqs));
  const std::size_t L = 5, V = 11;
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    auto ref = oracle::forward(m, std::vector<int>(seqs[b].begin(), seqs[b].end()));
    for (std::size_t t = 0; t < seqs[b].size(); ++t) {
      for (std::size_t v = 0; v < V; ++v) {
        EXPECT_NEAR(logits.values()[(b * L + t) * V + v], static_cast<double>(ref[t][v]), 1e-10);
      }
    }
  }
}

TEST(Model, LaterTokensDoNotChangeEarlierLogits) {
  LanguageModel<double> m(tiny(), Role::kStudent, 5);
  jitter(m, 6);
  auto a = m.forward(TokenBatch::from_sequences({{1, 3, 4, 5, 6}}));
  auto b = m.forward(TokenBatch::from_sequences({{1, 3, 4, 9, 2}}));
  for (std::size_t i = 0; i < 3 * 11; ++i) EXPECT_EQ(a.values()[i], b.values()[i]);
}

TEST(Model, BatchedForwardIsBitIdenticalToSingle) {
  LanguageModel<float> m(tiny(), Role::kProxy, 7);
  jitter(m, 8);
  const std::vector<Tokens> seqs = {{1, 5, 7, 3, 9}, {1, 4}, {1, 2, 2, 2, 2, 2, 2}};
  auto batched = m.forward(TokenBatch::from_sequences(seqs));
  const std::size_t L = 7, V = 11;
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    auto single = m.forward(TokenBatch::from_sequences({seqs[b]}));
    for (std::size_t i = 0; i < seqs[b].size() * V; ++i) EXPECT_EQ(single.values()[i], batched.values()[b * L * V + i]);
  }
}

TEST(Model, ConfigValidation) {
  auto c = tiny();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny();
  c.vocab_size = 2;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_NO_THROW(tiny().validate());
  const auto s = ModelConfig::student_default(32, 16), p = ModelConfig::proxy_default(32, 16),
             t = ModelConfig::teacher_default(32, 16);
  LanguageModel<float> ms(s, Role::kStudent, 1), mp(p, Role::kProxy, 1), mt(t, Role::kTeacher, 1);
  EXPECT_LT(ms.parameter_count(), mp.parameter_count());
  EXPECT_LT(mp.parameter_count(), mt.parameter_count());
}

TEST(Model, ForwardRejectsBadInput) {
  LanguageModel<float> m(tiny(), Role::kStudent, 1);
  EXPECT_THROW(m.forward(TokenBatch::from_sequences({{1, 11}})), ValidationError);
  EXPECT_THROW(m.forward(TokenBatch::from_sequences({Tokens(10, 3)})), ValidationError);
}

TEST(Model, InitialisationIsSeeded) {
  LanguageModel<float> a(tiny(), Role::kStudent, 9), b(tiny(), Role::kStudent, 9), c(tiny(), Role::kStudent, 10);
  EXPECT_EQ(a.parameter_hash(), b.parameter_hash());
  EXPECT_NE(a.parameter_hash(), c.parameter_hash());
}

TEST(Model, CloneIsIndependent) {
  LanguageModel<float> a(tiny(), Role::kStudent, 9);
  auto b = a.clone();
  EXPECT_EQ(a.parameter_hash(), b.parameter_hash());
  b.parameters()[0].tensor.mutable_values()[0] += 1.0f;
  EXPECT_NE(a.parameter_hash(), b.parameter_hash());
}

TEST(Checkpoint, RoundTripIsBitExact) {
  LanguageModel<float> m(tiny(), Role::kProxy, 11);
  jitter(m, 12);
  const auto path = std::filesystem::temp_directory_path() / "pkd_model_test.pkd";
  save_checkpoint(m, path);
  auto back = load_checkpoint<float>(path);
  EXPECT_EQ(back.config(), m.config());
  EXPECT_EQ(back.role(), Role::kProxy);
  EXPECT_EQ(back.parameter_hash(), m.parameter_hash());
  EXPECT_EQ(checkpoint_hash(back), checkpoint_hash(m));
  std::filesystem::remove(path);
}

TEST(Checkpoint, LoadingAtOtherPrecisionConverts) {
  LanguageModel<double> m(tiny(), Role::kTeacher, 13);
  auto f = deserialize_checkpoint<float>(serialize_checkpoint(m));
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    auto a = m.parameters()[i].tensor.values();
    auto b = f.parameters()[i].tensor.values();
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_EQ(b[j], static_cast<float>(a[j]));
  }
}

TEST(Checkpoint, CorruptBytesAreRejected) {
  LanguageModel<float> m(tiny(), Role::kStudent, 1);
  auto bytes = serialize_checkpoint(m);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint<float>(bad_magic), Error);
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(deserialize_checkpoint<float>(bytes), Error);
}

TEST(ResponseBatch, TargetsFollowTeacherForcingLayout) {
  auto cfg = tiny();
  std::vector<Tokens> xs = {{1, 3, 4}, {1, 5}};
  std::vector<Tokens> ys = {{6, 2}, {7, 8, 2}};
  auto rb = ResponseBatch::build(xs, ys, cfg);
  EXPECT_EQ(rb.inputs.length, 4u);
  EXPECT_EQ(rb.targets, (std::vector<TokenId>{6, 2, 7, 8, 2}));
  EXPECT_EQ(rb.segment, (std::vector<std::size_t>{0, 0, 1, 1, 1}));
  EXPECT_EQ(rb.target_rows, (std::vector<std::size_t>{2, 3, 5, 6, 7}));
  EXPECT_EQ(rb.target_flat[0], 2u * 11 + 6);
  EXPECT_THROW(ResponseBatch::build(std::vector<Tokens>{{1}}, std::vector<Tokens>{{}}, cfg), ValidationError);
  EXPECT_THROW(ResponseBatch::build(std::vector<Tokens>{Tokens(6, 3)}, std::vector<Tokens>{Tokens(4, 3)}, cfg),
               ValidationError);
}

TEST(Decode, SequenceLogProbMatchesOracle) {
  LanguageModel<double> m(tiny(), Role::kStudent, 14);
  jitter(m, 15);
  const Tokens x = {1, 3, 9}, y = {4, 5, 2};
  const double got = sequence_log_prob(m, x, y).item();
  EXPECT_NEAR(got, static_cast<double>(oracle::sequence_log_prob(m, {1, 3, 9}, {4, 5, 2})), 1e-10);
  std::vector<Tokens> xs = {x, {1, 7}}, ys = {y, {8, 2}};
  auto batch = sequence_log_probs(m, ResponseBatch::build(xs, ys, m.config()));
  EXPECT_EQ(batch.values()[0], got);
}

TEST(Decode, ArgmaxBreaksTiesLow) {
  std::vector<float> v = {0.5f, 2.0f, 2.0f, -1.0f};
  EXPECT_EQ(argmax<float>(v), 1u);
}

TEST(Decode, SamplingIsSeededAndBatchInvariant) {
  LanguageModel<float> m(tiny(), Role::kProxy, 16, 3.0);
  jitter(m, 17);
  std::vector<Tokens> prompts = {{1, 3}, {1, 4, 5}, {1, 6}};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  auto batch = sample_batch(m, prompts, 1.0, 6, seeds);
  for (std::size_t b = 0; b < prompts.size(); ++b) EXPECT_EQ(batch[b], sample(m, prompts[b], 1.0, 6, seeds[b]));
  EXPECT_EQ(sample(m, prompts[0], 1.0, 6, 42), sample(m, prompts[0], 1.0, 6, 42));
}

TEST(Decode, NeverEmitsPadOrBos) {
  // A head that strongly prefers <pad> and <bos>.
  LanguageModel<float> m(tiny(), Role::kProxy, 18);
  auto hb = m.parameter("head.b").mutable_values();
  hb[0] = 50.0f;
  hb[1] = 40.0f;
  for (std::uint64_t s = 0; s < 20; ++s) {
    for (auto t : sample(m, {1, 3}, 1.0, 6, s)) {
      EXPECT_NE(t, kPad);
      EXPECT_NE(t, kBos);
    }
  }
  for (auto t : greedy_decode(m, {1, 3}, 6)) EXPECT_GT(t, kBos);
}

TEST(Decode, StopsAtEosAndContextEnd) {
  LanguageModel<float> m(tiny(), Role::kProxy, 19);
  m.parameter("head.b").mutable_values()[kEos] = 50.0f;
  EXPECT_EQ(greedy_decode(m, {1, 3}, 6), (Tokens{kEos}));
  LanguageModel<float> chatty(tiny(), Role::kProxy, 19);
  chatty.parameter("head.b").mutable_values()[5] = 50.0f;
  auto out = greedy_decode(chatty, {1, 3, 4}, 100);
  EXPECT_EQ(out.size(), 6u);  // 3 prompt tokens + 6 = max_seq_len
  EXPECT_TRUE(std::all_of(out.begin(), out.end(), [](TokenId t) { return t == 5; }));
}

TEST(Decode, TemperatureZeroIsGreedy) {
  LanguageModel<float> m(tiny(), Role::kProxy, 20, 3.0);
  jitter(m, 21);
  EXPECT_EQ(sample(m, {1, 4}, 0.0, 6, 99), greedy_decode(m, {1, 4}, 6));
  EXPECT_THROW(sample(m, {1, 4}, -1.0, 6, 1), ValidationError);
}

}  // namespace
}  // namespace pkd::model
