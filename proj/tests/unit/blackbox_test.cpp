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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "oracle.hpp"
#include "proxykd/blackbox/logit_cache.hpp"
#include "proxykd/blackbox/teacher.hpp"
#include "proxykd/error.hpp"
#include "proxykd/model/checkpoint.hpp"
#include "proxykd/model/decode.hpp"

namespace pkd::blackbox {
namespace {

namespace fs = std::filesystem;
using model::kEos;

TEST(Teacher, ProgrammaticTeacherAnswersCorrectly) {
  auto spec = fixtures::small_modadd();
  auto t = make_programmatic_teacher(spec);
  for (const auto& e : corpus::generate_task_corpus(spec, 40, 3)) EXPECT_EQ(t->generate(e.x, 5), corpus::ground_truth(spec, e.x));
}

TEST(Teacher, NoiseRateIsRespectedAndDeterministic) {
  auto spec = fixtures::small_modadd();
  auto t = make_programmatic_teacher(spec, 0.3);
  auto ex = corpus::generate_task_corpus(spec, 169, 3);
  int wrong = 0;
  for (const auto& e : ex) {
    auto y = t->generate(e.x, 11);
    EXPECT_EQ(y, t->generate(e.x, 11));
    EXPECT_EQ(y.back(), kEos);
    wrong += y != corpus::ground_truth(spec, e.x);
  }
  EXPECT_GT(wrong, 169 * 0.15);
  EXPECT_LT(wrong, 169 * 0.45);
  EXPECT_THROW(make_programmatic_teacher(spec, 1.5), ValidationError);
}

TEST(Teacher, BatchEqualsSingleCalls) {
  auto m = fixtures::random_model<float>(1, model::Role::kTeacher);
  auto t = make_transformer_teacher(m, 1.0, 3);
  std::vector<model::Tokens> xs = {{1, 3, 4, 13, 3, 5, 14}, {1, 4, 4, 13, 3, 3, 14}};
  std::vector<std::uint64_t> seeds = {8, 9};
  auto batch = t->generate_batch(xs, seeds);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    EXPECT_EQ(batch[i], t->generate(xs[i], seeds[i]));
    EXPECT_EQ(batch[i].back(), kEos);
    EXPECT_LE(batch[i].size(), 3u);
  }
}

TEST(Teacher, LabelsDependOnlyOnExampleAndSeed) {
  auto m = fixtures::random_model<float>(2, model::Role::kTeacher);
  auto t = make_transformer_teacher(m, 1.0, 3);
  auto ex = corpus::generate_task_corpus(fixtures::small_modadd(), 100, 4);
  auto a = label_examples(*t, ex, 7);
  std::reverse(ex.begin(), ex.end());
  auto b = label_examples(*t, ex, 7);
  std::reverse(b.begin(), b.end());
  EXPECT_EQ(a, b);
  for (const auto& e : a) EXPECT_FALSE(e.y.empty());
}

TEST(TopK, MatchesBruteForceWithTies) {
  util::Rng rng(3);
  std::uniform_int_distribution<int> d(-3, 3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> v(12);
    for (auto& x : v) x = static_cast<float>(d(rng));
    for (int k : {1, 4, 12}) {
      auto got = top_k_indices<float>(v, k);
      auto want = oracle::top_k(v, k);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], want[i]);
    }
  }
  EXPECT_THROW(top_k_indices<float>(std::vector<float>{1.0f}, 2), ValidationError);
}

TEST(LogitCache, EntriesHoldTopKOfTeacherForcedLogits) {
  auto proxy = fixtures::random_model<float>(5);
  auto ex = fixtures::labelled(30, 6);
  auto built = build_logit_cache(proxy, ex, 4);
  EXPECT_TRUE(built.skipped.empty());
  EXPECT_EQ(built.cache.examples().size(), 30u);
  EXPECT_EQ(built.cache.checkpoint_hash(), model::checkpoint_hash(proxy));
  for (const auto& e : ex) {
    auto seq = e.x;
    seq.insert(seq.end(), e.y.begin(), e.y.end() - 1);
    auto logits = proxy.forward(model::TokenBatch::from_sequences({seq}));
    for (std::size_t t = 0; t < e.y.size(); ++t) {
      const std::size_t row = e.x.size() - 1 + t;
      std::vector<float> full(logits.values().begin() + row * 32, logits.values().begin() + row * 32 + 32);
      auto entry = built.cache.entry(e.id, t);
      auto want = oracle::top_k(full, 4);
      for (int j = 0; j < 4; ++j) {
        EXPECT_EQ(entry.ids[j], want[j]);
        EXPECT_EQ(entry.logits[j], full[static_cast<std::size_t>(want[j])]);
      }
    }
  }
}

TEST(LogitCache, FileRoundTripIsBitExact) {
  auto proxy = fixtures::random_model<float>(7);
  auto built = build_logit_cache(proxy, fixtures::labelled(25, 8), 3);
  const auto path = fs::temp_directory_path() / "pkd_cache_test.pkdc";
  write_logit_cache(built.cache, path);
  auto back = read_logit_cache<float>(path);
  EXPECT_TRUE(back == built.cache);
  EXPECT_THROW(read_logit_cache<double>(path), ValidationError);
  {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    f << "x";
  }
  EXPECT_THROW(read_logit_cache<float>(path), ValidationError);
  fs::remove(path);
}

TEST(LogitCache, BuildIsDeterministicAcrossThreadCounts) {
  auto proxy = fixtures::random_model<float>(9);
  auto ex = fixtures::labelled(70, 10);
  auto a = build_logit_cache(proxy, ex, 5, 1);
  auto b = build_logit_cache(proxy, ex, 5, 3);
  EXPECT_TRUE(a.cache == b.cache);
}

TEST(LogitCache, OverlongExamplesAreSkippedAndListed) {
  auto proxy = fixtures::random_model<float>(11);
  auto ex = fixtures::labelled(5, 12);
  ex.push_back({"zz-long", model::Tokens(9, 3), {4, 4, 2}, "modadd"});
  auto built = build_logit_cache(proxy, ex, 2);
  ASSERT_EQ(built.skipped.size(), 1u);
  EXPECT_EQ(built.skipped[0].id, "zz-long");
  EXPECT_EQ(built.cache.find("zz-long"), nullptr);
  auto manifest = nlohmann::json::parse(serialize_skip_manifest(built.skipped, 5, 2, "h"));
  EXPECT_EQ(manifest["skipped"].size(), 1u);
}

TEST(LogitCache, LookupsFailNamingTheExample) {
  LogitCache<float> c(2, 32, "h");
  c.add({"b", 1, {3, 4}, {1.0f, 0.5f}});
  EXPECT_THROW(c.add({"a", 1, {3, 4}, {1.0f, 0.5f}}), ValidationError);
  EXPECT_THROW(c.add({"c", 1, {3, 3}, {1.0f, 0.5f}}), ValidationError);
  try {
    c.at("missing-id");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("missing-id"), std::string::npos);
  }
  EXPECT_THROW(c.entry("b", 1), ValidationError);
  EXPECT_THROW(LogitCache<float>(0, 32, "h"), ValidationError);
}

TEST(Coverage, MonotoneAndFullAtVocabSize) {
  auto proxy = fixtures::random_model<float>(13);
  auto ex = fixtures::labelled(40, 14);
  auto points = topk_coverage(proxy, ex, {1, 2, 4, 8, 16, 32});
  ASSERT_EQ(points.size(), 6u);
  for (std::size_t i = 1; i < points.size(); ++i) EXPECT_GE(points[i].percent, points[i - 1].percent);
  EXPECT_EQ(points.back().percent, 100.0);
  EXPECT_THROW(topk_coverage(proxy, ex, {33}), ValidationError);
}

TEST(Coverage, MatchesDirectCount) {
  auto proxy = fixtures::random_model<float>(15);
  auto ex = fixtures::labelled(20, 16);
  int hit = 0, total = 0;
  for (const auto& e : ex) {
    auto seq = e.x;
    seq.insert(seq.end(), e.y.begin(), e.y.end() - 1);
    auto logits = proxy.forward(model::TokenBatch::from_sequences({seq}));
    for (std::size_t t = 0; t < e.y.size(); ++t) {
      const std::size_t row = e.x.size() - 1 + t;
      oracle::Vec z(logits.values().begin() + row * 32, logits.values().begin() + row * 32 + 32);
      auto p = oracle::softmax(z);
      std::sort(p.begin(), p.end(), std::greater<>());
      hit += p[0] + p[1] + p[2] >= 0.5L;
      ++total;
    }
  }
  auto pts = topk_coverage(proxy, ex, {3}, 0.5);
  EXPECT_NEAR(pts[0].percent, 100.0 * hit / total, 1e-9);
}

}  // namespace
}  // namespace pkd::blackbox
