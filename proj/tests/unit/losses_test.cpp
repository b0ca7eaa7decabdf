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

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracle.hpp"
#include "proxykd/autodiff/ops.hpp"
#include "proxykd/error.hpp"
#include "proxykd/losses/gradcheck_suite.hpp"
#include "proxykd/losses/losses.hpp"
#include "proxykd/losses/weight_stats.hpp"
#include "proxykd/model/decode.hpp"

namespace pkd::losses {
namespace {

using TD = ad::Tensor<double>;
using model::Tokens;

TD logits_of(const std::vector<double>& probs) {
  std::vector<double> z;
  for (double p : probs) z.push_back(std::log(p));
  return TD({1, probs.size()}, z);
}

std::vector<int> ints(const Tokens& t) { return {t.begin(), t.end()}; }

TEST(ForwardKl, HandComputedValue) {
  auto p = logits_of({0.7, 0.2, 0.1});
  auto q = logits_of({0.5, 0.3, 0.2});
  q.set_requires_grad(true);
  const double got = forward_kl(p, q).item();
  const double want = static_cast<double>(oracle::kl({0.7L, 0.2L, 0.1L}, {0.5L, 0.3L, 0.2L}));
  EXPECT_NEAR(got, want, 1e-12);
  EXPECT_NEAR(got, 0.0851, 1e-4);
}

TEST(ForwardKl, ZeroOnlyForEqualDistributions) {
  util::Rng rng(1);
  std::normal_distribution<double> n(0.0, 2.0);
  std::vector<double> a(4 * 7), b(4 * 7);
  for (auto& v : a) v = n(rng);
  for (auto& v : b) v = n(rng);
  TD p({4, 7}, a), q({4, 7}, b, true);
  EXPECT_EQ(forward_kl(p, TD({4, 7}, a, true)).item(), 0.0);
  // A shift of every logit leaves the distribution unchanged.
  std::vector<double> shifted = a;
  for (auto& v : shifted) v += 3.0;
  EXPECT_NEAR(forward_kl(p, TD({4, 7}, shifted, true)).item(), 0.0, 1e-14);
  const double kl = forward_kl(p, q).item();
  EXPECT_GT(kl, 0.0);
  oracle::Real mean = 0;
  for (std::size_t r = 0; r < 4; ++r) {
    oracle::Vec pr(a.begin() + r * 7, a.begin() + r * 7 + 7), qr(b.begin() + r * 7, b.begin() + r * 7 + 7);
    mean += oracle::kl(oracle::softmax(pr), oracle::softmax(qr)) / 4;
  }
  EXPECT_NEAR(kl, static_cast<double>(mean), 1e-12);
}

TEST(ForwardKl, GradientFlowsOnlyIntoStudent) {
  TD p({1, 3}, {0.1, 0.4, -0.2}, true), q({1, 3}, {0.3, -0.1, 0.2}, true);
  ad::backward(forward_kl(p, q));
  EXPECT_FALSE(p.has_grad());
  // d/dq KL = softmax(q) - softmax(p)
  auto sp = oracle::softmax({0.1L, 0.4L, -0.2L}), sq = oracle::softmax({0.3L, -0.1L, 0.2L});
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(q.grad()[i], static_cast<double>(sq[i] - sp[i]), 1e-14);
}

TEST(TruncatedKl, AtFullVocabularyEqualsForwardKlExactly) {
  util::Rng rng(2);
  std::normal_distribution<double> n(0.0, 1.5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> p(9), q(9);
    for (auto& v : p) v = n(rng);
    for (auto& v : q) v = n(rng);
    blackbox::LogitCacheEntry<double> entry{"e", 0, {}, {}};
    for (auto id : blackbox::top_k_indices<double>(p, 9)) {
      entry.ids.push_back(id);
      entry.logits.push_back(p[static_cast<std::size_t>(id)]);
    }
    TD student({9}, q, true);
    const double t = truncated_kl(entry, student).item();
    const double f = forward_kl(TD({1, 9}, p), TD({1, 9}, q, true)).item();
    EXPECT_EQ(t, f);
  }
}

TEST(TruncatedKl, MatchesBruteForceAndApproachesFullKl) {
  util::Rng rng(3);
  std::normal_distribution<double> n(0.0, 2.0);
  std::vector<double> p(16), q(16);
  for (auto& v : p) v = n(rng);
  for (auto& v : q) v = n(rng);
  const double full = forward_kl(TD({1, 16}, p), TD({1, 16}, q, true)).item();
  double prev_gap = 1e9;
  for (int k : {2, 4, 8, 12, 16}) {
    blackbox::LogitCacheEntry<double> entry{"e", 0, {}, {}};
    for (auto id : blackbox::top_k_indices<double>(p, k)) {
      entry.ids.push_back(id);
      entry.logits.push_back(p[static_cast<std::size_t>(id)]);
    }
    const double t = truncated_kl(entry, TD({16}, q, true)).item();
    EXPECT_NEAR(t, static_cast<double>(oracle::truncated_kl(p, q, k)), 1e-12);
    EXPECT_GE(t, 0.0);
    if (k >= 8) {
      EXPECT_LE(std::abs(t - full), prev_gap + 1e-12);
      prev_gap = std::abs(t - full);
    }
  }
  EXPECT_EQ(prev_gap, 0.0);
}

TEST(Nll, UniformLogitsGiveLogVocab) {
  auto m = fixtures::random_model<double>(4);
  for (auto& v : m.parameter("head.w").mutable_values()) v = 0.0;
  for (auto& v : m.parameter("head.b").mutable_values()) v = 0.0;
  const double got = nll_loss(m, {1, 4, 5, 13, 3, 7, 14}, {4, 3, 2}).item();
  EXPECT_NEAR(got, std::log(32.0), 1e-9);
}

TEST(Nll, IsPerTokenMeanOfSequenceLogProb) {
  auto m = fixtures::random_model<double>(5);
  const Tokens x = {1, 4, 5, 13, 3, 7, 14}, y = {4, 3, 2};
  const double got = nll_loss(m, x, y).item();
  EXPECT_NEAR(got, static_cast<double>(-oracle::sequence_log_prob(m, ints(x), ints(y)) / 3), 1e-12);
  EXPECT_EQ(got, -model::sequence_log_prob(m, x, y).item() / 3.0);
  EXPECT_THROW(nll_loss(m, x, Tokens{}), ValidationError);
  EXPECT_THROW(nll_loss(m, x, Tokens{4, 0, 2}), ValidationError);
}

PreferencePair pair_for(const Tokens& x, const Tokens& yw, const Tokens& yl) { return {x, yw, yl, 0}; }

TEST(Dpo, EqualPolicyAndReferenceGiveLn2) {
  auto m = fixtures::random_model<double>(6);
  auto ref = m.clone();
  auto pair = pair_for({1, 4, 5, 13, 3, 7, 14}, {4, 3, 2}, {5, 2});
  EXPECT_NEAR(dpo_loss(m, ref, pair, 0.1).item(), std::log(2.0), 1e-9);
  EXPECT_NEAR(dpo_loss(m, ref, pair, 7.0).item(), std::log(2.0), 1e-9);
}

TEST(Dpo, MatchesOracleAndSign) {
  auto policy = fixtures::random_model<double>(7);
  auto ref = fixtures::random_model<double>(8);
  const Tokens x = {1, 4, 5, 13, 3, 7, 14}, yw = {4, 3, 2}, yl = {9, 9, 2};
  const auto lw = oracle::sequence_log_prob(policy, ints(x), ints(yw)) - oracle::sequence_log_prob(ref, ints(x), ints(yw));
  const auto ll = oracle::sequence_log_prob(policy, ints(x), ints(yl)) - oracle::sequence_log_prob(ref, ints(x), ints(yl));
  const oracle::Real want = -std::log(oracle::sigmoid(0.5L * (lw - ll)));
  EXPECT_NEAR(dpo_loss(policy, ref, pair_for(x, yw, yl), 0.5).item(), static_cast<double>(want), 1e-10);
}

TEST(Dpo, LargeMarginDrivesLossToZero) {
  auto policy = fixtures::random_model<double>(9);
  auto ref = policy.clone();
  // The policy puts all its mass on token 4; the reference is unchanged.
  policy.parameter("head.b").mutable_values()[4] = 60.0;
  auto pair = pair_for({1, 4, 5, 13, 3, 7, 14}, {4, 4, 4}, {5, 5, 5});
  EXPECT_LT(dpo_loss(policy, ref, pair, 1.0).item(), 1e-12);
}

TEST(Dpo, ReferenceReceivesNoGradient) {
  auto policy = fixtures::random_model<double>(10);
  auto ref = fixtures::random_model<double>(11);
  ref.set_requires_grad(true);
  auto loss = dpo_loss(policy, ref, pair_for({1, 4, 5, 13, 3, 7, 14}, {4, 3, 2}, {5, 2}), 0.1);
  ad::backward(loss);
  for (const auto& p : ref.parameters()) {
    for (double g : p.tensor.grad()) EXPECT_EQ(g, 0.0);
  }
  bool any = false;
  for (const auto& p : policy.parameters()) {
    for (double g : p.tensor.grad()) any = any || g != 0.0;
  }
  EXPECT_TRUE(any);
}

TEST(ProxyLoss, IsNllPlusDpo) {
  auto policy = fixtures::random_model<double>(12);
  auto ref = fixtures::random_model<double>(13);
  corpus::Example ex{"e", {1, 4, 5, 13, 3, 7, 14}, {4, 3, 2}, "modadd"};
  auto pair = pair_for(ex.x, ex.y, {7, 8, 2});
  const double sum = nll_loss(policy, ex.x, ex.y).item() + dpo_loss(policy, ref, pair, 0.1).item();
  EXPECT_NEAR(proxy_loss(policy, ref, ex, pair, 0.1).item(), sum, 1e-12);
  auto same = policy.clone();
  EXPECT_NEAR(proxy_loss(policy, same, ex, pair, 0.1).item(), nll_loss(policy, ex.x, ex.y).item() + std::log(2.0), 1e-9);
  auto other = pair_for({1, 4, 5, 13, 3, 8, 14}, ex.y, {7, 8, 2});
  EXPECT_THROW(proxy_loss(policy, ref, ex, other, 0.1), ValidationError);
}

TEST(ProxyBatchLoss, AveragesPerPairLossesAndSkipsMatches) {
  auto policy = fixtures::random_model<double>(14);
  auto ref = fixtures::random_model<double>(15);
  auto ex = fixtures::labelled(3, 16);
  std::vector<PreferencePair> pairs = {pair_for(ex[0].x, ex[0].y, {7, 8, 2}), pair_for(ex[1].x, ex[1].y, ex[1].y),
                                       pair_for(ex[2].x, ex[2].y, {5, 2})};
  auto out = proxy_batch_loss(policy, ref, std::span<const PreferencePair>(pairs), 0.1);
  EXPECT_EQ(out.scored, 2u);
  const double want = (proxy_loss(policy, ref, ex[0], pairs[0], 0.1).item() + nll_loss(policy, ex[1].x, ex[1].y).item() +
                       proxy_loss(policy, ref, ex[2], pairs[2], 0.1).item()) /
                      3.0;
  EXPECT_NEAR(out.loss.item(), want, 1e-12);
  auto nopref = proxy_batch_loss(policy, ref, std::span<const PreferencePair>(pairs), 0.1, false);
  double nll = 0;
  for (const auto& e : ex) nll += nll_loss(policy, e.x, e.y).item() / 3.0;
  EXPECT_NEAR(nopref.loss.item(), nll, 1e-12);
}

TEST(StudentLoss, AlphaZeroIsNllBitForBit) {
  auto student = fixtures::random_model<float>(17, model::Role::kStudent);
  auto proxy = fixtures::random_model<float>(18);
  corpus::Example ex{"e", {1, 4, 5, 13, 3, 7, 14}, {4, 3, 2}, "modadd"};
  KlSource<float> src{nullptr, &proxy};
  EXPECT_EQ(student_loss(student, ex, src, 0.7, 0.0).item(), nll_loss(student, ex.x, ex.y).item());
}

TEST(StudentLoss, CacheTargetsMatchOracle) {
  auto student = fixtures::random_model<double>(19, model::Role::kStudent);
  auto proxy = fixtures::random_model<double>(20);
  auto ex = fixtures::labelled(1, 21)[0];
  auto cache = blackbox::build_logit_cache(proxy, {ex}, 5).cache;
  KlSource<double> src{&cache, nullptr};
  auto seq = ex.x;
  seq.insert(seq.end(), ex.y.begin(), ex.y.end() - 1);
  auto ps = oracle::forward(proxy, ints(seq));
  auto ss = oracle::forward(student, ints(seq));
  oracle::Real kl = 0;
  for (std::size_t t = 0; t < ex.y.size(); ++t) {
    const auto& pr = ps[ex.x.size() - 1 + t];
    const auto& sr = ss[ex.x.size() - 1 + t];
    kl += oracle::truncated_kl(std::vector<long double>(pr.begin(), pr.end()),
                               std::vector<long double>(sr.begin(), sr.end()), 5);
  }
  kl /= static_cast<oracle::Real>(ex.y.size());
  const oracle::Real nll = -oracle::sequence_log_prob(student, ints(ex.x), ints(ex.y)) / ex.y.size();
  EXPECT_NEAR(student_loss(student, ex, src, 0.3, 2.0).item(), static_cast<double>(nll + 2 * 0.3L * kl), 1e-10);
}

TEST(StudentLoss, ModelTargetsUseFullKl) {
  auto student = fixtures::random_model<double>(22, model::Role::kStudent);
  auto proxy = fixtures::random_model<double>(23);
  auto ex = fixtures::labelled(1, 24)[0];
  KlSource<double> src{nullptr, &proxy};
  auto seq = ex.x;
  seq.insert(seq.end(), ex.y.begin(), ex.y.end() - 1);
  auto ps = oracle::forward(proxy, ints(seq));
  auto ss = oracle::forward(student, ints(seq));
  oracle::Real kl = 0;
  for (std::size_t t = 0; t < ex.y.size(); ++t) {
    kl += oracle::kl(oracle::softmax(ps[ex.x.size() - 1 + t]), oracle::softmax(ss[ex.x.size() - 1 + t]));
  }
  kl /= static_cast<oracle::Real>(ex.y.size());
  const oracle::Real nll = -oracle::sequence_log_prob(student, ints(ex.x), ints(ex.y)) / ex.y.size();
  EXPECT_NEAR(student_loss(student, ex, src, 1.0, 100.0).item(), static_cast<double>(nll + 100 * kl), 1e-9);
}

TEST(StudentLoss, MissingCacheEntryIsNamed) {
  auto student = fixtures::random_model<float>(25, model::Role::kStudent);
  blackbox::LogitCache<float> empty(3, 32, "h");
  KlSource<float> src{&empty, nullptr};
  corpus::Example ex{"who-am-i", {1, 4, 5, 13, 3, 7, 14}, {4, 3, 2}, "modadd"};
  try {
    student_loss(student, ex, src, 1.0, 1.0);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("who-am-i"), std::string::npos);
  }
}

TEST(StudentBatchLoss, IsMeanOfPerExampleLosses) {
  auto student = fixtures::random_model<double>(26, model::Role::kStudent);
  auto proxy = fixtures::random_model<double>(27);
  auto ex = fixtures::labelled(4, 28);
  auto cache = blackbox::build_logit_cache(proxy, ex, 6).cache;
  KlSource<double> src{&cache, nullptr};
  std::vector<double> w = {0.1, 0.9, 0.5, 0.3};
  auto out = student_batch_loss(student, std::span<const corpus::Example>(ex), src, w, 3.0);
  double want = 0;
  for (std::size_t i = 0; i < ex.size(); ++i) want += student_loss(student, ex[i], src, w[i], 3.0).item() / 4.0;
  EXPECT_NEAR(out.loss.item(), want, 1e-12);
}

TEST(WeightStats, HandComputedWeights) {
  auto s = weight_stats_from_logliks({{"a", 1.0}, {"b", 0.0}, {"c", -1.0}});
  EXPECT_NEAR(s.mu, 0.0, 1e-15);
  EXPECT_NEAR(s.gamma, std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_NEAR(s.weight("a"), 0.7729, 1e-4);
  EXPECT_NEAR(s.weight("b"), 0.5, 1e-15);
  EXPECT_NEAR(s.weight("c"), 0.2271, 1e-4);
  EXPECT_THROW(s.weight("d"), ValidationError);
}

TEST(WeightStats, DegenerateSpreadGivesHalf) {
  auto s = weight_stats_from_logliks({{"a", -3.0}, {"b", -3.0}});
  EXPECT_EQ(s.weight("a"), 0.5);
  EXPECT_EQ(s.weight("b"), 0.5);
  EXPECT_THROW(weight_stats_from_logliks({}), ValidationError);
}

TEST(WeightStats, StandardisedAndIncreasing) {
  auto proxy = fixtures::random_model<double>(29);
  auto ex = fixtures::labelled(60, 30);
  auto s = compute_weight_stats(proxy, ex, 2);
  oracle::Vec ll;
  for (const auto& e : ex) {
    const auto want = oracle::sequence_log_prob(proxy, ints(e.x), ints(e.y));
    EXPECT_NEAR(s.loglik.at(e.id), static_cast<double>(want), 1e-10);
    ll.push_back(s.loglik.at(e.id));
  }
  auto [mu, sd] = oracle::mean_std(ll);
  EXPECT_NEAR(s.mu, static_cast<double>(mu), 1e-12);
  EXPECT_NEAR(s.gamma, static_cast<double>(sd), 1e-12);
  std::vector<std::pair<double, double>> pts;
  for (const auto& e : ex) pts.emplace_back(s.loglik.at(e.id), s.weight(e.id));
  std::sort(pts.begin(), pts.end());
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (pts[i].first > pts[i - 1].first) {
      EXPECT_GT(pts[i].second, pts[i - 1].second);
    }
  }
}

TEST(WeightStats, JsonRoundTrip) {
  auto s = weight_stats_from_logliks({{"a", 1.25}, {"b", -0.5}, {"c", -7.0}});
  EXPECT_EQ(weight_stats_from_json(weight_stats_to_json(s)), s);
  const auto path = std::filesystem::temp_directory_path() / "pkd_ws.json";
  save_weight_stats(s, path);
  EXPECT_EQ(load_weight_stats(path), s);
  std::filesystem::remove(path);
}

TEST(GradCheckSuite, EveryLossPasses) {
  auto results = run_loss_gradchecks(3, 5);
  EXPECT_EQ(results.size(), 7u);
  for (const auto& r : results) {
    EXPECT_LT(r.max_rel_error, 1e-4) << r.loss << ": " << r.worst;
    EXPECT_EQ(r.instances, 3);
  }
}

}  // namespace
}  // namespace pkd::losses
