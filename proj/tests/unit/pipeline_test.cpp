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

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "proxykd/blackbox/logit_cache.hpp"
#include "proxykd/error.hpp"
#include "proxykd/losses/losses.hpp"
#include "proxykd/losses/weight_stats.hpp"
#include "proxykd/pipeline/experiment.hpp"
#include "proxykd/pipeline/run_config.hpp"
#include "proxykd/pipeline/training.hpp"
#include "proxykd/util/hash.hpp"

namespace pkd::pipeline {
namespace {

namespace fs = std::filesystem;
using model::LanguageModel;

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

double mean_nll(const LanguageModel<float>& m, const corpus::Examples& data) {
  double s = 0;
  for (const auto& e : data) s += losses::nll_loss(m, e.x, e.y).item();
  return s / static_cast<double>(data.size());
}

StageTrain quick(int steps, int batch = 8, double lr = 3e-3) {
  StageTrain t;
  t.steps = steps;
  t.batch_size = batch;
  t.adam.lr = lr;
  return t;
}

TEST(Config, DefaultsCarryTheReferenceValues) {
  auto c = ExperimentConfig::from_key_values({});
  EXPECT_EQ(c.k, 16);
  EXPECT_EQ(c.cache_k, 10);
  EXPECT_EQ(c.alpha, 100.0);
  EXPECT_EQ(c.fractions, (std::array<double, 3>{0.1, 0.45, 0.45}));
  int reference = 0;
  for (const auto& k : config_keys()) reference += k.reference_default;
  EXPECT_GE(reference, 4);
}

TEST(Config, ParsingRejectsUnknownKeysDuplicatesAndBadValues) {
  auto kv = parse_key_values("# comment\nalpha = 5\nname = \"two words\"\n");
  EXPECT_EQ(kv.at("alpha"), "5");
  EXPECT_EQ(kv.at("name"), "two words");
  EXPECT_THROW(parse_key_values("a = 1\na = 2\n"), ValidationError);
  EXPECT_THROW(parse_key_values("just words\n"), ValidationError);
  EXPECT_THROW(ExperimentConfig::from_key_values({{"alhpa", "1"}}), ValidationError);
  EXPECT_THROW(ExperimentConfig::from_key_values({{"alpha", "many"}}), ValidationError);
  EXPECT_THROW(ExperimentConfig::from_key_values({{"modes", "proxy_kd,bogus"}}), ValidationError);
  EXPECT_THROW(ExperimentConfig::from_key_values({{"frac_warmup", "0.5"}}), ValidationError);
}

TEST(Config, CanonicalTextRoundTripsAndHashes) {
  auto c = ExperimentConfig::from_key_values({{"alpha", "2.5"}, {"seeds", "3,1"}});
  auto again = ExperimentConfig::from_key_values(parse_key_values(c.to_text()));
  EXPECT_EQ(again.to_text(), c.to_text());
  EXPECT_EQ(again.hash(), c.hash());
  EXPECT_NE(ExperimentConfig::from_key_values({}).hash(), c.hash());
  EXPECT_EQ(mode_name(parse_mode("proxy_kd_no_pref")), "proxy_kd_no_pref");
}

TEST(Config, WeightDecayAndScheduleKeysReachTheirStages) {
  auto c = ExperimentConfig::from_key_values(
      {{"proxy_weight_decay", "0.5"}, {"weight_decay", "0.1"}, {"lr_schedule", "cosine"}});
  EXPECT_EQ(c.warmup_train.adam.weight_decay, 0.5);
  EXPECT_EQ(c.align_train.adam.weight_decay, 0.5);
  EXPECT_EQ(c.student_train.adam.weight_decay, 0.1);
  EXPECT_TRUE(c.student_train.cosine);
  EXPECT_FALSE(c.teacher_train.cosine);
  EXPECT_THROW(ExperimentConfig::from_key_values({{"lr_schedule", "linear"}}), ValidationError);
}

TEST(Schedule, CosineStartsAtTheBaseRateAndDecaysToZero) {
  StageTrain t;
  t.adam.lr = 0.01;
  EXPECT_EQ(scheduled_lr(t, 50, 100), 0.01);
  t.cosine = true;
  EXPECT_DOUBLE_EQ(scheduled_lr(t, 0, 100), 0.01);
  EXPECT_NEAR(scheduled_lr(t, 50, 100), 0.005, 1e-15);
  EXPECT_NEAR(scheduled_lr(t, 100, 100), 0.0, 1e-15);
  EXPECT_LT(scheduled_lr(t, 60, 100), scheduled_lr(t, 40, 100));
}

TEST(Warmup, ZeroEpochsLeavesParametersUntouched) {
  auto proxy = fixtures::random_model<float>(1);
  const auto before = proxy.parameter_hash();
  StageTrain t;
  t.epochs = 0;
  warmup_proxy(proxy, fixtures::labelled(10, 2), t, 3);
  EXPECT_EQ(proxy.parameter_hash(), before);
  EXPECT_THROW(warmup_proxy(proxy, {}, t, 3), ValidationError);
}

TEST(Warmup, OneEpochOnCopyLowersNll) {
  corpus::TaskSpec copy{corpus::TaskKind::kCopy, 97, 2, 3, 3};
  auto teacher = blackbox::make_programmatic_teacher(copy);
  auto data = blackbox::label_examples(*teacher, corpus::generate_task_corpus(copy, 30, 4), 5);
  model::ModelConfig mc = fixtures::small_model(1, 32);
  LanguageModel<float> proxy(mc, model::Role::kProxy, 6);
  const double before = mean_nll(proxy, data);
  StageTrain t;
  t.epochs = 1;
  t.batch_size = 2;
  t.adam.lr = 1e-2;
  eval::MetricLog log;
  warmup_proxy(proxy, data, t, 7, &log);
  EXPECT_LT(mean_nll(proxy, data), before);
  EXPECT_EQ(log.series("loss").size(), 15u);
}

TEST(Warmup, SameSeedGivesIdenticalParameters) {
  auto data = fixtures::labelled(40, 8);
  auto a = fixtures::random_model<float>(9), b = fixtures::random_model<float>(9);
  warmup_proxy(a, data, quick(12), 10);
  warmup_proxy(b, data, quick(12), 10);
  EXPECT_EQ(a.parameter_hash(), b.parameter_hash());
}

TEST(Align, ZeroIterationsIsANoOp) {
  auto proxy = fixtures::random_model<float>(11);
  const auto before = proxy.parameter_hash();
  AlignmentSchedule s;
  s.k = 0;
  s.conv_eps = 0;
  auto r = align_proxy(proxy, fixtures::labelled(20, 12), s, quick(1), 13);
  EXPECT_TRUE(r.iterations.empty());
  EXPECT_EQ(proxy.parameter_hash(), before);
}

TEST(Align, IterationsLogAndRaiseMatchRatio) {
  auto data = fixtures::labelled(60, 14);
  auto heldout = fixtures::labelled(100, 15);
  corpus::Examples held;
  for (const auto& e : heldout) {
    if (std::none_of(data.begin(), data.end(), [&](const auto& d) { return d.id == e.id; })) held.push_back(e);
  }
  LanguageModel<float> proxy(fixtures::small_model(1, 32), model::Role::kProxy, 16);
  AlignmentSchedule s;
  s.k = 3;
  s.conv_eps = 0;
  eval::MetricLog log;
  const double before = eval::match_ratio(proxy, data);
  auto r = align_proxy(proxy, data, s, quick(0, 10, 3e-3), 17, &log, &held);
  ASSERT_EQ(r.iterations.size(), 3u);
  EXPECT_EQ(r.total_steps, 18);
  std::set<std::string> refs;
  for (const auto& it : r.iterations) {
    EXPECT_EQ(it.steps, 6);
    EXPECT_EQ(it.pairs, 60u);
    EXPECT_GE(it.heldout_match, 0.0);
    refs.insert(it.reference_hash);
  }
  EXPECT_EQ(refs.size(), 3u);  // a fresh reference snapshot every iteration
  EXPECT_EQ(r.iterations[0].reference_hash.size(), 64u);
  EXPECT_GT(eval::match_ratio(proxy, data), before);
  EXPECT_EQ(log.series("pref").size(), 18u);
}

TEST(Align, ConvergenceStopsEarly) {
  auto data = fixtures::labelled(40, 18);
  auto proxy = fixtures::random_model<float>(19);
  AlignmentSchedule s;
  s.k = 50;
  s.conv_eps = 1e9;
  s.conv_window = 2;
  auto r = align_proxy(proxy, data, s, quick(0, 10), 20);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.total_steps, 4);
}

TEST(Align, DeterministicUnderSeed) {
  auto data = fixtures::labelled(30, 21);
  AlignmentSchedule s;
  s.k = 2;
  s.conv_eps = 0;
  auto a = fixtures::random_model<float>(22), b = fixtures::random_model<float>(22);
  align_proxy(a, data, s, quick(0, 10), 23);
  align_proxy(b, data, s, quick(0, 10), 23);
  EXPECT_EQ(a.parameter_hash(), b.parameter_hash());
}

struct DistillFixture {
  corpus::Examples d_s = fixtures::labelled(40, 30);
  LanguageModel<float> proxy = fixtures::random_model<float>(31);
  blackbox::LogitCache<float> cache = blackbox::build_logit_cache(proxy, d_s, 4).cache;
  losses::WeightStats stats = losses::compute_weight_stats(proxy, d_s);

  DistillConfig config(RunMode mode, double alpha = 100.0) const {
    DistillConfig c;
    c.mode = mode;
    c.alpha = alpha;
    c.train = quick(6);
    c.eval_every = 3;
    c.task = fixtures::small_modadd();
    return c;
  }
  std::string train(RunMode mode, double alpha, const DistillResources<float>& res) const {
    LanguageModel<float> student(fixtures::small_model(), model::Role::kStudent, 32);
    distill_student(student, d_s, res, config(mode, alpha), 33);
    return student.parameter_hash();
  }
};

TEST(Distill, AlphaZeroMatchesVanillaBitForBit) {
  DistillFixture f;
  const auto vanilla = f.train(RunMode::kVanillaBlackBox, 100.0, {});
  EXPECT_EQ(f.train(RunMode::kProxyKd, 0.0, {&f.cache, nullptr, &f.stats}), vanilla);
  EXPECT_NE(f.train(RunMode::kProxyKd, 100.0, {&f.cache, nullptr, &f.stats}), vanilla);
}

TEST(Distill, NoWeightEqualsUnitWeights) {
  DistillFixture f;
  std::map<std::string, double> ll;
  for (const auto& e : f.d_s) ll[e.id] = 0.0;
  auto unit = losses::weight_stats_from_logliks(ll);
  for (auto& [id, w] : unit.weights) w = 1.0;
  EXPECT_EQ(f.train(RunMode::kProxyKdNoWeight, 100.0, {&f.cache, nullptr, nullptr}),
            f.train(RunMode::kProxyKd, 100.0, {&f.cache, nullptr, &unit}));
  EXPECT_NE(f.train(RunMode::kProxyKdNoWeight, 100.0, {&f.cache, nullptr, nullptr}),
            f.train(RunMode::kProxyKd, 100.0, {&f.cache, nullptr, &f.stats}));
}

TEST(Distill, ResourceMismatchFailsBeforeTraining) {
  DistillFixture f;
  LanguageModel<float> student(fixtures::small_model(), model::Role::kStudent, 34);
  const auto before = student.parameter_hash();
  EXPECT_THROW(distill_student(student, f.d_s, {&f.cache, nullptr, nullptr}, f.config(RunMode::kProxyKd), 1),
               ValidationError);
  EXPECT_THROW(distill_student(student, f.d_s, {nullptr, nullptr, &f.stats}, f.config(RunMode::kProxyKd), 1),
               ValidationError);
  EXPECT_THROW(distill_student(student, f.d_s, {&f.cache, nullptr, nullptr}, f.config(RunMode::kWhiteBoxFkl), 1),
               ValidationError);
  auto partial = blackbox::build_logit_cache(f.proxy, corpus::Examples(f.d_s.begin(), f.d_s.begin() + 5), 4).cache;
  EXPECT_THROW(distill_student(student, f.d_s, {&partial, nullptr, nullptr}, f.config(RunMode::kProxyKdNoWeight), 1),
               ValidationError);
  EXPECT_EQ(student.parameter_hash(), before);
}

TEST(Distill, CurvesAreLoggedAtEvalPoints) {
  DistillFixture f;
  auto test = corpus::generate_task_corpus(fixtures::small_modadd(), 160, 35);
  corpus::Examples held;
  for (auto& e : test) {
    if (std::none_of(f.d_s.begin(), f.d_s.end(), [&](const auto& d) { return d.id == e.id; })) {
      e.y = corpus::ground_truth(fixtures::small_modadd(), e.x);
      held.push_back(e);
    }
  }
  LanguageModel<float> student(fixtures::small_model(), model::Role::kStudent, 36);
  eval::MetricLog log;
  distill_student(student, f.d_s, {nullptr, &f.proxy, nullptr}, f.config(RunMode::kWhiteBoxFkl), 37, &log, &held,
                  {&f.d_s});
  auto acc = log.series("accuracy");
  ASSERT_EQ(acc.size(), 3u);
  EXPECT_EQ(acc[0].first, 0);
  EXPECT_EQ(acc[1].first, 3);
  EXPECT_EQ(acc[2].first, 6);
  EXPECT_THROW(distill_student(student, f.d_s, {}, f.config(RunMode::kVanillaBlackBox), 37, &log, &f.d_s, {&f.d_s}),
               ValidationError);
}

TEST(Distill, RelabelGreedyUsesModelAnswers) {
  auto m = fixtures::random_model<float>(38);
  auto ex = fixtures::labelled(5, 39);
  auto out = relabel_greedy(m, ex, 3);
  for (std::size_t i = 0; i < ex.size(); ++i) {
    EXPECT_EQ(out[i].id, ex[i].id);
    EXPECT_EQ(out[i].y.back(), model::kEos);
    EXPECT_LE(out[i].y.size(), 3u);
  }
}

TEST(Isolation, ViolationsAreReported) {
  corpus::AccessLog log;
  log.set_stage("seed-1/warmup");
  log.record(corpus::Part::kWarmup);
  log.set_stage("seed-1/align");
  log.record(corpus::Part::kProxy);
  log.set_stage("seed-1/distill:proxy_kd");
  log.record(corpus::Part::kStudent);
  EXPECT_TRUE(isolation_violations(log).empty());
  log.record(corpus::Part::kProxy);
  log.set_stage("seed-1/align");
  log.record(corpus::Part::kStudent);
  EXPECT_EQ(isolation_violations(log).size(), 2u);
}

ExperimentConfig small_experiment() {
  return ExperimentConfig::from_key_values({{"name", "unit"},
                                            {"modulus", "31"},
                                            {"n_examples", "300"},
                                            {"n_test", "40"},
                                            {"seeds", "1,2"},
                                            {"proxy_layers", "1"},
                                            {"proxy_heads", "2"},
                                            {"proxy_d_model", "16"},
                                            {"proxy_d_ff", "32"},
                                            {"student_layers", "1"},
                                            {"student_heads", "2"},
                                            {"student_d_model", "16"},
                                            {"student_d_ff", "32"},
                                            {"warmup_steps", "5"},
                                            {"k", "2"},
                                            {"conv_eps", "0"},
                                            {"steps", "6"},
                                            {"eval_every", "3"},
                                            {"batch_size", "16"},
                                            {"modes", "proxy_kd,vanilla_blackbox,white_box_fkl,takd_unaligned_proxy,"
                                                      "proxy_kd_no_pref,proxy_kd_no_weight"}});
}

TEST(Experiment, DryRunPlansWithoutTouchingDisk) {
  auto cfg = small_experiment();
  const auto dir = fs::temp_directory_path() / "pkd_exp_dry";
  fs::remove_all(dir);
  auto r = run_experiment(cfg, {dir, true, false, nullptr});
  EXPECT_FALSE(fs::exists(dir));
  EXPECT_EQ(r.plan, stage_plan(cfg));
  EXPECT_NE(std::find(r.plan.begin(), r.plan.end(), "seed-2/distill:white_box_fkl"), r.plan.end());
  EXPECT_EQ(r.plan.back(), "report");
}

TEST(Experiment, RunsAllModesReproduciblyAndReusesCompleteRuns) {
  auto cfg = small_experiment();
  const auto a = fs::temp_directory_path() / "pkd_exp_a";
  const auto b = fs::temp_directory_path() / "pkd_exp_b";
  fs::remove_all(a);
  fs::remove_all(b);
  auto ra = run_experiment(cfg, {a, false, false, nullptr});
  auto rb = run_experiment(cfg, {b, false, false, nullptr});
  EXPECT_EQ(ra.manifest_hash, rb.manifest_hash);
  EXPECT_EQ(ra.manifest["status"], "complete");
  EXPECT_EQ(ra.manifest["runs"].size(), 12u);
  EXPECT_EQ(slurp(a / "manifest.sha256").substr(0, 64), util::sha256_file(a / "manifest.json"));
  for (const auto& run : ra.manifest["runs"]) {
    const auto rel = run["metrics"].get<std::string>();
    EXPECT_EQ(slurp(a / rel), slurp(b / rel)) << rel;
    EXPECT_TRUE(fs::exists(a / run["checkpoint"]["path"].get<std::string>()));
  }
  EXPECT_TRUE(fs::exists(a / "report" / "report.json"));
  EXPECT_EQ(slurp(a / "report" / "report.csv"), slurp(b / "report" / "report.csv"));

  auto again = run_experiment(cfg, {a, false, false, nullptr});
  EXPECT_TRUE(again.reused);
  EXPECT_EQ(again.manifest_hash, ra.manifest_hash);
  auto changed = cfg;
  changed.alpha = 5.0;
  EXPECT_THROW(run_experiment(changed, {a, false, false, nullptr}), ValidationError);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Experiment, FailedStageLeavesPartialManifest) {
  auto cfg = small_experiment();
  cfg.teacher = "transformer";
  cfg.teacher_model.n_layers = 1;
  cfg.teacher_model.n_heads = 2;
  cfg.teacher_model.d_model = 16;
  cfg.teacher_model.d_ff = 32;
  cfg.teacher_train.steps = 2;
  cfg.teacher_min_accuracy = 0.99;
  const auto dir = fs::temp_directory_path() / "pkd_exp_fail";
  fs::remove_all(dir);
  try {
    run_experiment(cfg, {dir, false, false, nullptr});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("train-teacher"), std::string::npos);
  }
  auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["status"], "failed");
  EXPECT_EQ(manifest["failed_stage"], "train-teacher");
  fs::remove_all(dir);
}

TEST(Experiment, RefusesForeignDirectories) {
  const auto dir = fs::temp_directory_path() / "pkd_exp_foreign";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "precious.txt") << "keep";
  EXPECT_THROW(run_experiment(small_experiment(), {dir, false, true, nullptr}), ValidationError);
  EXPECT_TRUE(fs::exists(dir / "precious.txt"));
  fs::remove_all(dir);
}

}  // namespace
}  // namespace pkd::pipeline
