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

#include "proxykd/pipeline/experiment.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <unordered_set>

#include "proxykd/blackbox/logit_cache.hpp"
#include "proxykd/blackbox/teacher.hpp"
#include "proxykd/corpus/jsonl.hpp"
#include "proxykd/error.hpp"
#include "proxykd/eval/metrics.hpp"
#include "proxykd/eval/report.hpp"
#include "proxykd/losses/weight_stats.hpp"
#include "proxykd/model/checkpoint.hpp"
#include "proxykd/pipeline/training.hpp"
#include "proxykd/util/hash.hpp"
#include "proxykd/util/rng.hpp"

namespace pkd::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Model = model::LanguageModel<float>;

namespace {

constexpr std::size_t kMaxTeacherExamples = 20000;

// Proxy variant each proxy-backed mode distils from.
std::string proxy_for(RunMode mode) {
  switch (mode) {
    case RunMode::kTakdUnalignedProxy:
      return "warmup";
    case RunMode::kProxyKdNoPref:
      return "aligned_nopref";
    default:
      return "aligned";
  }
}

std::vector<std::string> proxy_variants(const ExperimentConfig& c) {
  std::vector<std::string> out;
  for (const char* v : {"aligned", "warmup", "aligned_nopref"}) {
    for (auto m : c.modes) {
      if (mode_uses_proxy(m) && proxy_for(m) == v) {
        out.emplace_back(v);
        break;
      }
    }
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("write failed for " + path.string());
}

json file_record(const fs::path& root, const std::string& rel) {
  return {{"path", rel}, {"sha256", util::sha256_file(root / rel)}};
}

class Runner {
 public:
  Runner(const ExperimentConfig& c, const ExperimentOptions& o) : c_(c), o_(o), root_(o.out_dir) {}

  template <typename F>
  auto stage(const std::string& name, F&& f) -> decltype(f()) {
    say(name);
    access_.set_stage(name);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        timing_[name] = seconds_since(t0);
      } else {
        auto r = f();
        timing_[name] = seconds_since(t0);
        return r;
      }
    } catch (const ValidationError& e) {
      fail(name, e.what());
      throw ValidationError("stage " + name + ": " + e.what());
    } catch (const std::exception& e) {
      fail(name, e.what());
      throw Error("stage " + name + ": " + e.what());
    }
  }

  ExperimentResult run();

 private:
  void say(const std::string& m) {
    if (o_.progress) *o_.progress << "[" << c_.name << "] " << m << std::endl;
  }
  static double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  void write_manifest() {
    write_text(root_ / "manifest.json", manifest_.dump(2) + "\n");
    write_text(root_ / "manifest.sha256", manifest_hash(manifest_) + "  manifest.json\n");
  }
  void fail(const std::string& stage, const std::string& what) {
    manifest_["status"] = "failed";
    manifest_["failed_stage"] = stage;
    manifest_["error"] = what;
    try {
      write_manifest();
    } catch (const std::exception&) {
      // Keep the original failure.
    }
  }
  std::string save_model(const Model& m, const std::string& rel) {
    fs::create_directories((root_ / rel).parent_path());
    model::save_checkpoint(m, root_ / rel);
    return rel;
  }
  std::string save_examples(const corpus::Examples& e, const std::string& rel) {
    fs::create_directories((root_ / rel).parent_path());
    corpus::save_jsonl(e, root_ / rel);
    return rel;
  }
  void run_seed(std::uint64_t seed, const blackbox::BlackBoxTeacher& teacher, const Model* teacher_model);

  const ExperimentConfig& c_;
  const ExperimentOptions& o_;
  fs::path root_;
  json manifest_;
  corpus::AccessLog access_;
  std::map<std::string, double> timing_;
  corpus::Examples test_;
};

ExperimentResult Runner::run() {
  manifest_["schema"] = "proxykd-manifest/1";
  manifest_["name"] = c_.name;
  manifest_["status"] = "running";
  manifest_["config_hash"] = c_.hash();
  manifest_["config"] = "config.txt";
  manifest_["data_seed"] = c_.data_seed;
  manifest_["seeds"] = c_.seeds;
  write_text(root_ / "config.txt", c_.to_text());
  write_manifest();

  auto test_prompts = stage("generate-test", [&] { return corpus::generate_task_corpus(c_.task, c_.n_test, c_.data_seed); });

  std::unique_ptr<blackbox::BlackBoxTeacher> teacher;
  std::optional<Model> teacher_model;
  json teacher_info{{"backend", c_.teacher}};
  if (c_.teacher == "transformer") {
    stage("train-teacher", [&] {
      std::unordered_set<std::string> exclude;
      for (const auto& e : test_prompts) exclude.insert(e.id);
      const std::size_t available = static_cast<std::size_t>(
          std::min<std::uint64_t>(c_.task.prompt_count() - c_.n_test, kMaxTeacherExamples));
      const std::size_t n = c_.teacher_examples > 0 ? c_.teacher_examples : available;
      if (n > c_.task.prompt_count() - c_.n_test) throw ValidationError("teacher_examples exceeds the non-test prompts");
      auto train = corpus::generate_task_corpus(c_.task, n, util::derive_seed(c_.teacher_seed, "teacher-data"), exclude);
      for (auto& e : train) e.y = corpus::ground_truth(c_.task, e.x);
      Model m(c_.teacher_model, model::Role::kTeacher, util::derive_seed(c_.teacher_seed, "teacher-init"));
      eval::MetricLog log("teacher");
      train_nll(m, train, c_.teacher_train, util::derive_seed(c_.teacher_seed, "teacher-train"), &log);
      const double acc = eval::task_accuracy(m, test_prompts, c_.task, {&train}, c_.threads);
      say("teacher test accuracy " + eval::format_double(acc));
      fs::create_directories(root_ / "teacher");
      log.write_csv(root_ / "teacher" / "metrics.csv");
      teacher_info["checkpoint"] = file_record(root_, save_model(m, "teacher/teacher.pkd"));
      teacher_info["metrics"] = "teacher/metrics.csv";
      teacher_info["test_accuracy"] = acc;
      teacher_info["train_examples"] = n;
      if (acc < c_.teacher_min_accuracy) {
        throw Error("teacher test accuracy " + eval::format_double(acc) + " is below teacher_min_accuracy " +
                    eval::format_double(c_.teacher_min_accuracy));
      }
      teacher_model.emplace(std::move(m));
    });
    teacher = blackbox::make_transformer_teacher(teacher_model->clone(), c_.teacher_temperature,
                                                 c_.task.max_response_len());
    teacher_info["temperature"] = c_.teacher_temperature;
  } else {
    teacher = blackbox::make_programmatic_teacher(c_.task, c_.teacher_noise);
    teacher_info["noise"] = c_.teacher_noise;
  }
  manifest_["teacher"] = teacher_info;

  test_ = stage("label-test", [&] {
    auto t = blackbox::label_examples(*teacher, test_prompts, util::derive_seed(c_.data_seed, "test-label"));
    manifest_["test_set"] = file_record(root_, save_examples(t, "data/test.jsonl"));
    return t;
  });

  manifest_["seed_runs"] = json::array();
  manifest_["runs"] = json::array();
  for (auto seed : c_.seeds) run_seed(seed, *teacher, teacher_model ? &*teacher_model : nullptr);

  stage("isolation-check", [&] {
    json entries = json::array();
    for (const auto& [stage_name, part] : access_.entries()) {
      entries.push_back({{"stage", stage_name}, {"part", corpus::part_name(part)}});
    }
    manifest_["stage_access"] = entries;
    auto bad = isolation_violations(access_);
    if (!bad.empty()) {
      std::string list;
      for (const auto& b : bad) list += (list.empty() ? "" : "; ") + b;
      throw Error("stage isolation violated: " + list);
    }
  });

  manifest_["status"] = "complete";
  write_manifest();
  stage("report", [&] { eval::emit_report({root_ / "manifest.json"}, root_ / "report"); });

  json timing(timing_);
  write_text(root_ / "timing.json", timing.dump(2) + "\n");
  ExperimentResult r;
  r.plan = stage_plan(c_);
  r.manifest = manifest_;
  r.manifest_hash = manifest_hash(manifest_);
  return r;
}

void Runner::run_seed(std::uint64_t seed, const blackbox::BlackBoxTeacher& teacher, const Model* teacher_model) {
  const std::string dir = "seed-" + std::to_string(seed);
  const std::string tag = dir + "/";
  json rec{{"seed", seed}};
  std::unordered_set<std::string> test_ids;
  for (const auto& e : test_) test_ids.insert(e.id);

  auto corpus_examples = stage(tag + "generate", [&] {
    auto prompts = corpus::generate_task_corpus(c_.task, c_.n_examples, util::derive_seed(seed, "corpus"), test_ids);
    auto labelled = blackbox::label_examples(teacher, std::move(prompts), util::derive_seed(seed, "label"));
    rec["corpus"] = file_record(root_, save_examples(labelled, tag + "data/corpus.jsonl"));
    return labelled;
  });
  const std::uint64_t split_seed = util::derive_seed(seed, "split");
  rec["split_seed"] = split_seed;
  auto split = stage(tag + "split", [&] {
    auto s = corpus::split_corpus(corpus_examples, c_.fractions, split_seed);
    rec["splits"] = {{"d_w", file_record(root_, save_examples(s.warmup(), tag + "data/d_w.jsonl"))},
                     {"d_p", file_record(root_, save_examples(s.proxy(), tag + "data/d_p.jsonl"))},
                     {"d_s", file_record(root_, save_examples(s.student(), tag + "data/d_s.jsonl"))}};
    return s;
  });
  split.set_access_log(&access_);

  std::map<std::string, Model> proxies;
  fs::create_directories(root_ / (tag + "proxy"));
  json checkpoints, logs;
  proxies.emplace("warmup", stage(tag + "warmup", [&] {
    Model p(c_.proxy_model, model::Role::kProxy, util::derive_seed(seed, "proxy-init"));
    eval::MetricLog log(tag + "warmup");
    warmup_proxy(p, split.warmup(), c_.warmup_train, util::derive_seed(seed, "warmup"), &log);
    log.write_csv(root_ / (tag + "proxy/warmup_metrics.csv"));
    checkpoints["warmup"] = file_record(root_, save_model(p, tag + "proxy/warmup.pkd"));
    logs["warmup"] = tag + "proxy/warmup_metrics.csv";
    return p;
  }));
  auto align = [&](const std::string& variant, bool use_pref) {
    Model p = proxies.at("warmup").clone();
    AlignmentSchedule sched{c_.k, c_.pairs_per_prompt, c_.align_temperature, c_.conv_eps, c_.conv_window, c_.beta, use_pref};
    eval::MetricLog log(tag + variant);
    auto result = align_proxy(p, split.proxy(), sched, c_.align_train, util::derive_seed(seed, "align"), &log, &test_,
                              c_.threads);
    std::string csv = "iteration,steps,nll,pref,margin,pairs,skipped,heldout_match,heldout_margin,reference_hash\n";
    for (const auto& it : result.iterations) {
      csv += std::to_string(it.iteration) + "," + std::to_string(it.steps) + "," + eval::format_double(it.nll) + "," +
             eval::format_double(it.pref) + "," + eval::format_double(it.margin) + "," + std::to_string(it.pairs) +
             "," + std::to_string(it.skipped) + "," + eval::format_double(it.heldout_match) + "," +
             eval::format_double(it.heldout_margin) + "," + it.reference_hash + "\n";
      say(variant + " iteration " + std::to_string(it.iteration) + ": nll " + eval::format_double(it.nll) +
          " pref " + eval::format_double(it.pref) + " held-out match " + eval::format_double(it.heldout_match));
    }
    write_text(root_ / (tag + "proxy/" + variant + "_iterations.csv"), csv);
    log.write_csv(root_ / (tag + "proxy/" + variant + "_metrics.csv"));
    checkpoints[variant] = file_record(root_, save_model(p, tag + "proxy/" + variant + ".pkd"));
    logs[variant] = tag + "proxy/" + variant + "_metrics.csv";
    logs[variant + "_iterations"] = tag + "proxy/" + variant + "_iterations.csv";
    rec["alignment"][variant] = {{"iterations", result.iterations.size()}, {"steps", result.total_steps},
                                 {"converged", result.converged}};
    return p;
  };
  proxies.emplace("aligned", stage(tag + "align", [&] { return align("aligned", true); }));
  if (c_.needs_mode(RunMode::kProxyKdNoPref)) {
    proxies.emplace("aligned_nopref", stage(tag + "align-nopref", [&] { return align("aligned_nopref", false); }));
  }

  stage(tag + "diagnostics", [&] {
    json d;
    d["heldout_match_ratio"]["warmup"] = eval::match_ratio(proxies.at("warmup"), test_, c_.threads);
    d["heldout_match_ratio"]["aligned"] = eval::match_ratio(proxies.at("aligned"), test_, c_.threads);
    if (proxies.count("aligned_nopref")) {
      d["heldout_match_ratio"]["aligned_nopref"] = eval::match_ratio(proxies.at("aligned_nopref"), test_, c_.threads);
    }
    rec["diagnostics"] = d;
  });
  stage(tag + "coverage", [&] {
    json cov = json::array();
    for (const auto& p : blackbox::topk_coverage(proxies.at("aligned"), split.student(), c_.coverage_ks)) {
      cov.push_back({{"k", p.k}, {"percent", p.percent}});
    }
    rec["diagnostics"]["aligned_topk_coverage"] = cov;
  });

  std::map<std::string, blackbox::LogitCache<float>> caches;
  std::map<std::string, losses::WeightStats> stats;
  json cache_recs, stats_recs;
  for (const auto& variant : proxy_variants(c_)) {
    caches.emplace(variant, stage(tag + "build-cache:" + variant, [&] {
      auto built = blackbox::build_logit_cache(proxies.at(variant), split.student(), c_.cache_k, c_.threads);
      const std::string rel = tag + "cache/" + variant + ".pkdc";
      fs::create_directories(root_ / (tag + "cache"));
      blackbox::write_logit_cache(built.cache, root_ / rel);
      write_text(root_ / (tag + "cache/" + variant + "_manifest.json"),
                 blackbox::serialize_skip_manifest(built.skipped, built.cache.examples().size(), c_.cache_k,
                                                   built.cache.checkpoint_hash()));
      cache_recs[variant] = file_record(root_, rel);
      cache_recs[variant]["skipped"] = built.skipped.size();
      return std::move(built.cache);
    }));
    stats.emplace(variant, stage(tag + "weight-stats:" + variant, [&] {
      auto s = losses::compute_weight_stats(proxies.at(variant), split.student(), c_.threads);
      const std::string rel = tag + "stats/" + variant + ".json";
      fs::create_directories(root_ / (tag + "stats"));
      losses::save_weight_stats(s, root_ / rel);
      stats_recs[variant] = file_record(root_, rel);
      stats_recs[variant]["mu"] = s.mu;
      stats_recs[variant]["gamma"] = s.gamma;
      return s;
    }));
  }
  rec["checkpoints"] = checkpoints;
  rec["logs"] = logs;
  if (!cache_recs.empty()) rec["caches"] = cache_recs;
  if (!stats_recs.empty()) rec["weight_stats"] = stats_recs;

  for (auto mode : c_.modes) {
    const std::string name(mode_name(mode));
    stage(tag + "distill:" + name, [&] {
      Model student(c_.student_model, model::Role::kStudent, util::derive_seed(seed, "student-init"));
      DistillResources<float> res;
      if (mode_uses_proxy(mode)) {
        res.cache = &caches.at(proxy_for(mode));
        res.stats = &stats.at(proxy_for(mode));
      } else if (mode == RunMode::kWhiteBoxFkl) {
        res.kl_model = c_.white_box == "teacher" ? teacher_model : &proxies.at("warmup");
      }
      DistillConfig dc{mode, c_.alpha, c_.student_train, c_.eval_every, c_.task, c_.threads};
      eval::MetricLog log(tag + name);
      const auto& d_s = split.student();
      distill_student(student, d_s, res, dc, util::derive_seed(seed, "distill"), &log, &test_, {&corpus_examples});
      const std::string rel = tag + name;
      fs::create_directories(root_ / rel);
      log.write_csv(root_ / (rel + "/metrics.csv"));
      const double acc = log.last("accuracy");
      say(name + " final test accuracy " + eval::format_double(acc));
      manifest_["runs"].push_back({{"run_id", rel},
                                   {"mode", name},
                                   {"seed", seed},
                                   {"task", c_.task.tag()},
                                   {"final_accuracy", acc},
                                   {"metrics", rel + "/metrics.csv"},
                                   {"checkpoint", file_record(root_, save_model(student, rel + "/student.pkd"))}});
    });
  }
  manifest_["seed_runs"].push_back(rec);
  write_manifest();
}

}  // namespace

std::vector<std::string> stage_plan(const ExperimentConfig& c) {
  std::vector<std::string> plan{"generate-test"};
  if (c.teacher == "transformer") plan.emplace_back("train-teacher");
  plan.emplace_back("label-test");
  for (auto seed : c.seeds) {
    const std::string tag = "seed-" + std::to_string(seed) + "/";
    for (const char* s : {"generate", "split", "warmup", "align"}) plan.push_back(tag + s);
    if (c.needs_mode(RunMode::kProxyKdNoPref)) plan.push_back(tag + "align-nopref");
    plan.push_back(tag + "diagnostics");
    plan.push_back(tag + "coverage");
    for (const auto& v : proxy_variants(c)) {
      plan.push_back(tag + "build-cache:" + v);
      plan.push_back(tag + "weight-stats:" + v);
    }
    for (auto m : c.modes) plan.push_back(tag + "distill:" + std::string(mode_name(m)));
  }
  plan.emplace_back("isolation-check");
  plan.emplace_back("report");
  return plan;
}

std::string manifest_hash(const nlohmann::ordered_json& manifest) { return util::sha256_hex(manifest.dump(2) + "\n"); }

std::vector<std::string> isolation_violations(const corpus::AccessLog& log) {
  std::vector<std::string> out;
  auto has_prefix = [](const std::string& s, std::string_view p) {
    const auto slash = s.find('/');
    const std::string_view local = slash == std::string::npos ? std::string_view(s) : std::string_view(s).substr(slash + 1);
    return local.substr(0, p.size()) == p;
  };
  for (const auto& [stage, part] : log.entries()) {
    bool ok = true;
    if (has_prefix(stage, "warmup")) {
      ok = part == corpus::Part::kWarmup;
    } else if (has_prefix(stage, "align")) {
      ok = part == corpus::Part::kProxy;
    } else if (has_prefix(stage, "build-cache") || has_prefix(stage, "weight-stats") || has_prefix(stage, "distill") ||
               has_prefix(stage, "coverage")) {
      ok = part == corpus::Part::kStudent;
    }
    if (!ok) out.push_back(stage + " read " + std::string(corpus::part_name(part)));
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentOptions& options) {
  config.validate();
  ExperimentResult result;
  result.plan = stage_plan(config);
  if (options.dry_run) return result;
  if (options.out_dir.empty()) throw ValidationError("run_experiment: no output directory");

  const fs::path manifest_path = options.out_dir / "manifest.json";
  if (fs::exists(options.out_dir) && !fs::is_empty(options.out_dir)) {
    if (!fs::exists(manifest_path)) {
      throw ValidationError("output directory " + options.out_dir.string() + " is not empty and holds no run");
    }
    if (!options.overwrite) {
      std::ifstream f(manifest_path);
      json existing = json::parse(f, nullptr, false);
      if (!existing.is_discarded() && existing.value("status", "") == "complete" &&
          existing.value("config_hash", "") == config.hash()) {
        result.manifest = existing;
        result.manifest_hash = manifest_hash(existing);
        result.reused = true;
        return result;
      }
      throw ValidationError("output directory " + options.out_dir.string() +
                            " holds a different or incomplete run; pass --overwrite to replace it");
    }
    fs::remove_all(options.out_dir);
  }
  fs::create_directories(options.out_dir);
  Runner runner(config, options);
  return runner.run();
}

}  // namespace pkd::pipeline
