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

// proxykd: every pipeline stage as a subcommand, plus the full experiment
// runner.
//
// Exit codes: 0 success, 2 usage (bad flags, missing inputs, existing
// outputs without --overwrite), 3 validation, 4 runtime failure. Failures
// print one line to stderr:  error kind=<usage|validation|runtime> code=<n>: <message>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <iostream>
#include <string>
#include <unordered_set>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "proxykd/blackbox/logit_cache.hpp"
#include "proxykd/blackbox/teacher.hpp"
#include "proxykd/corpus/jsonl.hpp"
#include "proxykd/corpus/split.hpp"
#include "proxykd/error.hpp"
#include "proxykd/eval/metrics.hpp"
#include "proxykd/eval/report.hpp"
#include "proxykd/losses/gradcheck_suite.hpp"
#include "proxykd/losses/weight_stats.hpp"
#include "proxykd/model/checkpoint.hpp"
#include "proxykd/pipeline/experiment.hpp"
#include "proxykd/pipeline/run_config.hpp"
#include "proxykd/pipeline/training.hpp"
#include "proxykd/util/rng.hpp"

namespace fs = std::filesystem;
using namespace pkd;

namespace {

constexpr int kUsage = 2;
constexpr int kValidation = 3;
constexpr int kRuntime = 4;
constexpr const char* kOutputRootEnv = "PKD_OUTPUT_ROOT";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 1;
  int threads = 0;
  bool overwrite = false;
};

int fail(const char* kind, int code, std::string message) {
  for (auto& c : message) {
    if (c == '\n') c = ' ';
  }
  std::cerr << "error kind=" << kind << " code=" << code << ": " << message << "\n";
  return code;
}

pipeline::ExperimentConfig load_config(const Common& common) {
  pipeline::KeyValues kv;
  if (!common.config.empty()) {
    if (!fs::exists(common.config)) throw UsageError("config file not found: " + common.config);
    kv = pipeline::load_key_values(common.config);
  }
  for (const auto& s : common.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (common.threads > 0) kv["threads"] = std::to_string(common.threads);
  return pipeline::ExperimentConfig::from_key_values(kv);
}

fs::path output_path(const std::string& p) {
  fs::path path(p);
  if (path.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') path = fs::path(root) / path;
  }
  return path;
}

fs::path output_file(const std::string& p, const Common& common) {
  auto path = output_path(p);
  if (fs::exists(path) && !common.overwrite) throw UsageError(path.string() + " exists; pass --overwrite to replace it");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  return path;
}

fs::path input_file(const std::string& p) {
  if (!fs::exists(p)) throw UsageError("missing input file: " + p);
  return p;
}

model::LanguageModel<float> load_model(const std::string& p) { return model::load_checkpoint<float>(input_file(p)); }

corpus::Examples load_examples(const std::string& p) { return corpus::load_jsonl(input_file(p)); }

std::string config_key_help() {
  std::string out = "Config keys (flat 'key = value' file, overridable with --set key=value):\n";
  for (const auto& k : pipeline::config_keys()) {
    out += "  " + std::string(k.key) + " = " + std::string(k.default_value);
    if (k.reference_default) out += "  [reference default]";
    out += "\n      " + std::string(k.help) + "\n";
  }
  out += "Output paths that are relative resolve under $" + std::string(kOutputRootEnv) + " when it is set.\n";
  return out;
}

void print_json(const nlohmann::ordered_json& j) { std::cout << j.dump() << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"proxykd: black-box knowledge distillation through an aligned proxy model"};
  app.footer(config_key_help());
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "experiment config file");
  app.add_option("--set", common.sets, "override a config key (key=value), repeatable");
  app.add_option("--seed", common.seed, "seed for every random choice of the command");
  app.add_option("--threads", common.threads, "cap on worker threads (default: config key threads)");
  app.add_flag("--overwrite", common.overwrite, "replace existing outputs");

  std::function<void()> action;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate task prompts and label them with the teacher");
  std::string gen_out, gen_teacher, gen_exclude;
  std::size_t gen_n = 0;
  gen->add_option("--out", gen_out, "output JSONL")->required();
  gen->add_option("--n", gen_n, "number of examples (default: n_examples)");
  gen->add_option("--teacher-checkpoint", gen_teacher, "checkpoint for teacher = transformer");
  gen->add_option("--exclude", gen_exclude, "JSONL whose ids must not be generated");
  gen->callback([&] {
    action = [&] {
      auto cfg = load_config(common);
      std::unordered_set<std::string> exclude;
      if (!gen_exclude.empty()) {
        for (const auto& e : load_examples(gen_exclude)) exclude.insert(e.id);
      }
      std::unique_ptr<blackbox::BlackBoxTeacher> teacher;
      if (cfg.teacher == "transformer") {
        if (gen_teacher.empty()) throw UsageError("teacher = transformer needs --teacher-checkpoint");
        teacher = blackbox::make_transformer_teacher(load_model(gen_teacher), cfg.teacher_temperature,
                                                     cfg.task.max_response_len());
      } else {
        teacher = blackbox::make_programmatic_teacher(cfg.task, cfg.teacher_noise);
      }
      const auto out = output_file(gen_out, common);
      auto prompts = corpus::generate_task_corpus(cfg.task, gen_n ? gen_n : cfg.n_examples,
                                                  util::derive_seed(common.seed, "corpus"), exclude);
      auto labelled = blackbox::label_examples(*teacher, std::move(prompts), util::derive_seed(common.seed, "label"));
      corpus::save_jsonl(labelled, out);
      print_json({{"examples", labelled.size()}, {"out", out.string()}});
    };
  });

  // split
  auto* split = app.add_subcommand("split", "split a corpus into d_w / d_p / d_s");
  std::string split_in, split_dir;
  split->add_option("--in", split_in, "labelled corpus JSONL")->required();
  split->add_option("--out-dir", split_dir, "directory for d_w.jsonl, d_p.jsonl, d_s.jsonl")->required();
  split->callback([&] {
    action = [&] {
      auto cfg = load_config(common);
      auto parts = corpus::split_corpus(load_examples(split_in), cfg.fractions, common.seed);
      const auto dir = output_path(split_dir);
      const std::vector<std::pair<std::string, const corpus::Examples*>> files = {
          {"d_w.jsonl", &parts.warmup()}, {"d_p.jsonl", &parts.proxy()}, {"d_s.jsonl", &parts.student()}};
      for (const auto& [name, ex] : files) corpus::save_jsonl(*ex, output_file((dir / name).string(), common));
      print_json({{"d_w", parts.warmup().size()}, {"d_p", parts.proxy().size()}, {"d_s", parts.student().size()}});
    };
  });

  // train-teacher
  auto* tt = app.add_subcommand("train-teacher", "train the transformer teacher on ground-truth answers");
  std::string tt_out, tt_test, tt_metrics;
  tt->add_option("--out", tt_out, "teacher checkpoint")->required();
  tt->add_option("--test", tt_test, "held-out JSONL: excluded from training, used for the accuracy gate");
  tt->add_option("--metrics", tt_metrics, "training-loss CSV");
  tt->callback([&] {
    action = [&] {
      auto cfg = load_config(common);
      corpus::Examples test;
      std::unordered_set<std::string> exclude;
      if (!tt_test.empty()) {
        test = load_examples(tt_test);
        for (const auto& e : test) exclude.insert(e.id);
      }
      const auto out = output_file(tt_out, common);
      const auto available = static_cast<std::size_t>(std::min<std::uint64_t>(cfg.task.prompt_count() - exclude.size(), 20000));
      auto train = corpus::generate_task_corpus(cfg.task, cfg.teacher_examples ? cfg.teacher_examples : available,
                                                util::derive_seed(common.seed, "teacher-data"), exclude);
      for (auto& e : train) e.y = corpus::ground_truth(cfg.task, e.x);
      model::LanguageModel<float> m(cfg.teacher_model, model::Role::kTeacher, util::derive_seed(common.seed, "teacher-init"));
      eval::MetricLog log("teacher");
      pipeline::train_nll(m, train, cfg.teacher_train, util::derive_seed(common.seed, "teacher-train"), &log);
      model::save_checkpoint(m, out);
      if (!tt_metrics.empty()) log.write_csv(output_file(tt_metrics, common));
      nlohmann::ordered_json j{{"out", out.string()}, {"train_examples", train.size()}};
      if (!test.empty()) j["test_accuracy"] = eval::task_accuracy(m, test, cfg.task, {&train}, cfg.threads);
      print_json(j);
    };
  });

  // warmup
  auto* wu = app.add_subcommand("warmup", "supervised warm-up of the proxy on d_w");
  std::string wu_data, wu_out, wu_init, wu_metrics;
  wu->add_option("--data", wu_data, "d_w JSONL")->required();
  wu->add_option("--out", wu_out, "proxy checkpoint")->required();
  wu->add_option("--init", wu_init, "start from this checkpoint instead of a fresh proxy");
  wu->add_option("--metrics", wu_metrics, "training-loss CSV");
  wu->callback([&] {
    action = [&] {
      auto cfg = load_config(common);
      auto data = load_examples(wu_data);
      auto proxy = wu_init.empty() ? model::LanguageModel<float>(cfg.proxy_model, model::Role::kProxy,
                                                                  util::derive_seed(common.seed, "proxy-init"))
                                   : load_model(wu_init);
      const auto out = output_file(wu_out, common);
      eval::MetricLog log("warmup");
      pipeline::warmup_proxy(proxy, data, cfg.warmup_train, util::derive_seed(common.seed, "warmup"), &log);
      model::save_checkpoint(proxy, out);
      if (!wu_metrics.empty()) log.write_csv(output_file(wu_metrics, common));
      print_json({{"out", out.string()}, {"steps", log.series("loss").size()}});
    };
  });

  // align
  auto* al = app.add_subcommand("align", "iterative preference alignment of the proxy on d_p");
  std::string al_proxy, al_data, al_out, al_heldout, al_log, al_metrics;
  bool al_no_pref = false;
  al->add_option("--proxy", al_proxy, "warmed-up proxy checkpoint")->required();
  al->add_option("--data", al_data, "d_p JSONL with teacher responses")->required();
  al->add_option("--out", al_out, "aligned proxy checkpoint")->required();
  al->add_option("--heldout", al_heldout, "held-out JSONL for per-iteration match ratio and margin");
  al->add_option("--log", al_log, "per-iteration CSV");
  al->add_option("--metrics", al_metrics, "per-step CSV");
  al->add_flag("--no-pref", al_no_pref, "train on the NLL term only");
  al->callback([&] {
    action = [&] {
      auto cfg = load_config(common);
      auto proxy = load_model(al_proxy);
      auto data = load_examples(al_data);
      corpus::Examples heldout;
      if (!al_heldout.empty()) heldout = load_examples(al_heldout);
      const auto out = output_file(al_out, common);
      pipeline::AlignmentSchedule sched{cfg.k, cfg.pairs_per_prompt, cfg.align_temperature, cfg.conv_eps,
                                        cfg.conv_window, cfg.beta, !al_no_pref};
      eval::MetricLog log("align");
      auto result = pipeline::align_proxy(proxy, data, sched, cfg.align_train, util::derive_seed(common.seed, "align"),
                                          &log, heldout.empty() ? nullptr : &heldout, cfg.threads);
      model::save_checkpoint(proxy, out);
      nlohmann::ordered_json iters = nlohmann::ordered_json::array();
      std::string csv = "iteration,steps,nll,pref,margin,pairs,skipped,heldout_match,heldout_margin,reference_hash\n";
      for (const auto& it : result.iterations) {
        iters.push_back({{"iteration", it.iteration}, {"nll", it.nll}, {"pref", it.pref}, {"margin", it.margin},
                         {"heldout_match", it.heldout_match}});
        csv += std::to_string(it.iteration) + "," + std::to_string(it.steps) + "," + eval::format_double(it.nll) +
               "," + eval::format_double(it.pref) + "," + eval::format_double(it.margin) + "," +
               std::to_string(it.pairs) + "," + std::to_string(it.skipped) + "," +
               eval::format_double(it.heldout_match) + "," + eval::format_double(it.heldout_margin) + "," +
               it.reference_hash + "\n";
      }
      if (!al_log.empty()) std::ofstream(output_file(al_log, common)) << csv;
      if (!al_metrics.empty()) log.write_csv(output_file(al_metrics, common));
      print_json({{"out", out.string()}, {"converged", result.converged}, {"iterations", iters}});
    };
  });

  // build-cache
  auto* bc = app.add_subcommand("build-cache", "top-K logit cache of a proxy over d_s");
  std::string bc_proxy, bc_data, bc_out, bc_manifest;
  int bc_k = 0;
  bc->add_option("--proxy", bc_proxy, "proxy checkpoint")->required();
  bc->add_option("--data", bc_data, "d_s JSONL")->required();
  bc->add_option("--out", bc_out, "cache file")->required();
  bc->add_option("--manifest", bc_manifest, "skip manifest JSON (default: <out>.manifest.json)");
  bc->add_option("--k", bc_k, "entries per position (default: config K)");
  bc->callback([&] {
    action = [&] {
      auto cfg = load_config(common);
      auto proxy = load_model(bc_proxy);
      auto data = load_examples(bc_data);
      const auto out = output_file(bc_out, common);
      const auto manifest = output_file(bc_manifest.empty() ? bc_out + ".manifest.json" : bc_manifest, common);
      const int k = bc_k > 0 ? bc_k : cfg.cache_k;
      auto built = blackbox::build_logit_cache(proxy, data, k, cfg.threads);
      blackbox::write_logit_cache(built.cache, out);
      std::ofstream(manifest) << blackbox::serialize_skip_manifest(built.skipped, built.cache.examples().size(), k,
                                                                   built.cache.checkpoint_hash());
      print_json({{"out", out.string()}, {"examples", built.cache.examples().size()}, {"skipped", built.skipped.size()}});
    };
  });

  // weight-stats
  auto* ws = app.add_subcommand("weight-stats", "sample weights from proxy log-likelihoods over d_s");
  std::string ws_proxy, ws_data, ws_out;
  ws->add_option("--proxy", ws_proxy, "proxy checkpoint")->required();
  ws->add_option("--data", ws_data, "d_s JSONL")->required();
  ws->add_option("--out", ws_out, "weight stats JSON")->required();
  ws->callback([&] {
    action = [&] {
      auto cfg = load_config(common);
      auto proxy = load_model(ws_proxy);
      auto data = load_examples(ws_data);
      const auto out = output_file(ws_out, common);
      auto stats = losses::compute_weight_stats(proxy, data, cfg.threads);
      losses::save_weight_stats(stats, out);
      print_json({{"out", out.string()}, {"mu", stats.mu}, {"gamma", stats.gamma}});
    };
  });

  // distill
  auto* ds = app.add_subcommand("distill", "train a student on d_s in one run mode");
  std::string ds_mode = "proxy_kd", ds_data, ds_out, ds_cache, ds_proxy, ds_stats, ds_test, ds_metrics, ds_init;
  ds->add_option("--mode", ds_mode, "proxy_kd | vanilla_blackbox | white_box_fkl | takd_unaligned_proxy | "
                                    "proxy_kd_no_pref | proxy_kd_no_weight");
  ds->add_option("--data", ds_data, "d_s JSONL")->required();
  ds->add_option("--out", ds_out, "student checkpoint")->required();
  ds->add_option("--cache", ds_cache, "logit cache of the proxy");
  ds->add_option("--proxy", ds_proxy, "proxy (or white-box model) checkpoint for full-softmax targets");
  ds->add_option("--stats", ds_stats, "weight stats JSON");
  ds->add_option("--test", ds_test, "test JSONL for accuracy curves");
  ds->add_option("--metrics", ds_metrics, "metric CSV");
  ds->add_option("--init", ds_init, "start from this checkpoint instead of a fresh student");
  ds->callback([&] {
    action = [&] {
      auto cfg = load_config(common);
      const auto mode = pipeline::parse_mode(ds_mode);
      auto data = load_examples(ds_data);
      std::optional<blackbox::LogitCache<float>> cache;
      std::optional<model::LanguageModel<float>> proxy;
      std::optional<losses::WeightStats> stats;
      if (!ds_cache.empty()) cache = blackbox::read_logit_cache<float>(input_file(ds_cache));
      if (!ds_proxy.empty()) proxy = load_model(ds_proxy);
      if (!ds_stats.empty()) stats = losses::load_weight_stats(input_file(ds_stats));
      corpus::Examples test;
      if (!ds_test.empty()) test = load_examples(ds_test);
      auto student = ds_init.empty() ? model::LanguageModel<float>(cfg.student_model, model::Role::kStudent,
                                                                    util::derive_seed(common.seed, "student-init"))
                                     : load_model(ds_init);
      const auto out = output_file(ds_out, common);
      pipeline::DistillResources<float> res{cache ? &*cache : nullptr, proxy ? &*proxy : nullptr,
                                            stats ? &*stats : nullptr};
      pipeline::DistillConfig dc{mode, cfg.alpha, cfg.student_train, cfg.eval_every, cfg.task, cfg.threads};
      eval::MetricLog log(ds_mode);
      pipeline::distill_student(student, data, res, dc, util::derive_seed(common.seed, "distill"), &log,
                                test.empty() ? nullptr : &test, {&data});
      model::save_checkpoint(student, out);
      if (!ds_metrics.empty()) log.write_csv(output_file(ds_metrics, common));
      nlohmann::ordered_json j{{"out", out.string()}, {"mode", ds_mode}};
      if (!test.empty()) j["test_accuracy"] = log.last("accuracy");
      print_json(j);
    };
  });

  // eval
  auto* ev = app.add_subcommand("eval", "exact-match accuracy and diagnostics of a checkpoint");
  std::string ev_model, ev_test;
  bool ev_match = false, ev_cov = false;
  ev->add_option("--model", ev_model, "checkpoint")->required();
  ev->add_option("--test", ev_test, "test JSONL")->required();
  ev->add_flag("--match-ratio", ev_match, "also report top-1 match ratio against the file's responses");
  ev->add_flag("--coverage", ev_cov, "also report top-K coverage at coverage_ks");
  ev->callback([&] {
    action = [&] {
      auto cfg = load_config(common);
      auto m = load_model(ev_model);
      auto test = load_examples(ev_test);
      nlohmann::ordered_json j{{"accuracy", eval::task_accuracy(m, test, cfg.task, {}, cfg.threads)}};
      if (ev_match) j["match_ratio"] = eval::match_ratio(m, test, cfg.threads);
      if (ev_cov) {
        for (const auto& p : blackbox::topk_coverage(m, test, cfg.coverage_ks)) {
          j["coverage"][std::to_string(p.k)] = p.percent;
        }
      }
      print_json(j);
    };
  });

  // report
  auto* rp = app.add_subcommand("report", "mode x task accuracy table and learning curves from run manifests");
  std::vector<std::string> rp_manifests;
  std::string rp_dir;
  rp->add_option("--manifest", rp_manifests, "run manifest(s)")->required();
  rp->add_option("--out-dir", rp_dir, "report directory")->required();
  rp->callback([&] {
    action = [&] {
      std::vector<fs::path> paths;
      for (const auto& m : rp_manifests) paths.push_back(input_file(m));
      const auto dir = output_path(rp_dir);
      if (fs::exists(dir / "report.json") && !common.overwrite) {
        throw UsageError((dir / "report.json").string() + " exists; pass --overwrite to replace it");
      }
      auto report = eval::emit_report(paths, dir);
      std::cout << report.to_table();
    };
  });

  // run
  auto* run = app.add_subcommand("run", "full experiment: every stage for every seed and mode");
  std::string run_dir;
  bool run_dry = false;
  run->add_option("--out-dir", run_dir, "experiment directory");
  run->add_flag("--dry-run", run_dry, "validate the config and print the stage plan");
  run->footer(config_key_help());
  run->callback([&] {
    action = [&] {
      auto cfg = load_config(common);
      if (!run_dry && run_dir.empty()) throw UsageError("run needs --out-dir (or --dry-run)");
      pipeline::ExperimentOptions opt{run_dry ? fs::path() : output_path(run_dir), run_dry, common.overwrite, &std::cerr};
      auto result = pipeline::run_experiment(cfg, opt);
      if (run_dry) {
        std::cout << "config hash " << cfg.hash() << "\n";
        for (const auto& s : result.plan) std::cout << "stage " << s << "\n";
        return;
      }
      print_json({{"manifest", (opt.out_dir / "manifest.json").string()},
                  {"manifest_sha256", result.manifest_hash},
                  {"reused", result.reused}});
    };
  });

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every loss gradient (64-bit)");
  int gc_instances = 10;
  double gc_tol = 1e-4;
  gc->add_option("--instances", gc_instances, "random instances per loss");
  gc->add_option("--tolerance", gc_tol, "maximum accepted relative error");
  gc->callback([&] {
    action = [&] {
      bool ok = true;
      for (const auto& r : losses::run_loss_gradchecks(gc_instances, common.seed)) {
        const bool pass = r.max_rel_error < gc_tol;
        ok = ok && pass;
        std::cout << (pass ? "PASS " : "FAIL ") << r.loss << " max_rel_error=" << eval::format_double(r.max_rel_error)
                  << " instances=" << r.instances << " coords=" << r.coords << "\n";
      }
      if (!ok) throw Error("gradient check failed");
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", kUsage, e.what());
  }
  try {
    action();
  } catch (const UsageError& e) {
    return fail("usage", kUsage, e.what());
  } catch (const ValidationError& e) {
    return fail("validation", kValidation, e.what());
  } catch (const std::exception& e) {
    return fail("runtime", kRuntime, e.what());
  }
  return 0;
}
