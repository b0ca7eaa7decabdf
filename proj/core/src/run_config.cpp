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

#include "proxykd/pipeline/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "proxykd/corpus/vocab.hpp"
#include "proxykd/error.hpp"
#include "proxykd/util/hash.hpp"

namespace pkd::pipeline {

namespace {

constexpr std::array<std::string_view, 6> kModeNames = {
    "proxy_kd", "vanilla_blackbox", "white_box_fkl", "takd_unaligned_proxy", "proxy_kd_no_pref", "proxy_kd_no_weight"};

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  while (!s.empty()) {
    const auto c = s.find(',');
    auto item = trim(s.substr(0, c));
    if (!item.empty()) out.emplace_back(item);
    if (c == std::string_view::npos) break;
    s.remove_prefix(c + 1);
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ValidationError("config key '" + std::string(key) + "': expected " + std::string(expected) + ", got '" +
                        std::string(value) + "'");
}

template <typename N>
N parse_number(std::string_view key, std::string_view value, std::string_view expected) {
  N out{};
  const auto* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end) bad_value(key, value, expected);
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename N>
std::string join(const std::vector<N>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<N>) {
      out += fmt(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

class Reader {
 public:
  explicit Reader(const KeyValues& kv) : kv_(kv) {}

  std::string_view str(std::string_view key) const { return kv_.at(std::string(key)); }
  int i32(std::string_view key) const { return parse_number<int>(key, str(key), "an integer"); }
  std::uint64_t u64(std::string_view key) const {
    return parse_number<std::uint64_t>(key, str(key), "a non-negative integer");
  }
  double f64(std::string_view key) const { return parse_number<double>(key, str(key), "a number"); }

 private:
  const KeyValues& kv_;
};

}  // namespace

std::string_view mode_name(RunMode mode) { return kModeNames[static_cast<std::size_t>(mode)]; }

RunMode parse_mode(std::string_view name) {
  for (std::size_t i = 0; i < kModeNames.size(); ++i) {
    if (kModeNames[i] == name) return static_cast<RunMode>(i);
  }
  throw ValidationError("unknown run mode '" + std::string(name) + "'");
}

KeyValues parse_key_values(std::string_view text, std::string_view source) {
  KeyValues out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = std::string(source) + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ValidationError(where + "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw ValidationError(where + "empty key");
    if (!out.emplace(std::string(key), std::string(value)).second) {
      throw ValidationError(where + "duplicate key '" + std::string(key) + "'");
    }
  }
  return out;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"name", "experiment", "run name used in report rows"},
      {"task", "modadd", "modadd | copy | reverse | sortdigits"},
      {"modulus", "97", "modadd modulus"},
      {"min_len", "4", "shortest payload for copy/reverse/sortdigits"},
      {"max_len", "8", "longest payload for copy/reverse/sortdigits"},
      {"alphabet_size", "8", "letters used by copy/reverse"},
      {"n_examples", "6000", "teacher-labelled corpus size before splitting"},
      {"n_test", "500", "held-out test prompts, disjoint from every split"},
      {"frac_warmup", "0.1", "share of the corpus used for proxy warm-up", true},
      {"frac_proxy", "0.45", "share used for proxy alignment", true},
      {"frac_student", "0.45", "share used for student distillation", true},
      {"seeds", "1", "comma-separated experiment seeds"},
      {"data_seed", "1000003", "seed of the held-out test set"},
      {"max_seq_len", "0", "model context length, 0 = smallest that fits the task"},
      {"teacher", "programmatic", "programmatic | transformer"},
      {"teacher_noise", "0", "label-noise rate of the programmatic teacher"},
      {"teacher_temperature", "0", "sampling temperature of the transformer teacher, 0 = greedy"},
      {"teacher_layers", "6", "transformer teacher depth"},
      {"teacher_heads", "8", "transformer teacher attention heads"},
      {"teacher_d_model", "384", "transformer teacher width"},
      {"teacher_d_ff", "1536", "transformer teacher MLP width"},
      {"teacher_steps", "3000", "transformer teacher training steps"},
      {"teacher_batch", "64", "transformer teacher batch size"},
      {"teacher_lr", "0.001", "transformer teacher learning rate"},
      {"teacher_weight_decay", "0", "transformer teacher decoupled weight decay"},
      {"teacher_lr_schedule", "constant", "constant | cosine (decay to 0 over teacher_steps)"},
      {"teacher_seed", "17", "transformer teacher initialisation and data seed"},
      {"teacher_examples", "0", "ground-truth prompts for teacher training, 0 = all non-test prompts up to 20000"},
      {"teacher_min_accuracy", "0.95", "held-out accuracy the transformer teacher must reach"},
      {"proxy_layers", "4", "proxy depth"},
      {"proxy_heads", "8", "proxy attention heads"},
      {"proxy_d_model", "256", "proxy width"},
      {"proxy_d_ff", "1024", "proxy MLP width"},
      {"warmup_epochs", "1", "proxy warm-up epochs over d_w"},
      {"warmup_steps", "0", "proxy warm-up steps, overrides warmup_epochs when > 0"},
      {"warmup_lr", "0.0003", "proxy warm-up learning rate"},
      {"proxy_weight_decay", "0", "decoupled weight decay for proxy warm-up and alignment"},
      {"k", "16", "proxy alignment iterations", true},
      {"beta", "0.1", "preference-loss inverse temperature"},
      {"pairs_per_prompt", "1", "sampled proxy responses per prompt and iteration"},
      {"align_temperature", "1", "temperature for sampling proxy responses"},
      {"conv_eps", "0.001", "stop alignment when the moving-average preference loss moves less, 0 disables"},
      {"conv_window", "200", "steps in the convergence moving average"},
      {"align_lr", "0.0003", "proxy alignment learning rate"},
      {"K", "10", "top-K entries kept per position in the logit cache", true},
      {"alpha", "100", "weight of the weighted KL term", true},
      {"student_layers", "2", "student depth"},
      {"student_heads", "4", "student attention heads"},
      {"student_d_model", "128", "student width"},
      {"student_d_ff", "512", "student MLP width"},
      {"steps", "2000", "student distillation steps"},
      {"lr", "0.0003", "student learning rate (1e-5 suits multi-billion-parameter models)"},
      {"batch_size", "32", "batch size for proxy and student stages"},
      {"weight_decay", "0", "decoupled weight decay for student distillation"},
      {"lr_schedule", "constant", "student learning-rate schedule: constant | cosine (decay to 0 over steps)"},
      {"clip", "1", "gradient-norm cap, 0 disables"},
      {"eval_every", "200", "student steps between test-accuracy evaluations"},
      {"modes", "proxy_kd,vanilla_blackbox", "comma-separated run modes"},
      {"white_box", "warmup_proxy", "model whose logits white_box_fkl distils: warmup_proxy | teacher"},
      {"coverage_ks", "1,2,3,5,10,32", "K values of the top-K coverage diagnostic"},
      {"threads", "1", "worker threads for cache building and evaluation"},
  };
  return keys;
}

ExperimentConfig ExperimentConfig::from_key_values(const KeyValues& kv) {
  KeyValues all;
  for (const auto& k : config_keys()) all.emplace(k.key, k.default_value);
  for (const auto& [key, value] : kv) {
    auto it = all.find(key);
    if (it == all.end()) throw ValidationError("unknown config key '" + key + "'");
    it->second = value;
  }
  const Reader r(all);
  ExperimentConfig c;
  c.name = r.str("name");
  c.task.kind = corpus::parse_task(r.str("task"));
  c.task.modulus = r.i32("modulus");
  c.task.min_len = r.i32("min_len");
  c.task.max_len = r.i32("max_len");
  c.task.alphabet_size = r.i32("alphabet_size");
  c.n_examples = r.u64("n_examples");
  c.n_test = r.u64("n_test");
  c.fractions = {r.f64("frac_warmup"), r.f64("frac_proxy"), r.f64("frac_student")};
  for (const auto& s : split_list(r.str("seeds"))) c.seeds.push_back(parse_number<std::uint64_t>("seeds", s, "a seed"));
  c.data_seed = r.u64("data_seed");
  c.max_seq_len = r.i32("max_seq_len");

  c.teacher = r.str("teacher");
  c.teacher_noise = r.f64("teacher_noise");
  c.teacher_temperature = r.f64("teacher_temperature");
  auto cosine_schedule = [&](const std::string& key) {
    const auto sched = r.str(key);
    if (sched != "constant" && sched != "cosine") bad_value(key, sched, "constant or cosine");
    return sched == "cosine";
  };
  auto model_cfg = [&](const std::string& p) {
    model::ModelConfig m;
    m.n_layers = r.i32(p + "_layers");
    m.n_heads = r.i32(p + "_heads");
    m.d_model = r.i32(p + "_d_model");
    m.d_ff = r.i32(p + "_d_ff");
    return m;
  };
  c.teacher_model = model_cfg("teacher");
  c.teacher_train.steps = r.i32("teacher_steps");
  c.teacher_train.batch_size = r.i32("teacher_batch");
  c.teacher_train.adam.lr = r.f64("teacher_lr");
  c.teacher_train.adam.weight_decay = r.f64("teacher_weight_decay");
  c.teacher_train.cosine = cosine_schedule("teacher_lr_schedule");
  c.teacher_seed = r.u64("teacher_seed");
  c.teacher_examples = r.u64("teacher_examples");
  c.teacher_min_accuracy = r.f64("teacher_min_accuracy");

  const int batch = r.i32("batch_size");
  const double proxy_wd = r.f64("proxy_weight_decay");
  const double clip = r.f64("clip");
  c.teacher_train.clip = clip;
  c.proxy_model = model_cfg("proxy");
  c.warmup_train = {r.i32("warmup_steps"), r.i32("warmup_epochs"), batch, {}, clip};
  c.warmup_train.adam.lr = r.f64("warmup_lr");
  c.warmup_train.adam.weight_decay = proxy_wd;
  c.k = r.i32("k");
  c.beta = r.f64("beta");
  c.pairs_per_prompt = r.i32("pairs_per_prompt");
  c.align_temperature = r.f64("align_temperature");
  c.conv_eps = r.f64("conv_eps");
  c.conv_window = r.i32("conv_window");
  c.align_train = {0, 1, batch, {}, clip};
  c.align_train.adam.lr = r.f64("align_lr");
  c.align_train.adam.weight_decay = proxy_wd;

  c.cache_k = r.i32("K");
  c.alpha = r.f64("alpha");
  c.student_model = model_cfg("student");
  c.student_train = {r.i32("steps"), 0, batch, {}, clip};
  c.student_train.adam.lr = r.f64("lr");
  c.student_train.adam.weight_decay = r.f64("weight_decay");
  c.student_train.cosine = cosine_schedule("lr_schedule");
  c.eval_every = r.i32("eval_every");
  for (const auto& m : split_list(r.str("modes"))) c.modes.push_back(parse_mode(m));
  c.white_box = r.str("white_box");
  for (const auto& k : split_list(r.str("coverage_ks"))) c.coverage_ks.push_back(parse_number<int>("coverage_ks", k, "an integer"));
  c.threads = r.i32("threads");

  const int vocab = static_cast<int>(corpus::Vocab::standard().size());
  const int seq = c.max_seq_len > 0 ? c.max_seq_len : c.task.required_seq_len();
  for (auto* m : {&c.teacher_model, &c.proxy_model, &c.student_model}) {
    m->vocab_size = vocab;
    m->max_seq_len = seq;
  }
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
  if (name.empty()) fail("name must not be empty");
  task.validate();
  if (n_examples < 3) fail("n_examples must be >= 3");
  if (n_test < 1) fail("n_test must be >= 1");
  if (task.prompt_count() < n_examples + n_test) {
    fail("task has " + std::to_string(task.prompt_count()) + " prompts, fewer than n_examples + n_test");
  }
  double frac_sum = 0;
  for (double f : fractions) {
    if (!(f > 0)) fail("split fractions must be positive");
    frac_sum += f;
  }
  if (std::abs(frac_sum - 1.0) > 1e-9) fail("split fractions must sum to 1");
  if (seeds.empty()) fail("seeds must list at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail("seeds must be distinct");
  if (max_seq_len != 0 && max_seq_len < task.required_seq_len()) {
    fail("max_seq_len " + std::to_string(max_seq_len) + " is below the task minimum " +
         std::to_string(task.required_seq_len()));
  }
  if (teacher != "programmatic" && teacher != "transformer") fail("teacher must be programmatic or transformer");
  if (teacher_noise < 0 || teacher_noise > 1) fail("teacher_noise must be in [0,1]");
  if (teacher_temperature < 0) fail("teacher_temperature must be >= 0");
  for (const auto* m : {&teacher_model, &proxy_model, &student_model}) m->validate();
  for (const auto* t : {&teacher_train, &warmup_train, &align_train, &student_train}) {
    if (t->batch_size < 1) fail("batch sizes must be >= 1");
    if (t->steps < 0 || t->epochs < 0) fail("step and epoch counts must be >= 0");
    if (!(t->adam.lr > 0)) fail("learning rates must be > 0");
    if (t->adam.weight_decay < 0) fail("weight decay must be >= 0");
    if (t->clip < 0) fail("clip must be >= 0");
  }
  if (teacher_min_accuracy < 0 || teacher_min_accuracy > 1) fail("teacher_min_accuracy must be in [0,1]");
  if (k < 0) fail("k must be >= 0");
  if (!(beta > 0)) fail("beta must be > 0");
  if (pairs_per_prompt < 1) fail("pairs_per_prompt must be >= 1");
  if (align_temperature < 0) fail("align_temperature must be >= 0");
  if (conv_eps < 0 || conv_window < 1) fail("conv_eps must be >= 0 and conv_window >= 1");
  if (cache_k < 1 || cache_k > student_model.vocab_size) fail("K must be in [1, vocab_size]");
  if (alpha < 0) fail("alpha must be >= 0");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (modes.empty()) fail("modes must list at least one run mode");
  if (std::set<RunMode>(modes.begin(), modes.end()).size() != modes.size()) fail("modes must be distinct");
  if (white_box != "warmup_proxy" && white_box != "teacher") fail("white_box must be warmup_proxy or teacher");
  if (white_box == "teacher" && needs_mode(RunMode::kWhiteBoxFkl) && teacher != "transformer") {
    fail("white_box = teacher needs the transformer teacher");
  }
  if (coverage_ks.empty()) fail("coverage_ks must not be empty");
  for (std::size_t i = 0; i < coverage_ks.size(); ++i) {
    if (coverage_ks[i] < 1 || coverage_ks[i] > student_model.vocab_size) fail("coverage_ks entries must be in [1, vocab_size]");
    if (i > 0 && coverage_ks[i] <= coverage_ks[i - 1]) fail("coverage_ks must be ascending");
  }
  if (threads < 1) fail("threads must be >= 1");
}

std::string ExperimentConfig::to_text() const {
  KeyValues kv;
  kv["name"] = name;
  kv["task"] = task.tag();
  kv["modulus"] = std::to_string(task.modulus);
  kv["min_len"] = std::to_string(task.min_len);
  kv["max_len"] = std::to_string(task.max_len);
  kv["alphabet_size"] = std::to_string(task.alphabet_size);
  kv["n_examples"] = std::to_string(n_examples);
  kv["n_test"] = std::to_string(n_test);
  kv["frac_warmup"] = fmt(fractions[0]);
  kv["frac_proxy"] = fmt(fractions[1]);
  kv["frac_student"] = fmt(fractions[2]);
  kv["seeds"] = join(seeds);
  kv["data_seed"] = std::to_string(data_seed);
  kv["max_seq_len"] = std::to_string(max_seq_len);
  kv["teacher"] = teacher;
  kv["teacher_noise"] = fmt(teacher_noise);
  kv["teacher_temperature"] = fmt(teacher_temperature);
  auto put_model = [&](const std::string& p, const model::ModelConfig& m) {
    kv[p + "_layers"] = std::to_string(m.n_layers);
    kv[p + "_heads"] = std::to_string(m.n_heads);
    kv[p + "_d_model"] = std::to_string(m.d_model);
    kv[p + "_d_ff"] = std::to_string(m.d_ff);
  };
  put_model("teacher", teacher_model);
  kv["teacher_steps"] = std::to_string(teacher_train.steps);
  kv["teacher_batch"] = std::to_string(teacher_train.batch_size);
  kv["teacher_lr"] = fmt(teacher_train.adam.lr);
  kv["teacher_weight_decay"] = fmt(teacher_train.adam.weight_decay);
  kv["teacher_lr_schedule"] = teacher_train.cosine ? "cosine" : "constant";
  kv["teacher_seed"] = std::to_string(teacher_seed);
  kv["teacher_examples"] = std::to_string(teacher_examples);
  kv["teacher_min_accuracy"] = fmt(teacher_min_accuracy);
  put_model("proxy", proxy_model);
  kv["warmup_epochs"] = std::to_string(warmup_train.epochs);
  kv["warmup_steps"] = std::to_string(warmup_train.steps);
  kv["warmup_lr"] = fmt(warmup_train.adam.lr);
  kv["proxy_weight_decay"] = fmt(warmup_train.adam.weight_decay);
  kv["k"] = std::to_string(k);
  kv["beta"] = fmt(beta);
  kv["pairs_per_prompt"] = std::to_string(pairs_per_prompt);
  kv["align_temperature"] = fmt(align_temperature);
  kv["conv_eps"] = fmt(conv_eps);
  kv["conv_window"] = std::to_string(conv_window);
  kv["align_lr"] = fmt(align_train.adam.lr);
  kv["K"] = std::to_string(cache_k);
  kv["alpha"] = fmt(alpha);
  put_model("student", student_model);
  kv["steps"] = std::to_string(student_train.steps);
  kv["lr"] = fmt(student_train.adam.lr);
  kv["batch_size"] = std::to_string(student_train.batch_size);
  kv["weight_decay"] = fmt(student_train.adam.weight_decay);
  kv["lr_schedule"] = student_train.cosine ? "cosine" : "constant";
  kv["clip"] = fmt(student_train.clip);
  kv["eval_every"] = std::to_string(eval_every);
  std::vector<std::string> mode_names;
  for (auto m : modes) mode_names.emplace_back(mode_name(m));
  std::string joined;
  for (std::size_t i = 0; i < mode_names.size(); ++i) joined += (i ? "," : "") + mode_names[i];
  kv["modes"] = joined;
  kv["white_box"] = white_box;
  kv["coverage_ks"] = join(coverage_ks);
  kv["threads"] = std::to_string(threads);

  std::string out;
  for (const auto& k : config_keys()) out += std::string(k.key) + " = " + kv.at(std::string(k.key)) + "\n";
  return out;
}

std::string ExperimentConfig::hash() const { return util::sha256_hex(to_text()); }

bool ExperimentConfig::needs_mode(RunMode mode) const {
  return std::find(modes.begin(), modes.end(), mode) != modes.end();
}

}  // namespace pkd::pipeline
