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

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "proxykd/autodiff/adam.hpp"
#include "proxykd/corpus/task.hpp"
#include "proxykd/model/language_model.hpp"

namespace pkd::pipeline {

enum class RunMode {
  kProxyKd,
  kVanillaBlackBox,
  kWhiteBoxFkl,
  kTakdUnalignedProxy,
  kProxyKdNoPref,
  kProxyKdNoWeight,
};

inline constexpr std::array<RunMode, 6> kAllModes = {
    RunMode::kProxyKd,           RunMode::kVanillaBlackBox, RunMode::kWhiteBoxFkl,
    RunMode::kTakdUnalignedProxy, RunMode::kProxyKdNoPref,  RunMode::kProxyKdNoWeight};

std::string_view mode_name(RunMode mode);
RunMode parse_mode(std::string_view name);

/// Flat "key = value" text, one pair per line, '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text, std::string_view source = "config");
KeyValues load_key_values(const std::filesystem::path& path);

struct ConfigKey {
  std::string_view key;
  std::string_view default_value;
  std::string_view help;
  bool reference_default = false;
};

/// Every accepted key, in documentation order.
const std::vector<ConfigKey>& config_keys();

struct StageTrain {
  int steps = 0;   // > 0 overrides epochs
  int epochs = 1;
  int batch_size = 32;
  ad::AdamConfig adam;
  double clip = 1.0;  // global gradient-norm cap, 0 disables
  bool cosine = false;  // cosine decay of adam.lr to 0 over the run
};

struct ExperimentConfig {
  std::string name;
  corpus::TaskSpec task;
  std::size_t n_examples = 0;
  std::size_t n_test = 0;
  std::array<double, 3> fractions{};
  std::vector<std::uint64_t> seeds;
  std::uint64_t data_seed = 0;
  int max_seq_len = 0;

  std::string teacher;  // "programmatic" or "transformer"
  double teacher_noise = 0.0;
  double teacher_temperature = 0.0;
  model::ModelConfig teacher_model;
  StageTrain teacher_train;
  std::uint64_t teacher_seed = 0;
  std::size_t teacher_examples = 0;  // 0 = every non-test prompt, capped at 20000
  double teacher_min_accuracy = 0.0;

  model::ModelConfig proxy_model;
  StageTrain warmup_train;
  int k = 16;
  double beta = 0.1;
  int pairs_per_prompt = 1;
  double align_temperature = 1.0;
  double conv_eps = 0.0;
  int conv_window = 0;
  StageTrain align_train;

  int cache_k = 10;
  double alpha = 100.0;
  model::ModelConfig student_model;
  StageTrain student_train;
  int eval_every = 200;
  std::vector<RunMode> modes;
  std::string white_box;  // "warmup_proxy" or "teacher"
  std::vector<int> coverage_ks;
  int threads = 1;

  /// Defaults for missing keys; unknown keys and malformed values fail.
  static ExperimentConfig from_key_values(const KeyValues& kv);
  void validate() const;
  /// Canonical text with every key, in config_keys() order.
  std::string to_text() const;
  std::string hash() const;

  bool needs_mode(RunMode mode) const;
};

}  // namespace pkd::pipeline
