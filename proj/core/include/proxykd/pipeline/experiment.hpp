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

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "proxykd/corpus/split.hpp"
#include "proxykd/pipeline/run_config.hpp"

namespace pkd::pipeline {

struct ExperimentOptions {
  std::filesystem::path out_dir;
  bool dry_run = false;
  bool overwrite = false;
  std::ostream* progress = nullptr;  // human-readable stage messages
};

struct ExperimentResult {
  std::vector<std::string> plan;
  nlohmann::ordered_json manifest;  // empty for dry runs
  std::string manifest_hash;
  bool reused = false;  // an identical completed run was already present
};

/// Ordered stage names the configuration will execute.
std::vector<std::string> stage_plan(const ExperimentConfig& config);

/// generate -> split -> (teacher training) -> warm-up -> align -> cache ->
/// stats -> distill -> eval for every seed and mode, then the report.
/// Writes manifest.json (hash in manifest.sha256) under out_dir; on failure
/// the partial manifest names the failed stage.
ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentOptions& options);

/// SHA-256 of the manifest's canonical serialization.
std::string manifest_hash(const nlohmann::ordered_json& manifest);

/// Stage/part pairs that break stage isolation (student stages reading d_w
/// or d_p, alignment reading d_s, warm-up reading anything but d_w).
std::vector<std::string> isolation_violations(const corpus::AccessLog& log);

}  // namespace pkd::pipeline
