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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "proxykd/corpus/example.hpp"
#include "proxykd/corpus/task.hpp"
#include "proxykd/model/language_model.hpp"

namespace pkd::eval {

struct MetricRecord {
  std::string run;
  std::int64_t step = 0;
  std::string split;
  std::string metric;
  double value = 0.0;

  bool operator==(const MetricRecord&) const = default;
};

/// Append-only metric log of one run; (step, metric) pairs are unique.
class MetricLog {
 public:
  explicit MetricLog(std::string run = "run") : run_(std::move(run)) {}

  void add(std::int64_t step, std::string split, std::string metric, double value);
  const std::vector<MetricRecord>& records() const { return records_; }
  const std::string& run() const { return run_; }

  /// Values of one metric in step order.
  std::vector<std::pair<std::int64_t, double>> series(const std::string& metric) const;
  /// Last recorded value of metric; fails when absent.
  double last(const std::string& metric) const;

  /// "step,split,metric,value" with values in shortest round-trip form.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  static MetricLog read_csv(const std::filesystem::path& path, std::string run = "run");

 private:
  std::string run_;
  std::vector<MetricRecord> records_;
};

std::string format_double(double v);

/// Fails listing the offending ids when any test id appears in a training set.
void check_disjoint(const corpus::Examples& test, const std::vector<const corpus::Examples*>& training);

/// Exact-match rate of greedy decodes against the task's ground truth.
template <std::floating_point T>
double task_accuracy(const model::LanguageModel<T>& model, const corpus::Examples& test, const corpus::TaskSpec& spec,
                     const std::vector<const corpus::Examples*>& training = {}, int threads = 1);

/// Fraction of teacher-forced response positions where the model's top-1
/// token (ties to the lower id) equals the reference token.
template <std::floating_point T>
double match_ratio(const model::LanguageModel<T>& model, const corpus::Examples& examples, int threads = 1);

}  // namespace pkd::eval
