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
#include <string>
#include <vector>

namespace pkd::eval {

struct ReportCell {
  std::string task;
  std::size_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single run
  std::vector<std::string> run_ids;
};

struct ReportRow {
  std::string mode;
  std::vector<ReportCell> cells;  // one per task, in ComparisonReport::tasks order
};

/// Rows are run modes, columns are tasks, cells aggregate final test
/// accuracy over seeds.
struct ComparisonReport {
  std::vector<std::string> tasks;
  std::vector<ReportRow> rows;

  std::string to_json() const;
  std::string to_csv() const;
  std::string to_table() const;
};

/// Reads run manifests, aggregates their runs and writes report.json,
/// report.csv and one learning-curve CSV per run under out_dir. Fails naming
/// the run ids whose metric logs are missing.
ComparisonReport emit_report(const std::vector<std::filesystem::path>& manifests, const std::filesystem::path& out_dir);

}  // namespace pkd::eval
