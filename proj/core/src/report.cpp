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

#include "proxykd/eval/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "proxykd/error.hpp"
#include "proxykd/eval/metrics.hpp"
#include "proxykd/pipeline/run_config.hpp"

namespace pkd::eval {

namespace {

struct RunEntry {
  std::string run_id;
  std::string mode;
  std::string task;
  double accuracy = 0.0;
  std::filesystem::path metrics;
};

int mode_rank(const std::string& mode) {
  try {
    return static_cast<int>(pipeline::parse_mode(mode));
  } catch (const ValidationError&) {
    return static_cast<int>(pipeline::kAllModes.size());
  }
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

}  // namespace

std::string ComparisonReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema"] = "proxykd-report/1";
  j["tasks"] = tasks;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["mode"] = r.mode;
    row["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : r.cells) {
      row["cells"].push_back({{"task", c.task}, {"n", c.n}, {"mean", c.mean}, {"stddev", c.stddev}, {"runs", c.run_ids}});
    }
    j["rows"].push_back(row);
  }
  return j.dump(2) + "\n";
}

std::string ComparisonReport::to_csv() const {
  std::string out = "mode,task,n,mean,stddev\n";
  for (const auto& r : rows) {
    for (const auto& c : r.cells) {
      out += r.mode + "," + c.task + "," + std::to_string(c.n) + "," + format_double(c.mean) + "," +
             format_double(c.stddev) + "\n";
    }
  }
  return out;
}

std::string ComparisonReport::to_table() const {
  std::size_t w = 4;
  for (const auto& r : rows) w = std::max(w, r.mode.size());
  std::ostringstream os;
  os << std::string(w - 4, ' ') << "mode";
  for (const auto& t : tasks) os << " | " << t;
  os << "\n";
  for (const auto& r : rows) {
    os << std::string(w - r.mode.size(), ' ') << r.mode;
    for (const auto& c : r.cells) {
      os << " | ";
      if (c.n == 0) {
        os << "-";
      } else {
        os << fixed(100 * c.mean, 2) << " +- " << fixed(100 * c.stddev, 2) << " (n=" << c.n << ")";
      }
    }
    os << "\n";
  }
  return os.str();
}

ComparisonReport emit_report(const std::vector<std::filesystem::path>& manifests, const std::filesystem::path& out_dir) {
  if (manifests.empty()) throw ValidationError("emit_report: no manifests given");
  std::vector<RunEntry> runs;
  std::vector<std::string> missing;
  for (const auto& path : manifests) {
    std::ifstream f(path);
    if (!f) throw ValidationError("emit_report: cannot open manifest " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("emit_report: " + path.string() + ": " + e.what());
    }
    if (j.value("status", "") != "complete") {
      throw ValidationError("emit_report: manifest " + path.string() + " is not complete");
    }
    const auto base = path.parent_path();
    const auto name = j.value("name", std::string("run"));
    for (const auto& r : j.at("runs")) {
      RunEntry e;
      e.run_id = name + "/" + r.at("run_id").get<std::string>();
      e.mode = r.at("mode").get<std::string>();
      e.task = r.at("task").get<std::string>();
      e.accuracy = r.at("final_accuracy").get<double>();
      e.metrics = base / r.at("metrics").get<std::string>();
      if (!std::filesystem::exists(e.metrics)) missing.push_back(e.run_id);
      runs.push_back(std::move(e));
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ValidationError("emit_report: missing metric logs for runs: " + list);
  }
  std::sort(runs.begin(), runs.end(), [](const RunEntry& a, const RunEntry& b) {
    const int ra = mode_rank(a.mode), rb = mode_rank(b.mode);
    if (ra != rb) return ra < rb;
    if (a.mode != b.mode) return a.mode < b.mode;
    if (a.task != b.task) return a.task < b.task;
    return a.run_id < b.run_id;
  });

  ComparisonReport report;
  for (const auto& r : runs) report.tasks.push_back(r.task);
  std::sort(report.tasks.begin(), report.tasks.end());
  report.tasks.erase(std::unique(report.tasks.begin(), report.tasks.end()), report.tasks.end());
  for (const auto& r : runs) {
    if (report.rows.empty() || report.rows.back().mode != r.mode) {
      ReportRow row{r.mode, {}};
      for (const auto& t : report.tasks) row.cells.push_back({t, 0, 0.0, 0.0, {}});
      report.rows.push_back(std::move(row));
    }
    auto& cell = *std::find_if(report.rows.back().cells.begin(), report.rows.back().cells.end(),
                               [&](const ReportCell& c) { return c.task == r.task; });
    cell.run_ids.push_back(r.run_id);
  }
  std::map<std::string, double> acc;
  for (const auto& r : runs) acc[r.run_id] = r.accuracy;
  for (auto& row : report.rows) {
    for (auto& c : row.cells) {
      c.n = c.run_ids.size();
      if (c.n == 0) continue;
      double s = 0;
      for (const auto& id : c.run_ids) s += acc[id];
      c.mean = s / static_cast<double>(c.n);
      double ss = 0;
      for (const auto& id : c.run_ids) ss += (acc[id] - c.mean) * (acc[id] - c.mean);
      c.stddev = c.n > 1 ? std::sqrt(ss / static_cast<double>(c.n - 1)) : 0.0;
    }
  }

  std::filesystem::create_directories(out_dir / "curves");
  write_file(out_dir / "report.json", report.to_json());
  write_file(out_dir / "report.csv", report.to_csv());
  for (const auto& r : runs) {
    auto log = MetricLog::read_csv(r.metrics, r.run_id);
    std::string csv = "step,accuracy\n";
    for (const auto& [step, v] : log.series("accuracy")) csv += std::to_string(step) + "," + format_double(v) + "\n";
    std::string file = r.run_id;
    std::replace(file.begin(), file.end(), '/', '_');
    write_file(out_dir / "curves" / (file + ".csv"), csv);
  }
  return report;
}

}  // namespace pkd::eval
