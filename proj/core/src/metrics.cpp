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

#include "proxykd/eval/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "proxykd/autodiff/ops.hpp"
#include "proxykd/error.hpp"
#include "proxykd/model/decode.hpp"
#include "proxykd/model/response_batch.hpp"
#include "proxykd/util/parallel.hpp"

namespace pkd::eval {

namespace {
constexpr std::size_t kChunk = 64;
}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void MetricLog::add(std::int64_t step, std::string split, std::string metric, double value) {
  for (const auto& r : records_) {
    if (r.step == step && r.metric == metric) {
      throw ValidationError("metric log " + run_ + ": duplicate " + metric + " at step " + std::to_string(step));
    }
  }
  records_.push_back({run_, step, std::move(split), std::move(metric), value});
}

std::vector<std::pair<std::int64_t, double>> MetricLog::series(const std::string& metric) const {
  std::vector<std::pair<std::int64_t, double>> out;
  for (const auto& r : records_) {
    if (r.metric == metric) out.emplace_back(r.step, r.value);
  }
  std::stable_sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.first < b.first; });
  return out;
}

double MetricLog::last(const std::string& metric) const {
  auto s = series(metric);
  if (s.empty()) throw ValidationError("metric log " + run_ + ": no " + metric + " recorded");
  return s.back().second;
}

std::string MetricLog::to_csv() const {
  std::string out = "step,split,metric,value\n";
  for (const auto& r : records_) {
    out += std::to_string(r.step) + "," + r.split + "," + r.metric + "," + format_double(r.value) + "\n";
  }
  return out;
}

void MetricLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw Error("cannot write metric log " + path.string());
  f << to_csv();
}

MetricLog MetricLog::read_csv(const std::filesystem::path& path, std::string run) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open metric log " + path.string());
  MetricLog log(std::move(run));
  std::string line;
  std::size_t n = 0;
  while (std::getline(f, line)) {
    if (++n == 1) {
      if (line != "step,split,metric,value") throw ValidationError(path.string() + ": bad metric log header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 4) throw ValidationError(path.string() + ": line " + std::to_string(n) + ": expected 4 columns");
    double v = 0;
    std::int64_t step = 0;
    auto r1 = std::from_chars(cols[0].data(), cols[0].data() + cols[0].size(), step);
    auto r2 = std::from_chars(cols[3].data(), cols[3].data() + cols[3].size(), v);
    if (r1.ec != std::errc() || r2.ec != std::errc()) {
      throw ValidationError(path.string() + ": line " + std::to_string(n) + ": malformed number");
    }
    log.add(step, cols[1], cols[2], v);
  }
  return log;
}

void check_disjoint(const corpus::Examples& test, const std::vector<const corpus::Examples*>& training) {
  std::unordered_set<std::string> seen;
  for (const auto* set : training) {
    for (const auto& e : *set) seen.insert(e.id);
  }
  std::set<std::string> offenders;
  for (const auto& e : test) {
    if (seen.count(e.id)) offenders.insert(e.id);
  }
  if (offenders.empty()) return;
  std::string list;
  std::size_t shown = 0;
  for (const auto& id : offenders) {
    if (shown++ == 10) {
      list += ", ...";
      break;
    }
    list += (list.empty() ? "" : ", ") + id;
  }
  throw ValidationError("test set overlaps training data in " + std::to_string(offenders.size()) + " ids: " + list);
}

template <std::floating_point T>
double task_accuracy(const model::LanguageModel<T>& model, const corpus::Examples& test, const corpus::TaskSpec& spec,
                     const std::vector<const corpus::Examples*>& training, int threads) {
  if (test.empty()) throw ValidationError("task_accuracy: empty test set");
  check_disjoint(test, training);
  const std::size_t chunks = (test.size() + kChunk - 1) / kChunk;
  std::vector<std::size_t> correct(chunks, 0);
  util::parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(test.size(), lo + kChunk);
    std::vector<model::Tokens> xs;
    for (std::size_t i = lo; i < hi; ++i) xs.push_back(test[i].x);
    auto ys = model::greedy_decode_batch(model, xs, spec.max_response_len());
    for (std::size_t i = lo; i < hi; ++i) {
      if (ys[i - lo] == corpus::ground_truth(spec, test[i].x)) ++correct[c];
    }
  });
  std::size_t total = 0;
  for (auto c : correct) total += c;
  return static_cast<double>(total) / static_cast<double>(test.size());
}

template <std::floating_point T>
double match_ratio(const model::LanguageModel<T>& model, const corpus::Examples& examples, int threads) {
  if (examples.empty()) throw ValidationError("match_ratio: empty example set");
  const std::size_t chunks = (examples.size() + kChunk - 1) / kChunk;
  std::vector<std::size_t> matches(chunks, 0), positions(chunks, 0);
  const auto V = static_cast<std::size_t>(model.config().vocab_size);
  util::parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(examples.size(), lo + kChunk);
    std::vector<model::Tokens> xs, ys;
    for (std::size_t i = lo; i < hi; ++i) {
      xs.push_back(examples[i].x);
      ys.push_back(examples[i].y);
    }
    ad::NoGradGuard no_grad;
    auto batch = model::ResponseBatch::build(xs, ys, model.config());
    auto rows = ad::take_rows(model.forward(batch.inputs), batch.target_rows);
    auto v = rows.values();
    for (std::size_t r = 0; r < batch.targets.size(); ++r) {
      const auto top = model::argmax<T>(v.subspan(r * V, V));
      if (static_cast<model::TokenId>(top) == batch.targets[r]) ++matches[c];
      ++positions[c];
    }
  });
  std::size_t m = 0, n = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    m += matches[c];
    n += positions[c];
  }
  return static_cast<double>(m) / static_cast<double>(n);
}

template double task_accuracy(const model::LanguageModel<float>&, const corpus::Examples&, const corpus::TaskSpec&,
                              const std::vector<const corpus::Examples*>&, int);
template double task_accuracy(const model::LanguageModel<double>&, const corpus::Examples&, const corpus::TaskSpec&,
                              const std::vector<const corpus::Examples*>&, int);
template double match_ratio(const model::LanguageModel<float>&, const corpus::Examples&, int);
template double match_ratio(const model::LanguageModel<double>&, const corpus::Examples&, int);

}  // namespace pkd::eval
