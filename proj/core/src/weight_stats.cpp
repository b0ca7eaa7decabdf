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

#include "proxykd/losses/weight_stats.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "proxykd/error.hpp"
#include "proxykd/model/decode.hpp"
#include "proxykd/model/response_batch.hpp"
#include "proxykd/util/parallel.hpp"

namespace pkd::losses {

double WeightStats::weight(const std::string& id) const {
  auto it = weights.find(id);
  if (it == weights.end()) throw ValidationError("weight stats: no weight for example " + id);
  return it->second;
}

WeightStats weight_stats_from_logliks(std::map<std::string, double> loglik) {
  if (loglik.empty()) throw ValidationError("weight stats: no examples");
  WeightStats s;
  const auto n = static_cast<double>(loglik.size());
  double sum = 0;
  for (const auto& [id, v] : loglik) {
    if (!std::isfinite(v)) throw NonFiniteError("weight stats: non-finite log-likelihood for " + id);
    sum += v;
  }
  s.mu = sum / n;
  double ss = 0;
  for (const auto& [id, v] : loglik) ss += (v - s.mu) * (v - s.mu);
  s.gamma = std::sqrt(ss / n);
  for (const auto& [id, v] : loglik) {
    s.weights[id] = s.gamma < kGammaEpsilon ? 0.5 : 1.0 / (1.0 + std::exp(-(v - s.mu) / s.gamma));
  }
  s.loglik = std::move(loglik);
  return s;
}

template <std::floating_point T>
WeightStats compute_weight_stats(const model::LanguageModel<T>& proxy, const corpus::Examples& examples, int threads) {
  if (examples.empty()) throw ValidationError("compute_weight_stats: empty example set");
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (examples.size() + kChunk - 1) / kChunk;
  std::vector<double> ll(examples.size());
  util::parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(examples.size(), lo + kChunk);
    std::vector<model::Tokens> xs, ys;
    for (std::size_t i = lo; i < hi; ++i) {
      xs.push_back(examples[i].x);
      ys.push_back(examples[i].y);
    }
    ad::NoGradGuard no_grad;
    auto batch = model::ResponseBatch::build(xs, ys, proxy.config());
    const auto lp = model::sequence_log_probs(proxy, batch);
    auto v = lp.values();
    for (std::size_t i = lo; i < hi; ++i) ll[i] = static_cast<double>(v[i - lo]);
  });
  std::map<std::string, double> by_id;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!by_id.emplace(examples[i].id, ll[i]).second) {
      throw ValidationError("compute_weight_stats: duplicate example id " + examples[i].id);
    }
  }
  return weight_stats_from_logliks(std::move(by_id));
}

std::string weight_stats_to_json(const WeightStats& stats) {
  nlohmann::ordered_json j;
  j["mu"] = stats.mu;
  j["gamma"] = stats.gamma;
  j["examples"] = nlohmann::ordered_json::array();
  for (const auto& [id, w] : stats.weights) {
    j["examples"].push_back({{"id", id}, {"loglik", stats.loglik.at(id)}, {"weight", w}});
  }
  return j.dump(1) + "\n";
}

WeightStats weight_stats_from_json(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    WeightStats s;
    s.mu = j.at("mu").get<double>();
    s.gamma = j.at("gamma").get<double>();
    for (const auto& e : j.at("examples")) {
      const auto id = e.at("id").get<std::string>();
      s.loglik[id] = e.at("loglik").get<double>();
      s.weights[id] = e.at("weight").get<double>();
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("weight stats: malformed JSON: ") + e.what());
  }
}

void save_weight_stats(const WeightStats& stats, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("save_weight_stats: cannot open " + path.string());
  f << weight_stats_to_json(stats);
}

WeightStats load_weight_stats(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("load_weight_stats: cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return weight_stats_from_json(ss.str());
}

template WeightStats compute_weight_stats(const model::LanguageModel<float>&, const corpus::Examples&, int);
template WeightStats compute_weight_stats(const model::LanguageModel<double>&, const corpus::Examples&, int);

}  // namespace pkd::losses
