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
#include <mutex>
#include <set>
#include <string>
#include <utility>

#include "proxykd/corpus/example.hpp"

namespace pkd::corpus {

enum class Part { kWarmup, kProxy, kStudent };

std::string_view part_name(Part part);

/// Records which corpus parts each pipeline stage touched.
class AccessLog {
 public:
  void set_stage(std::string stage);
  void record(Part part);
  bool touched(const std::string& stage, Part part) const;
  std::set<std::pair<std::string, Part>> entries() const;

 private:
  mutable std::mutex mu_;
  std::string stage_ = "none";
  std::set<std::pair<std::string, Part>> entries_;
};

/// Disjoint warm-up (d_w), proxy-alignment (d_p) and student (d_s) parts.
class SplitCorpus {
 public:
  SplitCorpus() = default;
  SplitCorpus(Examples d_w, Examples d_p, Examples d_s, std::uint64_t split_seed);

  const Examples& warmup() const;
  const Examples& proxy() const;
  const Examples& student() const;
  std::uint64_t split_seed() const { return split_seed_; }

  /// Accesses through warmup()/proxy()/student() are reported to log.
  void set_access_log(AccessLog* log) { log_ = log; }

 private:
  Examples d_w_, d_p_, d_s_;
  std::uint64_t split_seed_ = 0;
  AccessLog* log_ = nullptr;
};

inline constexpr std::array<double, 3> kDefaultFractions = {0.10, 0.45, 0.45};

/// Sorts by id, shuffles with seed, then cuts floor(f_w n) / floor(f_p n) /
/// remainder. Fractions must be positive and sum to 1 within 1e-9.
SplitCorpus split_corpus(Examples examples, std::array<double, 3> fractions = kDefaultFractions,
                         std::uint64_t seed = 0);

}  // namespace pkd::corpus
