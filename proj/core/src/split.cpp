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

#include "proxykd/corpus/split.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "proxykd/error.hpp"
#include "proxykd/util/rng.hpp"

namespace pkd::corpus {

std::string_view part_name(Part part) {
  switch (part) {
    case Part::kWarmup: return "d_w";
    case Part::kProxy: return "d_p";
    case Part::kStudent: return "d_s";
  }
  return "?";
}

void AccessLog::set_stage(std::string stage) {
  std::lock_guard lock(mu_);
  stage_ = std::move(stage);
}

void AccessLog::record(Part part) {
  std::lock_guard lock(mu_);
  entries_.emplace(stage_, part);
}

bool AccessLog::touched(const std::string& stage, Part part) const {
  std::lock_guard lock(mu_);
  return entries_.count({stage, part}) != 0;
}

std::set<std::pair<std::string, Part>> AccessLog::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

SplitCorpus::SplitCorpus(Examples d_w, Examples d_p, Examples d_s, std::uint64_t split_seed)
    : d_w_(std::move(d_w)), d_p_(std::move(d_p)), d_s_(std::move(d_s)), split_seed_(split_seed) {}

const Examples& SplitCorpus::warmup() const {
  if (log_) log_->record(Part::kWarmup);
  return d_w_;
}

const Examples& SplitCorpus::proxy() const {
  if (log_) log_->record(Part::kProxy);
  return d_p_;
}

const Examples& SplitCorpus::student() const {
  if (log_) log_->record(Part::kStudent);
  return d_s_;
}

SplitCorpus split_corpus(Examples examples, std::array<double, 3> fractions, std::uint64_t seed) {
  double total = 0;
  for (double f : fractions) {
    if (!(f > 0)) throw ValidationError("split_corpus: fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError("split_corpus: fractions sum to " + std::to_string(total) + ", expected 1");
  }
  if (examples.size() < 3) {
    throw ValidationError("split_corpus: need at least 3 examples, got " + std::to_string(examples.size()));
  }
  std::sort(examples.begin(), examples.end(), [](const Example& a, const Example& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < examples.size(); ++i) {
    if (examples[i].id == examples[i - 1].id) throw ValidationError("split_corpus: duplicate id " + examples[i].id);
  }
  util::Rng rng(seed);
  std::shuffle(examples.begin(), examples.end(), rng);

  const auto n = static_cast<double>(examples.size());
  // The epsilon keeps exact products such as 0.45 * 20 from flooring down.
  const auto n_w = static_cast<std::size_t>(std::floor(fractions[0] * n + 1e-9));
  const auto n_p = static_cast<std::size_t>(std::floor(fractions[1] * n + 1e-9));
  auto first = examples.begin();
  Examples d_w(std::make_move_iterator(first), std::make_move_iterator(first + static_cast<std::ptrdiff_t>(n_w)));
  Examples d_p(std::make_move_iterator(first + static_cast<std::ptrdiff_t>(n_w)),
               std::make_move_iterator(first + static_cast<std::ptrdiff_t>(n_w + n_p)));
  Examples d_s(std::make_move_iterator(first + static_cast<std::ptrdiff_t>(n_w + n_p)),
               std::make_move_iterator(examples.end()));
  return SplitCorpus(std::move(d_w), std::move(d_p), std::move(d_s), seed);
}

}  // namespace pkd::corpus
