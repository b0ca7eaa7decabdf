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
#include <unordered_map>
#include <vector>

#include "proxykd/corpus/example.hpp"
#include "proxykd/model/language_model.hpp"

namespace pkd::blackbox {

using model::TokenId;

/// Top-K view of one response position: ids and raw logits, descending by
/// logit (equal logits ordered by lower id).
template <std::floating_point T>
struct LogitCacheEntry {
  std::string example_id;
  std::size_t position = 0;
  std::vector<TokenId> ids;
  std::vector<T> logits;

  bool operator==(const LogitCacheEntry&) const = default;
};

/// All positions of one example, stored position-major (position * k + j).
template <std::floating_point T>
struct CachedExample {
  std::string id;
  std::size_t positions = 0;
  std::vector<TokenId> ids;
  std::vector<T> logits;

  bool operator==(const CachedExample&) const = default;
};

struct SkippedExample {
  std::string id;
  std::string reason;

  bool operator==(const SkippedExample&) const = default;
};

template <std::floating_point T>
class LogitCache {
 public:
  LogitCache() = default;
  LogitCache(int k, int vocab_size, std::string checkpoint_hash);

  int k() const { return k_; }
  int vocab_size() const { return vocab_size_; }
  const std::string& checkpoint_hash() const { return checkpoint_hash_; }
  const std::vector<CachedExample<T>>& examples() const { return examples_; }

  /// Appends an example; ids must be strictly increasing across calls.
  void add(CachedExample<T> example);

  const CachedExample<T>* find(const std::string& id) const;
  /// Throws naming the example id when it is missing.
  const CachedExample<T>& at(const std::string& id) const;
  LogitCacheEntry<T> entry(const std::string& id, std::size_t position) const;
  std::size_t total_positions() const;

  bool operator==(const LogitCache& other) const {
    return k_ == other.k_ && vocab_size_ == other.vocab_size_ && checkpoint_hash_ == other.checkpoint_hash_ &&
           examples_ == other.examples_;
  }

 private:
  int k_ = 0;
  int vocab_size_ = 0;
  std::string checkpoint_hash_;
  std::vector<CachedExample<T>> examples_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <std::floating_point T>
struct LogitCacheBuild {
  LogitCache<T> cache;
  std::vector<SkippedExample> skipped;
};

/// Teacher-forced top-K over every response position of each example, in id
/// order. Examples that do not fit in the model context are skipped and listed.
template <std::floating_point T>
LogitCacheBuild<T> build_logit_cache(const model::LanguageModel<T>& proxy, const corpus::Examples& examples,
                                     int k = 10, int threads = 1);

/// Indices of the k largest values, by value descending then index ascending.
template <std::floating_point T>
std::vector<TokenId> top_k_indices(std::span<const T> logits, int k);

template <std::floating_point T>
void write_logit_cache(const LogitCache<T>& cache, const std::filesystem::path& path);
template <std::floating_point T>
LogitCache<T> read_logit_cache(const std::filesystem::path& path);

std::string serialize_skip_manifest(const std::vector<SkippedExample>& skipped, std::size_t cached, int k,
                                    const std::string& checkpoint_hash);

struct CoveragePoint {
  int k = 0;
  double percent = 0.0;
};

/// Share of teacher-forced response positions whose top-K probability mass
/// reaches threshold, for each K in k_list (ascending).
template <std::floating_point T>
std::vector<CoveragePoint> topk_coverage(const model::LanguageModel<T>& model, const corpus::Examples& examples,
                                         const std::vector<int>& k_list, double threshold = 0.95);

}  // namespace pkd::blackbox
