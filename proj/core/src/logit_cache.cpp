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

#include "proxykd/blackbox/logit_cache.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numeric>

#include <nlohmann/json.hpp>

#include "proxykd/autodiff/ops.hpp"
#include "proxykd/error.hpp"
#include "proxykd/model/checkpoint.hpp"
#include "proxykd/model/response_batch.hpp"
#include "proxykd/util/parallel.hpp"

namespace pkd::blackbox {

static_assert(std::endian::native == std::endian::little, "cache I/O assumes little-endian hosts");

namespace {

constexpr char kMagic[4] = {'P', 'K', 'D', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kChunk = 32;

std::vector<const corpus::Example*> sorted_by_id(const corpus::Examples& examples) {
  std::vector<const corpus::Example*> order;
  order.reserve(examples.size());
  for (const auto& e : examples) order.push_back(&e);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (order[i]->id == order[i - 1]->id) throw ValidationError("logit cache: duplicate example id " + order[i]->id);
  }
  return order;
}

// Raw logits at every teacher-forced response position of a chunk.
template <std::floating_point T>
std::pair<model::ResponseBatch, std::vector<T>> response_logits(const model::LanguageModel<T>& m,
                                                                std::span<const corpus::Example* const> chunk) {
  std::vector<model::Tokens> xs, ys;
  for (auto* e : chunk) {
    xs.push_back(e->x);
    ys.push_back(e->y);
  }
  ad::NoGradGuard no_grad;
  auto batch = model::ResponseBatch::build(xs, ys, m.config());
  auto rows = ad::take_rows(m.forward(batch.inputs), batch.target_rows);
  auto v = rows.values();
  return {std::move(batch), std::vector<T>(v.begin(), v.end())};
}

}  // namespace

template <std::floating_point T>
LogitCache<T>::LogitCache(int k, int vocab_size, std::string checkpoint_hash)
    : k_(k), vocab_size_(vocab_size), checkpoint_hash_(std::move(checkpoint_hash)) {
  if (vocab_size < 1 || k < 1 || k > vocab_size) {
    throw ValidationError("logit cache: need 1 <= K <= vocab_size, got K=" + std::to_string(k) +
                          " vocab_size=" + std::to_string(vocab_size));
  }
}

template <std::floating_point T>
void LogitCache<T>::add(CachedExample<T> example) {
  if (!examples_.empty() && !(examples_.back().id < example.id)) {
    throw ValidationError("logit cache: examples must be added in strictly increasing id order (" + example.id + ")");
  }
  const std::size_t n = example.positions * static_cast<std::size_t>(k_);
  if (example.positions == 0 || example.ids.size() != n || example.logits.size() != n) {
    throw ValidationError("logit cache: malformed entry for example " + example.id);
  }
  for (std::size_t p = 0; p < example.positions; ++p) {
    std::vector<TokenId> seen(example.ids.begin() + static_cast<std::ptrdiff_t>(p * k_),
                              example.ids.begin() + static_cast<std::ptrdiff_t>((p + 1) * k_));
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
      throw ValidationError("logit cache: duplicate token id in entry " + example.id + "@" + std::to_string(p));
    }
    if (seen.front() < 0 || seen.back() >= vocab_size_) {
      throw ValidationError("logit cache: token id out of range in entry " + example.id);
    }
  }
  index_.emplace(example.id, examples_.size());
  examples_.push_back(std::move(example));
}

template <std::floating_point T>
const CachedExample<T>* LogitCache<T>::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &examples_[it->second];
}

template <std::floating_point T>
const CachedExample<T>& LogitCache<T>::at(const std::string& id) const {
  const auto* e = find(id);
  if (e == nullptr) throw ValidationError("logit cache: no entry for example " + id);
  return *e;
}

template <std::floating_point T>
LogitCacheEntry<T> LogitCache<T>::entry(const std::string& id, std::size_t position) const {
  const auto& e = at(id);
  if (position >= e.positions) {
    throw ValidationError("logit cache: example " + id + " has no position " + std::to_string(position));
  }
  const auto off = static_cast<std::ptrdiff_t>(position * static_cast<std::size_t>(k_));
  LogitCacheEntry<T> out{id, position, {}, {}};
  out.ids.assign(e.ids.begin() + off, e.ids.begin() + off + k_);
  out.logits.assign(e.logits.begin() + off, e.logits.begin() + off + k_);
  return out;
}

template <std::floating_point T>
std::size_t LogitCache<T>::total_positions() const {
  std::size_t n = 0;
  for (const auto& e : examples_) n += e.positions;
  return n;
}

template <std::floating_point T>
std::vector<TokenId> top_k_indices(std::span<const T> logits, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > logits.size()) throw ValidationError("top_k_indices: bad K");
  std::vector<TokenId> idx(logits.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](TokenId a, TokenId b) {
    const T la = logits[static_cast<std::size_t>(a)];
    const T lb = logits[static_cast<std::size_t>(b)];
    return la > lb || (la == lb && a < b);
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

template <std::floating_point T>
LogitCacheBuild<T> build_logit_cache(const model::LanguageModel<T>& proxy, const corpus::Examples& examples,
                                     int k, int threads) {
  const int V = proxy.config().vocab_size;
  LogitCacheBuild<T> out{LogitCache<T>(k, V, model::checkpoint_hash(proxy)), {}};
  std::vector<const corpus::Example*> usable;
  for (auto* e : sorted_by_id(examples)) {
    if (e->x.empty() || e->y.empty()) {
      out.skipped.push_back({e->id, "empty prompt or response"});
    } else if (e->x.size() + e->y.size() > static_cast<std::size_t>(proxy.config().max_seq_len)) {
      out.skipped.push_back({e->id, "length " + std::to_string(e->x.size() + e->y.size()) +
                                        " exceeds max_seq_len " + std::to_string(proxy.config().max_seq_len)});
    } else {
      usable.push_back(e);
    }
  }
  for (const auto& s : out.skipped) std::cerr << "warning: build_logit_cache skipped " << s.id << ": " << s.reason << "\n";

  const std::size_t n_chunks = (usable.size() + kChunk - 1) / kChunk;
  std::vector<std::vector<CachedExample<T>>> parts(n_chunks);
  util::parallel_for(n_chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(usable.size(), lo + kChunk);
    auto chunk = std::span<const corpus::Example* const>(usable).subspan(lo, hi - lo);
    auto [batch, rows] = response_logits(proxy, chunk);
    std::vector<CachedExample<T>> local(chunk.size());
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      local[b].id = chunk[b]->id;
      local[b].positions = batch.response_len[b];
    }
    for (std::size_t r = 0; r < batch.targets.size(); ++r) {
      auto row = std::span<const T>(rows).subspan(r * static_cast<std::size_t>(V), static_cast<std::size_t>(V));
      auto& dst = local[batch.segment[r]];
      for (TokenId id : top_k_indices(row, k)) {
        dst.ids.push_back(id);
        dst.logits.push_back(row[static_cast<std::size_t>(id)]);
      }
    }
    parts[c] = std::move(local);
  });
  for (auto& part : parts) {
    for (auto& e : part) out.cache.add(std::move(e));
  }
  return out;
}

template <std::floating_point T>
void write_logit_cache(const LogitCache<T>& cache, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("write_logit_cache: cannot open " + path.string());
  auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), sizeof v); };
  f.write(kMagic, 4);
  u32(kVersion);
  u32(static_cast<std::uint32_t>(cache.k()));
  u32(static_cast<std::uint32_t>(cache.vocab_size()));
  u32(static_cast<std::uint32_t>(sizeof(T)));
  u32(static_cast<std::uint32_t>(cache.checkpoint_hash().size()));
  f.write(cache.checkpoint_hash().data(), static_cast<std::streamsize>(cache.checkpoint_hash().size()));
  const std::uint64_t n = cache.examples().size();
  f.write(reinterpret_cast<const char*>(&n), sizeof n);
  for (const auto& e : cache.examples()) {
    u32(static_cast<std::uint32_t>(e.id.size()));
    f.write(e.id.data(), static_cast<std::streamsize>(e.id.size()));
    u32(static_cast<std::uint32_t>(e.positions));
    f.write(reinterpret_cast<const char*>(e.ids.data()), static_cast<std::streamsize>(e.ids.size() * sizeof(TokenId)));
    f.write(reinterpret_cast<const char*>(e.logits.data()), static_cast<std::streamsize>(e.logits.size() * sizeof(T)));
  }
  if (!f) throw Error("write_logit_cache: write failed for " + path.string());
}

template <std::floating_point T>
LogitCache<T> read_logit_cache(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("read_logit_cache: cannot open " + path.string());
  const std::string where = "read_logit_cache: " + path.string() + ": ";
  auto raw = [&](void* p, std::size_t n) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f.gcount()) != n) throw ValidationError(where + "truncated file");
  };
  auto u32 = [&] {
    std::uint32_t v = 0;
    raw(&v, sizeof v);
    return v;
  };
  char magic[4];
  raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw ValidationError(where + "bad magic");
  if (auto v = u32(); v != kVersion) throw ValidationError(where + "unsupported version " + std::to_string(v));
  const auto k = static_cast<int>(u32());
  const auto vocab = static_cast<int>(u32());
  if (auto bytes = u32(); bytes != sizeof(T)) {
    throw ValidationError(where + "stored logits are " + std::to_string(bytes * 8) + "-bit, reader expects " +
                          std::to_string(sizeof(T) * 8) + "-bit");
  }
  std::string hash(u32(), '\0');
  raw(hash.data(), hash.size());
  LogitCache<T> cache(k, vocab, hash);
  std::uint64_t n = 0;
  raw(&n, sizeof n);
  for (std::uint64_t i = 0; i < n; ++i) {
    CachedExample<T> e;
    e.id.resize(u32());
    raw(e.id.data(), e.id.size());
    e.positions = u32();
    const std::size_t m = e.positions * static_cast<std::size_t>(k);
    e.ids.resize(m);
    e.logits.resize(m);
    raw(e.ids.data(), m * sizeof(TokenId));
    raw(e.logits.data(), m * sizeof(T));
    cache.add(std::move(e));
  }
  if (f.peek() != std::ifstream::traits_type::eof()) throw ValidationError(where + "trailing bytes");
  return cache;
}

std::string serialize_skip_manifest(const std::vector<SkippedExample>& skipped, std::size_t cached, int k,
                                    const std::string& checkpoint_hash) {
  nlohmann::ordered_json j;
  j["k"] = k;
  j["checkpoint_hash"] = checkpoint_hash;
  j["cached_examples"] = cached;
  j["skipped"] = nlohmann::ordered_json::array();
  for (const auto& s : skipped) j["skipped"].push_back({{"id", s.id}, {"reason", s.reason}});
  return j.dump(2) + "\n";
}

template <std::floating_point T>
std::vector<CoveragePoint> topk_coverage(const model::LanguageModel<T>& model, const corpus::Examples& examples,
                                         const std::vector<int>& k_list, double threshold) {
  if (examples.empty()) throw ValidationError("topk_coverage: empty example set");
  if (k_list.empty()) throw ValidationError("topk_coverage: empty K list");
  const int V = model.config().vocab_size;
  for (std::size_t i = 0; i < k_list.size(); ++i) {
    if (k_list[i] < 1 || k_list[i] > V) throw ValidationError("topk_coverage: K out of range: " + std::to_string(k_list[i]));
    if (i > 0 && k_list[i] <= k_list[i - 1]) throw ValidationError("topk_coverage: K list must be ascending");
  }
  // Summation noise must not decide ties with the threshold.
  constexpr double kSlack = 1e-9;
  std::vector<std::size_t> hits(k_list.size(), 0);
  std::size_t positions = 0;
  std::vector<const corpus::Example*> all;
  for (const auto& e : examples) all.push_back(&e);
  for (std::size_t lo = 0; lo < all.size(); lo += kChunk) {
    const std::size_t hi = std::min(all.size(), lo + kChunk);
    auto [batch, rows] = response_logits(model, std::span<const corpus::Example* const>(all).subspan(lo, hi - lo));
    std::vector<double> p(static_cast<std::size_t>(V));
    for (std::size_t r = 0; r < batch.targets.size(); ++r) {
      const T* row = rows.data() + r * static_cast<std::size_t>(V);
      const double mx = static_cast<double>(*std::max_element(row, row + V));
      double z = 0;
      for (int v = 0; v < V; ++v) z += p[static_cast<std::size_t>(v)] = std::exp(static_cast<double>(row[v]) - mx);
      for (auto& q : p) q /= z;
      std::sort(p.begin(), p.end(), std::greater<>());
      double cum = 0;
      std::size_t next = 0;
      for (int kk = 1; kk <= V && next < k_list.size(); ++kk) {
        cum += p[static_cast<std::size_t>(kk - 1)];
        while (next < k_list.size() && k_list[next] == kk) {
          if (cum + kSlack >= threshold) ++hits[next];
          ++next;
        }
      }
      ++positions;
    }
  }
  std::vector<CoveragePoint> out;
  for (std::size_t i = 0; i < k_list.size(); ++i) {
    out.push_back({k_list[i], 100.0 * static_cast<double>(hits[i]) / static_cast<double>(positions)});
  }
  return out;
}

#define PKD_INSTANTIATE_CACHE(T)                                                                                 \
  template class LogitCache<T>;                                                                                  \
  template LogitCacheBuild<T> build_logit_cache(const model::LanguageModel<T>&, const corpus::Examples&, int, int); \
  template std::vector<TokenId> top_k_indices(std::span<const T>, int);                                           \
  template void write_logit_cache(const LogitCache<T>&, const std::filesystem::path&);                          \
  template LogitCache<T> read_logit_cache(const std::filesystem::path&);                                         \
  template std::vector<CoveragePoint> topk_coverage(const model::LanguageModel<T>&, const corpus::Examples&,     \
                                                    const std::vector<int>&, double);

PKD_INSTANTIATE_CACHE(float)
PKD_INSTANTIATE_CACHE(double)

}  // namespace pkd::blackbox
