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

#include "proxykd/corpus/task.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <unordered_set>

#include "proxykd/error.hpp"
#include "proxykd/util/rng.hpp"

namespace pkd::corpus {

namespace {

constexpr std::uint64_t kSaturated = std::numeric_limits<std::uint64_t>::max();

std::uint64_t sat_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > kSaturated / a) return kSaturated;
  return a * b;
}

std::uint64_t sat_add(std::uint64_t a, std::uint64_t b) { return a > kSaturated - b ? kSaturated : a + b; }

std::uint64_t sat_pow(std::uint64_t base, int exp) {
  std::uint64_t r = 1;
  for (int i = 0; i < exp; ++i) r = sat_mul(r, base);
  return r;
}

int digits_of(int value) {
  int w = 1;
  while (value >= 10) {
    value /= 10;
    ++w;
  }
  return w;
}

int operand_width(const TaskSpec& s) { return digits_of(s.modulus - 1); }

std::uint64_t symbol_count(const TaskSpec& s) {
  return s.kind == TaskKind::kSortDigits ? 10 : static_cast<std::uint64_t>(s.alphabet_size);
}

char symbol_char(const TaskSpec& s, std::uint64_t k) {
  return s.kind == TaskKind::kSortDigits ? static_cast<char>('0' + k) : static_cast<char>('a' + k);
}

void append_number(Tokens& out, int value, int width, const Vocab& vocab) {
  std::string digits = std::to_string(value);
  digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  for (char c : digits) out.push_back(vocab.id(c));
}

[[noreturn]] void malformed(const TaskSpec& s, const Tokens& x, const Vocab& vocab, const std::string& why) {
  std::string text;
  try {
    text = vocab.decode(x);
  } catch (const Error&) {
    text = "<undecodable>";
  }
  throw ValidationError("ground_truth(" + s.tag() + "): malformed prompt '" + text + "': " + why);
}

int parse_number(const TaskSpec& s, const Tokens& x, std::size_t begin, int width, const Vocab& vocab) {
  int v = 0;
  for (int i = 0; i < width; ++i) {
    const std::string& sym = vocab.symbol(x[begin + static_cast<std::size_t>(i)]);
    if (sym.size() != 1 || sym[0] < '0' || sym[0] > '9') malformed(s, x, vocab, "expected a digit");
    v = v * 10 + (sym[0] - '0');
  }
  if (v >= s.modulus) malformed(s, x, vocab, "operand out of range");
  return v;
}

// Payload characters between <bos> and the trailing '='.
std::string parse_payload(const TaskSpec& s, const Tokens& x, const Vocab& vocab) {
  if (x.size() < 3 || x.front() != model::kBos || x.back() != vocab.id('=')) {
    malformed(s, x, vocab, "expected <bos> payload =");
  }
  std::string payload;
  for (std::size_t i = 1; i + 1 < x.size(); ++i) {
    const std::string& sym = vocab.symbol(x[i]);
    if (sym.size() != 1) malformed(s, x, vocab, "special token inside payload");
    const char c = sym[0];
    const bool ok = s.kind == TaskKind::kSortDigits
                        ? (c >= '0' && c <= '9')
                        : (c >= 'a' && c < static_cast<char>('a' + s.alphabet_size));
    if (!ok) malformed(s, x, vocab, std::string("symbol '") + c + "' not in task alphabet");
    payload.push_back(c);
  }
  const auto len = static_cast<int>(payload.size());
  if (len < s.min_len || len > s.max_len) malformed(s, x, vocab, "payload length out of range");
  return payload;
}

std::string answer_text(const TaskSpec& s, const Tokens& x, const Vocab& vocab) {
  if (s.kind == TaskKind::kModAdd) {
    const int w = operand_width(s);
    const std::size_t expect = static_cast<std::size_t>(2 * w + 3);
    if (x.size() != expect || x.front() != model::kBos ||
        x[static_cast<std::size_t>(w) + 1] != vocab.id('+') || x.back() != vocab.id('=')) {
      malformed(s, x, vocab, "expected <bos> a + b =");
    }
    const int a = parse_number(s, x, 1, w, vocab);
    const int b = parse_number(s, x, static_cast<std::size_t>(w) + 2, w, vocab);
    std::string d = std::to_string((a + b) % s.modulus);
    d.insert(0, static_cast<std::size_t>(w) - d.size(), '0');
    return d;
  }
  std::string p = parse_payload(s, x, vocab);
  if (s.kind == TaskKind::kReverse) std::reverse(p.begin(), p.end());
  if (s.kind == TaskKind::kSortDigits) std::sort(p.begin(), p.end());
  return p;
}

}  // namespace

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kModAdd: return "modadd";
    case TaskKind::kCopy: return "copy";
    case TaskKind::kReverse: return "reverse";
    case TaskKind::kSortDigits: return "sortdigits";
  }
  return "unknown";
}

TaskKind parse_task(std::string_view name) {
  if (name == "modadd") return TaskKind::kModAdd;
  if (name == "copy") return TaskKind::kCopy;
  if (name == "reverse") return TaskKind::kReverse;
  if (name == "sortdigits") return TaskKind::kSortDigits;
  throw ValidationError("unknown task '" + std::string(name) + "' (expected modadd|copy|reverse|sortdigits)");
}

void TaskSpec::validate() const {
  if (kind == TaskKind::kModAdd) {
    if (modulus < 2) throw ValidationError("task modadd: modulus must be >= 2");
    return;
  }
  if (min_len < 1 || max_len < min_len) throw ValidationError("task " + tag() + ": need 1 <= min_len <= max_len");
  if (kind != TaskKind::kSortDigits && (alphabet_size < 1 || alphabet_size > 16)) {
    throw ValidationError("task " + tag() + ": alphabet_size must be in [1,16]");
  }
}

std::uint64_t TaskSpec::prompt_count() const {
  if (kind == TaskKind::kModAdd) {
    return static_cast<std::uint64_t>(modulus) * static_cast<std::uint64_t>(modulus);
  }
  std::uint64_t total = 0;
  for (int len = min_len; len <= max_len; ++len) total = sat_add(total, sat_pow(symbol_count(*this), len));
  return total;
}

int TaskSpec::max_prompt_len() const {
  if (kind == TaskKind::kModAdd) return 2 * operand_width(*this) + 3;
  return max_len + 2;
}

int TaskSpec::max_response_len() const {
  if (kind == TaskKind::kModAdd) return operand_width(*this) + 1;
  return max_len + 1;
}

Tokens prompt_at(const TaskSpec& spec, std::uint64_t index, const Vocab& vocab) {
  spec.validate();
  if (index >= spec.prompt_count()) {
    throw ValidationError("prompt_at: index " + std::to_string(index) + " outside task " + spec.tag());
  }
  Tokens x{model::kBos};
  if (spec.kind == TaskKind::kModAdd) {
    const auto m = static_cast<std::uint64_t>(spec.modulus);
    const int w = operand_width(spec);
    append_number(x, static_cast<int>(index / m), w, vocab);
    x.push_back(vocab.id('+'));
    append_number(x, static_cast<int>(index % m), w, vocab);
    x.push_back(vocab.id('='));
    return x;
  }
  const std::uint64_t base = symbol_count(spec);
  int len = spec.min_len;
  for (;; ++len) {
    const std::uint64_t block = sat_pow(base, len);
    if (index < block) break;
    index -= block;
  }
  std::string payload(static_cast<std::size_t>(len), ' ');
  for (int i = len - 1; i >= 0; --i) {
    payload[static_cast<std::size_t>(i)] = symbol_char(spec, index % base);
    index /= base;
  }
  for (char c : payload) x.push_back(vocab.id(c));
  x.push_back(vocab.id('='));
  return x;
}

Examples generate_task_corpus(const TaskSpec& spec, std::size_t n, std::uint64_t seed,
                              const std::unordered_set<std::string>& exclude, const Vocab& vocab) {
  spec.validate();
  if (n < 1) throw ValidationError("generate_task_corpus: n must be >= 1");
  const std::uint64_t capacity = spec.prompt_count();
  const std::string prefix = spec.tag() + ":";
  auto make_id = [&](std::uint64_t i) { return prefix + std::to_string(i); };

  std::size_t excluded_in_range = 0;
  for (const auto& id : exclude) {
    if (id.rfind(prefix, 0) == 0) ++excluded_in_range;
  }
  if (capacity < excluded_in_range || capacity - excluded_in_range < n) {
    throw ValidationError("generate_task_corpus: task " + spec.tag() + " has only " +
                          std::to_string(capacity) + " distinct prompts (" +
                          std::to_string(excluded_in_range) + " excluded); cannot draw " +
                          std::to_string(n));
  }

  util::Rng rng(seed);
  std::vector<std::uint64_t> chosen;
  chosen.reserve(n);
  constexpr std::uint64_t kEnumerateLimit = 1u << 22;
  if (capacity <= kEnumerateLimit) {
    std::vector<std::uint64_t> pool;
    pool.reserve(capacity);
    for (std::uint64_t i = 0; i < capacity; ++i) {
      if (exclude.empty() || !exclude.count(make_id(i))) pool.push_back(i);
    }
    // Partial Fisher-Yates: the first n slots become the sample.
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      chosen.push_back(pool[i]);
    }
  } else {
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(n * 2);
    std::uniform_int_distribution<std::uint64_t> pick(0, capacity - 1);
    while (chosen.size() < n) {
      const std::uint64_t i = pick(rng);
      if (!seen.insert(i).second) continue;
      if (!exclude.empty() && exclude.count(make_id(i))) continue;
      chosen.push_back(i);
    }
  }

  Examples out;
  out.reserve(n);
  for (std::uint64_t i : chosen) out.push_back({make_id(i), prompt_at(spec, i, vocab), {}, spec.tag()});
  return out;
}

Tokens ground_truth(const TaskSpec& spec, const Tokens& x, const Vocab& vocab) {
  spec.validate();
  Tokens y = vocab.encode(answer_text(spec, x, vocab));
  y.push_back(model::kEos);
  return y;
}

Tokens perturbed_answer(const TaskSpec& spec, const Tokens& x, std::uint64_t draw, const Vocab& vocab) {
  std::string ans = answer_text(spec, x, vocab);
  if (spec.kind == TaskKind::kModAdd) {
    if (spec.modulus >= 2) {
      const auto m = static_cast<std::uint64_t>(spec.modulus);
      const auto truth = static_cast<std::uint64_t>(std::stoi(ans));
      std::string d = std::to_string((truth + 1 + draw % (m - 1)) % m);
      d.insert(0, ans.size() - d.size(), '0');
      ans = d;
    }
  } else {
    const std::uint64_t k = symbol_count(spec);
    if (k >= 2) {
      const std::size_t pos = draw % ans.size();
      const std::uint64_t cur = spec.kind == TaskKind::kSortDigits
                                    ? static_cast<std::uint64_t>(ans[pos] - '0')
                                    : static_cast<std::uint64_t>(ans[pos] - 'a');
      const std::uint64_t shift = 1 + (draw / ans.size()) % (k - 1);
      ans[pos] = symbol_char(spec, (cur + shift) % k);
    }
  }
  Tokens y = vocab.encode(ans);
  y.push_back(model::kEos);
  return y;
}

}  // namespace pkd::corpus
