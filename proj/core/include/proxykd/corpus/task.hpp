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
#include <string>
#include <string_view>
#include <unordered_set>

#include "proxykd/corpus/example.hpp"
#include "proxykd/corpus/vocab.hpp"

namespace pkd::corpus {

enum class TaskKind { kModAdd, kCopy, kReverse, kSortDigits };

std::string_view task_name(TaskKind kind);
TaskKind parse_task(std::string_view name);

/// Synthetic task with a unique, computable answer per prompt.
///
///   modadd      <bos> a + b =     ->  (a+b) mod m   (operands and answer
///                                      zero-padded to the width of m-1)
///   copy        <bos> s =         ->  s
///   reverse     <bos> s =         ->  reversed s
///   sortdigits  <bos> d =         ->  digits of d in ascending order
///
/// s draws from the first alphabet_size letters a..p, d from 0-9; payload
/// lengths range over [min_len, max_len].
struct TaskSpec {
  TaskKind kind = TaskKind::kModAdd;
  int modulus = 97;
  int min_len = 4;
  int max_len = 8;
  int alphabet_size = 8;

  void validate() const;
  std::string tag() const { return std::string(task_name(kind)); }

  /// Number of distinct prompts, saturating at UINT64_MAX.
  std::uint64_t prompt_count() const;
  /// Prompt/answer token lengths including <bos> and <eos>.
  int max_prompt_len() const;
  int max_response_len() const;
  /// Smallest max_seq_len that fits every prompt with its answer.
  int required_seq_len() const { return max_prompt_len() + max_response_len(); }
};

/// Bijection between [0, prompt_count) and the task's prompts.
Tokens prompt_at(const TaskSpec& spec, std::uint64_t index, const Vocab& vocab = Vocab::standard());

/// n distinct prompts (empty responses), deterministic in (spec, n, seed).
/// Ids are "<task>:<index>" so equal prompts always share an id. Prompts whose
/// ids appear in exclude are never produced.
Examples generate_task_corpus(const TaskSpec& spec, std::size_t n, std::uint64_t seed,
                              const std::unordered_set<std::string>& exclude = {},
                              const Vocab& vocab = Vocab::standard());

/// The unique correct response, <eos>-terminated. Fails on malformed prompts.
Tokens ground_truth(const TaskSpec& spec, const Tokens& x, const Vocab& vocab = Vocab::standard());

/// A well-formed response different from ground_truth(spec, x), selected by
/// draw. Falls back to the ground truth when the task admits a single answer.
Tokens perturbed_answer(const TaskSpec& spec, const Tokens& x, std::uint64_t draw,
                        const Vocab& vocab = Vocab::standard());

}  // namespace pkd::corpus
