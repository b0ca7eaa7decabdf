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

// One JSON object per line:
//   {"id": "...", "prompt": [ids] | "text", "response": [ids] | "text", "task_tag": "..."}
// Text prompts gain a leading <bos>; non-empty text responses gain a
// trailing <eos>. save_jsonl always writes token-id arrays.

#pragma once

#include <filesystem>

#include "proxykd/corpus/example.hpp"
#include "proxykd/corpus/vocab.hpp"

namespace pkd::corpus {

/// Fails with the 1-based line number on malformed lines or duplicate ids.
Examples load_jsonl(const std::filesystem::path& path, const Vocab& vocab = Vocab::standard());
void save_jsonl(const Examples& examples, const std::filesystem::path& path);

}  // namespace pkd::corpus
