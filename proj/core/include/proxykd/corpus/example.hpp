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

#include <string>
#include <vector>

#include "proxykd/model/language_model.hpp"

namespace pkd::corpus {

using model::TokenId;
using model::Tokens;

/// One (prompt, response) pair. The prompt starts with <bos>; a labelled
/// response is non-empty and ends with <eos>. Freshly generated prompts carry
/// an empty response until a teacher labels them.
struct Example {
  std::string id;
  Tokens x;
  Tokens y;
  std::string task_tag;

  bool operator==(const Example&) const = default;
};

using Examples = std::vector<Example>;

}  // namespace pkd::corpus
