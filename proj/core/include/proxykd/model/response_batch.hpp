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

#include <cstddef>
#include <span>
#include <vector>

#include "proxykd/model/language_model.hpp"

namespace pkd::model {

/// Teacher-forced layout of (prompt, response) pairs. Row b holds
/// x_b ++ y_b without its final token, so position |x_b| - 1 + t predicts
/// y_b[t]. Targets are listed row by row in response order.
struct ResponseBatch {
  TokenBatch inputs;
  std::vector<std::size_t> target_rows;  // row index into logits viewed as (B*L, V)
  std::vector<std::size_t> target_flat;  // flat index into logits (B*L*V) of the target token
  std::vector<TokenId> targets;
  std::vector<std::size_t> segment;       // owning example of each target
  std::vector<std::size_t> response_len;  // |y_b|

  std::size_t examples() const { return response_len.size(); }

  /// Fails on empty prompts or responses and on pairs longer than
  /// config.max_seq_len.
  static ResponseBatch build(std::span<const Tokens> prompts, std::span<const Tokens> responses,
                             const ModelConfig& config);
};

}  // namespace pkd::model
