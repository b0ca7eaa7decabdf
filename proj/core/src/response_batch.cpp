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

#include "proxykd/model/response_batch.hpp"

#include <string>

#include "proxykd/error.hpp"

namespace pkd::model {

ResponseBatch ResponseBatch::build(std::span<const Tokens> prompts, std::span<const Tokens> responses,
                                   const ModelConfig& config) {
  if (prompts.size() != responses.size()) {
    throw ValidationError("response batch: " + std::to_string(prompts.size()) + " prompts vs " +
                          std::to_string(responses.size()) + " responses");
  }
  if (prompts.empty()) throw ValidationError("response batch: no examples");
  std::vector<Tokens> rows;
  rows.reserve(prompts.size());
  ResponseBatch out;
  for (std::size_t b = 0; b < prompts.size(); ++b) {
    const Tokens& x = prompts[b];
    const Tokens& y = responses[b];
    if (x.empty()) throw ValidationError("response batch: empty prompt in example " + std::to_string(b));
    if (y.empty()) throw ValidationError("response batch: empty response in example " + std::to_string(b));
    if (x.size() + y.size() > static_cast<std::size_t>(config.max_seq_len)) {
      throw ValidationError("response batch: example " + std::to_string(b) + " has length " +
                            std::to_string(x.size() + y.size()) + " > max_seq_len " +
                            std::to_string(config.max_seq_len));
    }
    Tokens row(x);
    row.insert(row.end(), y.begin(), y.end() - 1);
    rows.push_back(std::move(row));
    out.response_len.push_back(y.size());
  }
  out.inputs = TokenBatch::from_sequences(rows);
  const std::size_t L = out.inputs.length;
  const auto V = static_cast<std::size_t>(config.vocab_size);
  for (std::size_t b = 0; b < prompts.size(); ++b) {
    const Tokens& y = responses[b];
    for (std::size_t t = 0; t < y.size(); ++t) {
      if (y[t] < 0 || static_cast<std::size_t>(y[t]) >= V) {
        throw ValidationError("response batch: token " + std::to_string(y[t]) + " in response " +
                              std::to_string(b) + " outside vocabulary");
      }
      const std::size_t row = b * L + prompts[b].size() - 1 + t;
      out.target_rows.push_back(row);
      out.target_flat.push_back(row * V + static_cast<std::size_t>(y[t]));
      out.targets.push_back(y[t]);
      out.segment.push_back(b);
    }
  }
  return out;
}

}  // namespace pkd::model
