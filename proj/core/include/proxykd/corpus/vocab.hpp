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

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "proxykd/model/language_model.hpp"

namespace pkd::corpus {

using model::TokenId;
using model::Tokens;

/// Symbol-level vocabulary. Ids 0..2 are always <pad>, <bos>, <eos>; every
/// other symbol is a single character.
class Vocab {
 public:
  /// <pad> <bos> <eos> 0-9 + = | a-p : 32 symbols.
  static Vocab standard();
  /// Reads a JSON object mapping symbol -> id.
  static Vocab load(const std::filesystem::path& path);
  static Vocab from_map(const std::unordered_map<std::string, TokenId>& map);

  void save(const std::filesystem::path& path) const;

  int size() const { return static_cast<int>(symbols_.size()); }
  TokenId id(char symbol) const;
  bool contains(char symbol) const;
  const std::string& symbol(TokenId id) const;

  /// Characters to ids; fails on unknown characters. No BOS/EOS are added.
  Tokens encode(std::string_view text) const;
  /// Ids to text; special tokens render as <bos>, <eos>, <pad>.
  std::string decode(const Tokens& tokens) const;
  /// Like decode but drops special tokens.
  std::string decode_plain(const Tokens& tokens) const;

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<char, TokenId> ids_;
};

}  // namespace pkd::corpus
