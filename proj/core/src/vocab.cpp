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

#include "proxykd/corpus/vocab.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "proxykd/error.hpp"

namespace pkd::corpus {

Vocab Vocab::standard() {
  std::unordered_map<std::string, TokenId> map{{"<pad>", model::kPad}, {"<bos>", model::kBos}, {"<eos>", model::kEos}};
  TokenId next = 3;
  for (char c = '0'; c <= '9'; ++c) map[std::string(1, c)] = next++;
  for (char c : std::string("+=|")) map[std::string(1, c)] = next++;
  for (char c = 'a'; c <= 'p'; ++c) map[std::string(1, c)] = next++;
  return from_map(map);
}

Vocab Vocab::from_map(const std::unordered_map<std::string, TokenId>& map) {
  Vocab v;
  v.symbols_.assign(map.size(), std::string());
  for (const auto& [sym, id] : map) {
    if (id < 0 || static_cast<std::size_t>(id) >= map.size()) {
      throw ValidationError("vocab: id " + std::to_string(id) + " for '" + sym + "' is not dense in [0," +
                            std::to_string(map.size()) + ")");
    }
    if (!v.symbols_[static_cast<std::size_t>(id)].empty()) {
      throw ValidationError("vocab: id " + std::to_string(id) + " assigned twice");
    }
    v.symbols_[static_cast<std::size_t>(id)] = sym;
  }
  const char* specials[] = {"<pad>", "<bos>", "<eos>"};
  for (TokenId i = 0; i < 3; ++i) {
    if (static_cast<std::size_t>(i) >= v.symbols_.size() || v.symbols_[static_cast<std::size_t>(i)] != specials[i]) {
      throw ValidationError(std::string("vocab: id ") + std::to_string(i) + " must be " + specials[i]);
    }
  }
  for (std::size_t i = 3; i < v.symbols_.size(); ++i) {
    if (v.symbols_[i].size() != 1) {
      throw ValidationError("vocab: symbol '" + v.symbols_[i] + "' must be a single character");
    }
    v.ids_[v.symbols_[i][0]] = static_cast<TokenId>(i);
  }
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("vocab: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("vocab: " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("vocab: " + path.string() + " must hold a JSON object");
  std::unordered_map<std::string, TokenId> map;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number_integer()) throw ValidationError("vocab: id for '" + k + "' is not an integer");
    map[k] = v.get<TokenId>();
  }
  return from_map(map);
}

void Vocab::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < symbols_.size(); ++i) j[symbols_[i]] = i;
  std::ofstream out(path);
  if (!out) throw Error("vocab: cannot write " + path.string());
  out << j.dump(2) << '\n';
}

TokenId Vocab::id(char symbol) const {
  auto it = ids_.find(symbol);
  if (it == ids_.end()) throw ValidationError(std::string("vocab: unknown symbol '") + symbol + "'");
  return it->second;
}

bool Vocab::contains(char symbol) const { return ids_.count(symbol) != 0; }

const std::string& Vocab::symbol(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw ValidationError("vocab: id " + std::to_string(id) + " out of range");
  }
  return symbols_[static_cast<std::size_t>(id)];
}

Tokens Vocab::encode(std::string_view text) const {
  Tokens out;
  out.reserve(text.size());
  for (char c : text) out.push_back(id(c));
  return out;
}

std::string Vocab::decode(const Tokens& tokens) const {
  std::string out;
  for (TokenId t : tokens) out += symbol(t);
  return out;
}

std::string Vocab::decode_plain(const Tokens& tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    if (t > model::kEos) out += symbol(t);
  }
  return out;
}

}  // namespace pkd::corpus
