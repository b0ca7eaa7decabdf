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

#include "proxykd/corpus/jsonl.hpp"

#include <fstream>
#include <string>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "proxykd/error.hpp"

namespace pkd::corpus {

namespace {

Tokens read_tokens(const nlohmann::json& j, const char* field, bool is_prompt, const Vocab& vocab) {
  const auto it = j.find(field);
  if (it == j.end()) throw ValidationError(std::string("missing field '") + field + "'");
  if (it->is_string()) {
    const auto text = it->get<std::string>();
    Tokens t;
    if (is_prompt) t.push_back(model::kBos);
    Tokens body = vocab.encode(text);
    t.insert(t.end(), body.begin(), body.end());
    if (!is_prompt && !body.empty()) t.push_back(model::kEos);
    return t;
  }
  if (it->is_array()) {
    Tokens t;
    for (const auto& v : *it) {
      if (!v.is_number_integer()) throw ValidationError(std::string("field '") + field + "' holds a non-integer");
      const auto id = v.get<long long>();
      if (id < 0 || id >= vocab.size()) {
        throw ValidationError(std::string("field '") + field + "' token " + std::to_string(id) +
                              " outside vocabulary");
      }
      t.push_back(static_cast<TokenId>(id));
    }
    return t;
  }
  throw ValidationError(std::string("field '") + field + "' must be a string or an array of token ids");
}

}  // namespace

Examples load_jsonl(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw ValidationError("load_jsonl: cannot open " + path.string());
  Examples out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ": ";
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object()) throw ValidationError("expected a JSON object");
      Example e;
      if (!j.contains("id") || !j["id"].is_string()) throw ValidationError("missing string field 'id'");
      e.id = j["id"].get<std::string>();
      if (!j.contains("task_tag") || !j["task_tag"].is_string()) {
        throw ValidationError("missing string field 'task_tag'");
      }
      e.task_tag = j["task_tag"].get<std::string>();
      e.x = read_tokens(j, "prompt", true, vocab);
      e.y = read_tokens(j, "response", false, vocab);
      if (!ids.insert(e.id).second) throw ValidationError("duplicate id '" + e.id + "'");
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw ValidationError("load_jsonl: " + where + "line " + std::to_string(line_no) + ": " + ex.what());
    } catch (const ValidationError& ex) {
      throw ValidationError("load_jsonl: " + where + "line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

void save_jsonl(const Examples& examples, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("save_jsonl: cannot write " + path.string());
  for (const Example& e : examples) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["prompt"] = e.x;
    j["response"] = e.y;
    j["task_tag"] = e.task_tag;
    out << j.dump() << '\n';
  }
}

}  // namespace pkd::corpus
