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

// Checkpoint files, little-endian throughout:
//
//   "PKD1"                 magic, 4 bytes
//   u32 version            currently 1
//   u32 scalar_bytes       4 (float32) or 8 (float64)
//   u32 x 7                vocab_size, max_seq_len, n_layers, n_heads,
//                          d_model, d_ff, role
//   u32 n_params
//   n_params records:      u32 name_len, name bytes, u32 rank,
//                          u32 dims[rank], raw values (scalar_bytes each)
//
// Loading at the precision the file was written with reproduces every value
// bit for bit; loading at the other precision converts.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "proxykd/model/language_model.hpp"

namespace pkd::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <std::floating_point T>
std::vector<std::uint8_t> serialize_checkpoint(const LanguageModel<T>& model);

template <std::floating_point T>
LanguageModel<T> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

template <std::floating_point T>
void save_checkpoint(const LanguageModel<T>& model, const std::filesystem::path& path);

template <std::floating_point T>
LanguageModel<T> load_checkpoint(const std::filesystem::path& path);

/// SHA-256 of the serialized checkpoint bytes.
template <std::floating_point T>
std::string checkpoint_hash(const LanguageModel<T>& model);

}  // namespace pkd::model
