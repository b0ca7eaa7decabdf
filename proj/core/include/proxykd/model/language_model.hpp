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
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "proxykd/autodiff/adam.hpp"
#include "proxykd/autodiff/tensor.hpp"

namespace pkd::model {

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;

enum class Role : std::uint32_t { kStudent = 0, kProxy = 1, kTeacher = 2 };

std::string_view role_name(Role role);
Role parse_role(std::string_view name);

struct ModelConfig {
  int vocab_size = 32;
  int max_seq_len = 16;
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;

  /// Throws ValidationError naming the first violated constraint.
  void validate() const;

  // Desk-scale capacity ladder: student < proxy < teacher.
  static ModelConfig student_default(int vocab_size, int max_seq_len);
  static ModelConfig proxy_default(int vocab_size, int max_seq_len);
  static ModelConfig teacher_default(int vocab_size, int max_seq_len);

  bool operator==(const ModelConfig&) const = default;
};

/// Right-padded (batch, length) token matrix.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<TokenId> ids;

  TokenId at(std::size_t b, std::size_t t) const { return ids[b * length + t]; }
  /// Pads each sequence with kPad to the longest one.
  static TokenBatch from_sequences(const std::vector<Tokens>& sequences);
};

/// Pre-norm decoder-only transformer with learned positional embeddings.
template <std::floating_point T>
class LanguageModel {
 public:
  /// output_gain scales the initial output head; small values start the
  /// model near the uniform distribution.
  LanguageModel(ModelConfig config, Role role, std::uint64_t init_seed, double output_gain = 0.02);

  const ModelConfig& config() const { return config_; }
  Role role() const { return role_; }
  void set_role(Role role) { role_ = role; }

  std::vector<ad::NamedParameter<T>>& parameters() { return params_; }
  const std::vector<ad::NamedParameter<T>>& parameters() const { return params_; }
  ad::Tensor<T>& parameter(std::string_view name);
  const ad::Tensor<T>& parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  /// Logits of shape (batch, length, vocab_size). Position t only sees
  /// tokens at positions <= t.
  ad::Tensor<T> forward(const TokenBatch& tokens) const;

  /// Independent deep copy (fresh storage, no gradients).
  LanguageModel clone() const;

  /// SHA-256 over parameter names, shapes and raw values.
  std::string parameter_hash() const;

  void set_requires_grad(bool on);
  void zero_grad();

 private:
  struct LayerIndex {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_attn_out, b_attn_out;
    std::size_t ln2_g, ln2_b, w_mlp_in, b_mlp_in, w_mlp_out, b_mlp_out;
  };

  std::size_t add_parameter(std::string name, ad::Tensor<T> tensor);
  const ad::Tensor<T>& at(std::size_t index) const { return params_[index].tensor; }

  ModelConfig config_;
  Role role_;
  std::vector<ad::NamedParameter<T>> params_;
  std::size_t wte_ = 0, wpe_ = 0, lnf_g_ = 0, lnf_b_ = 0, head_w_ = 0, head_b_ = 0;
  std::vector<LayerIndex> layers_;
};

extern template class LanguageModel<float>;
extern template class LanguageModel<double>;

}  // namespace pkd::model
