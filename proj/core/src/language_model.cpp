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

#include "proxykd/model/language_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "proxykd/autodiff/ops.hpp"
#include "proxykd/error.hpp"
#include "proxykd/util/hash.hpp"
#include "proxykd/util/rng.hpp"

namespace pkd::model {

std::string_view role_name(Role role) {
  switch (role) {
    case Role::kStudent: return "student";
    case Role::kProxy: return "proxy";
    case Role::kTeacher: return "teacher";
  }
  return "unknown";
}

Role parse_role(std::string_view name) {
  if (name == "student") return Role::kStudent;
  if (name == "proxy") return Role::kProxy;
  if (name == "teacher") return Role::kTeacher;
  throw ValidationError("unknown model role '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("model config: " + msg); };
  if (vocab_size <= 0) fail("vocab_size must be positive");
  if (vocab_size <= kEos) fail("vocab_size must exceed the special tokens");
  if (max_seq_len < 2) fail("max_seq_len must be >= 2");
  if (n_layers <= 0 || n_heads <= 0 || d_model <= 0 || d_ff <= 0) {
    fail("n_layers, n_heads, d_model, d_ff must be positive");
  }
  if (d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
         std::to_string(n_heads));
  }
}

ModelConfig ModelConfig::student_default(int vocab_size, int max_seq_len) {
  return {vocab_size, max_seq_len, 2, 4, 128, 512};
}

ModelConfig ModelConfig::proxy_default(int vocab_size, int max_seq_len) {
  return {vocab_size, max_seq_len, 4, 8, 256, 1024};
}

ModelConfig ModelConfig::teacher_default(int vocab_size, int max_seq_len) {
  return {vocab_size, max_seq_len, 6, 8, 384, 1536};
}

TokenBatch TokenBatch::from_sequences(const std::vector<Tokens>& sequences) {
  TokenBatch out;
  out.batch = sequences.size();
  for (const auto& s : sequences) out.length = std::max(out.length, s.size());
  out.ids.assign(out.batch * out.length, kPad);
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    std::copy(sequences[b].begin(), sequences[b].end(), out.ids.begin() + static_cast<std::ptrdiff_t>(b * out.length));
  }
  return out;
}

template <std::floating_point T>
LanguageModel<T>::LanguageModel(ModelConfig config, Role role, std::uint64_t init_seed,
                                double output_gain)
    : config_(config), role_(role) {
  config_.validate();
  util::Rng rng(init_seed);
  const auto V = static_cast<std::size_t>(config_.vocab_size);
  const auto D = static_cast<std::size_t>(config_.d_model);
  const auto F = static_cast<std::size_t>(config_.d_ff);
  const auto L = static_cast<std::size_t>(config_.max_seq_len);

  auto normal = [&](ad::Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> v(ad::numel(shape));
    for (T& x : v) x = static_cast<T>(dist(rng));
    return ad::Tensor<T>(std::move(shape), std::move(v), true);
  };
  auto filled = [](ad::Shape shape, T value) {
    const std::size_t n = ad::numel(shape);
    return ad::Tensor<T>(std::move(shape), std::vector<T>(n, value), true);
  };

  const double std_w = 0.02;
  const double std_resid = std_w / std::sqrt(2.0 * config_.n_layers);
  wte_ = add_parameter("wte", normal({V, D}, std_w));
  wpe_ = add_parameter("wpe", normal({L, D}, std_w));
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    LayerIndex li{};
    li.ln1_g = add_parameter(p + "ln1.g", filled({D}, T(1)));
    li.ln1_b = add_parameter(p + "ln1.b", filled({D}, T(0)));
    li.w_qkv = add_parameter(p + "attn.w_qkv", normal({D, 3 * D}, std_w));
    li.b_qkv = add_parameter(p + "attn.b_qkv", filled({3 * D}, T(0)));
    li.w_attn_out = add_parameter(p + "attn.w_out", normal({D, D}, std_resid));
    li.b_attn_out = add_parameter(p + "attn.b_out", filled({D}, T(0)));
    li.ln2_g = add_parameter(p + "ln2.g", filled({D}, T(1)));
    li.ln2_b = add_parameter(p + "ln2.b", filled({D}, T(0)));
    li.w_mlp_in = add_parameter(p + "mlp.w_in", normal({D, F}, std_w));
    li.b_mlp_in = add_parameter(p + "mlp.b_in", filled({F}, T(0)));
    li.w_mlp_out = add_parameter(p + "mlp.w_out", normal({F, D}, std_resid));
    li.b_mlp_out = add_parameter(p + "mlp.b_out", filled({D}, T(0)));
    layers_.push_back(li);
  }
  lnf_g_ = add_parameter("ln_f.g", filled({D}, T(1)));
  lnf_b_ = add_parameter("ln_f.b", filled({D}, T(0)));
  head_w_ = add_parameter("head.w", normal({D, V}, output_gain));
  head_b_ = add_parameter("head.b", filled({V}, T(0)));
}

template <std::floating_point T>
std::size_t LanguageModel<T>::add_parameter(std::string name, ad::Tensor<T> tensor) {
  params_.push_back({std::move(name), std::move(tensor)});
  return params_.size() - 1;
}

template <std::floating_point T>
ad::Tensor<T>& LanguageModel<T>::parameter(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw ValidationError("model has no parameter named '" + std::string(name) + "'");
}

template <std::floating_point T>
const ad::Tensor<T>& LanguageModel<T>::parameter(std::string_view name) const {
  return const_cast<LanguageModel*>(this)->parameter(name);
}

template <std::floating_point T>
std::size_t LanguageModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

template <std::floating_point T>
ad::Tensor<T> LanguageModel<T>::forward(const TokenBatch& tokens) const {
  if (tokens.batch == 0 || tokens.length == 0) throw ValidationError("forward: empty token batch");
  if (tokens.ids.size() != tokens.batch * tokens.length) {
    throw ValidationError("forward: token matrix size does not match (batch, length)");
  }
  if (tokens.length > static_cast<std::size_t>(config_.max_seq_len)) {
    throw ValidationError("forward: sequence length " + std::to_string(tokens.length) +
                          " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    const TokenId id = tokens.ids[i];
    if (id < 0 || id >= config_.vocab_size) {
      throw ValidationError("forward: token id " + std::to_string(id) + " at (" +
                            std::to_string(i / tokens.length) + "," +
                            std::to_string(i % tokens.length) + ") outside vocabulary of size " +
                            std::to_string(config_.vocab_size));
    }
  }
  using namespace pkd::ad;
  std::vector<std::size_t> positions(tokens.length);
  std::iota(positions.begin(), positions.end(), std::size_t{0});

  Tensor<T> x = embedding(at(wte_), tokens.ids, {tokens.batch, tokens.length});
  x = add(x, take_rows(at(wpe_), positions));
  const auto heads = static_cast<std::size_t>(config_.n_heads);
  for (const LayerIndex& li : layers_) {
    Tensor<T> a = layer_norm(x, at(li.ln1_g), at(li.ln1_b));
    Tensor<T> qkv = add(matmul(a, at(li.w_qkv)), at(li.b_qkv));
    Tensor<T> att = causal_attention(qkv, heads);
    x = add(x, add(matmul(att, at(li.w_attn_out)), at(li.b_attn_out)));
    Tensor<T> m = layer_norm(x, at(li.ln2_g), at(li.ln2_b));
    Tensor<T> h = gelu(add(matmul(m, at(li.w_mlp_in)), at(li.b_mlp_in)));
    x = add(x, add(matmul(h, at(li.w_mlp_out)), at(li.b_mlp_out)));
  }
  x = layer_norm(x, at(lnf_g_), at(lnf_b_));
  return add(matmul(x, at(head_w_)), at(head_b_));
}

template <std::floating_point T>
LanguageModel<T> LanguageModel<T>::clone() const {
  LanguageModel copy(*this);
  for (auto& p : copy.params_) {
    const bool rg = p.tensor.requires_grad();
    p.tensor = p.tensor.clone();
    p.tensor.set_requires_grad(rg);
  }
  return copy;
}

template <std::floating_point T>
std::string LanguageModel<T>::parameter_hash() const {
  util::Sha256 h;
  for (const auto& p : params_) {
    h.update(p.name);
    h.update(ad::shape_str(p.tensor.shape()));
    auto v = p.tensor.values();
    h.update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(v.data()),
                                           v.size() * sizeof(T)));
  }
  return h.hex_digest();
}

template <std::floating_point T>
void LanguageModel<T>::set_requires_grad(bool on) {
  for (auto& p : params_) {
    p.tensor.set_requires_grad(on);
    if (!on) p.tensor.clear_grad();
  }
}

template <std::floating_point T>
void LanguageModel<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template class LanguageModel<float>;
template class LanguageModel<double>;

}  // namespace pkd::model
