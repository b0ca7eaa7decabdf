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

// Reference computations for the tests. Everything here is written from the
// textbook definitions in long double, with plain loops and no library code
// beyond parameter access, so disagreements point at the library.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "proxykd/model/language_model.hpp"

namespace oracle {

using Real = long double;
using Vec = std::vector<Real>;
using Mat = std::vector<Vec>;

inline Vec softmax(const Vec& z) {
  Real mx = z[0];
  for (auto v : z) mx = std::max(mx, v);
  Vec p(z.size());
  Real s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - mx));
  for (auto& v : p) v /= s;
  return p;
}

inline Vec log_softmax(const Vec& z) {
  Real mx = z[0];
  for (auto v : z) mx = std::max(mx, v);
  Real s = 0;
  for (auto v : z) s += std::exp(v - mx);
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - mx - std::log(s);
  return out;
}

/// KL(p || q) for probability vectors, skipping p_i = 0.
inline Real kl(const Vec& p, const Vec& q) {
  Real s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

inline Real sigmoid(Real z) { return 1 / (1 + std::exp(-z)); }

/// Indices of the k largest values; equal values keep the lower index first.
template <typename T>
std::vector<int> top_k(const std::vector<T>& v, int k) {
  std::vector<int> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = i + 1; j < idx.size(); ++j) {
      const bool swap = v[idx[j]] > v[idx[i]] || (v[idx[j]] == v[idx[i]] && idx[j] < idx[i]);
      if (swap) std::swap(idx[i], idx[j]);
    }
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

/// KL between the renormalised top-K of p (given as logits) and q restricted
/// to the same ids and renormalised.
template <typename T>
Real truncated_kl(const std::vector<T>& p_logits, const std::vector<T>& q_logits, int k) {
  auto ids = top_k(p_logits, k);
  Vec zp, zq;
  for (int i : ids) {
    zp.push_back(p_logits[static_cast<std::size_t>(i)]);
    zq.push_back(q_logits[static_cast<std::size_t>(i)]);
  }
  return kl(softmax(zp), softmax(zq));
}

/// Mean and population standard deviation.
inline std::pair<Real, Real> mean_std(const Vec& v) {
  Real mu = 0;
  for (auto x : v) mu += x;
  mu /= static_cast<Real>(v.size());
  Real var = 0;
  for (auto x : v) var += (x - mu) * (x - mu);
  return {mu, std::sqrt(var / static_cast<Real>(v.size()))};
}

// Dense helpers over row vectors.

inline Mat param(const pkd::model::LanguageModel<double>& m, const std::string& name) {
  const auto& t = m.parameter(name);
  const auto& shape = t.shape();
  const std::size_t rows = shape.size() == 1 ? 1 : shape[0];
  const std::size_t cols = shape.back();
  Mat out(rows, Vec(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r][c] = t.values()[r * cols + c];
  }
  return out;
}

inline Vec affine(const Vec& x, const Mat& w, const Mat& b) {
  Vec out(w[0].size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    Real s = b[0][j];
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w[i][j];
    out[j] = s;
  }
  return out;
}

inline Vec layer_norm(const Vec& x, const Mat& g, const Mat& b) {
  auto [mu, sd] = mean_std(x);
  const Real rstd = 1 / std::sqrt(sd * sd + 1e-5L);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mu) * rstd * g[0][i] + b[0][i];
  return out;
}

inline Real gelu(Real v) {
  const Real c = std::sqrt(2.0L / 3.14159265358979323846264338327950288L);
  return 0.5L * v * (1 + std::tanh(c * (v + 0.044715L * v * v * v)));
}

/// Logits (T, V) of one token sequence, computed position by position.
inline Mat forward(const pkd::model::LanguageModel<double>& m, const std::vector<int>& tokens) {
  const auto& cfg = m.config();
  const std::size_t D = static_cast<std::size_t>(cfg.d_model);
  const std::size_t H = static_cast<std::size_t>(cfg.n_heads);
  const std::size_t hd = D / H;
  const auto wte = param(m, "wte");
  const auto wpe = param(m, "wpe");
  Mat x;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    Vec row(D);
    for (std::size_t d = 0; d < D; ++d) row[d] = wte[static_cast<std::size_t>(tokens[t])][d] + wpe[t][d];
    x.push_back(row);
  }
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    const auto g1 = param(m, p + "ln1.g"), b1 = param(m, p + "ln1.b");
    const auto wqkv = param(m, p + "attn.w_qkv"), bqkv = param(m, p + "attn.b_qkv");
    const auto wo = param(m, p + "attn.w_out"), bo = param(m, p + "attn.b_out");
    const auto g2 = param(m, p + "ln2.g"), b2 = param(m, p + "ln2.b");
    const auto wi = param(m, p + "mlp.w_in"), bi = param(m, p + "mlp.b_in");
    const auto wm = param(m, p + "mlp.w_out"), bm = param(m, p + "mlp.b_out");
    Mat qkv;
    for (const auto& row : x) qkv.push_back(affine(layer_norm(row, g1, b1), wqkv, bqkv));
    Mat att(x.size(), Vec(D, 0));
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        Vec scores;
        for (std::size_t j = 0; j <= i; ++j) {
          Real s = 0;
          for (std::size_t d = 0; d < hd; ++d) s += qkv[i][h * hd + d] * qkv[j][D + h * hd + d];
          scores.push_back(s / std::sqrt(static_cast<Real>(hd)));
        }
        const auto w = softmax(scores);
        for (std::size_t j = 0; j <= i; ++j) {
          for (std::size_t d = 0; d < hd; ++d) att[i][h * hd + d] += w[j] * qkv[j][2 * D + h * hd + d];
        }
      }
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto o = affine(att[i], wo, bo);
      for (std::size_t d = 0; d < D; ++d) x[i][d] += o[d];
      auto hidden = affine(layer_norm(x[i], g2, b2), wi, bi);
      for (auto& v : hidden) v = gelu(v);
      const auto mo = affine(hidden, wm, bm);
      for (std::size_t d = 0; d < D; ++d) x[i][d] += mo[d];
    }
  }
  const auto gf = param(m, "ln_f.g"), bf = param(m, "ln_f.b");
  const auto hw = param(m, "head.w"), hb = param(m, "head.b");
  Mat logits;
  for (const auto& row : x) logits.push_back(affine(layer_norm(row, gf, bf), hw, hb));
  return logits;
}

/// log p(y | x) summed over response tokens.
inline Real sequence_log_prob(const pkd::model::LanguageModel<double>& m, const std::vector<int>& x,
                              const std::vector<int>& y) {
  std::vector<int> seq = x;
  seq.insert(seq.end(), y.begin(), y.end() - 1);
  const auto logits = forward(m, seq);
  Real s = 0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    s += log_softmax(logits[x.size() - 1 + t])[static_cast<std::size_t>(y[t])];
  }
  return s;
}

}  // namespace oracle
