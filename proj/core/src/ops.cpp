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

#include "proxykd/autodiff/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <type_traits>
#include <utility>

#include "proxykd/error.hpp"

namespace pkd::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <std::floating_point T>
void check_finite(const char* op, std::initializer_list<const Tensor<T>*> inputs) {
  if constexpr (std::is_same_v<T, double>) {
    for (const Tensor<T>* t : inputs) {
      for (T v : t->values()) {
        if (!std::isfinite(v)) {
          throw NonFiniteError(std::string(op) + ": non-finite input value in tensor of shape " +
                               shape_str(t->shape()));
        }
      }
    }
  }
}

// Gradient buffer of t when it participates in differentiation, else null.
template <std::floating_point T>
T* grad_ptr(const Tensor<T>& t) {
  if (!t.requires_grad()) return nullptr;
  auto& g = t.storage()->grad;
  if (g.empty()) g.assign(t.size(), T(0));
  return g.data();
}

template <std::floating_point T, typename Fn>
Tensor<T> finish(const char* op, Tensor<T> out, std::vector<Tensor<T>> inputs, Fn&& fn) {
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->inputs = std::move(inputs);
  node->backward = std::forward<Fn>(fn);
  out.attach(std::move(node));
  return out;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

std::size_t last_dim(const char* op, const Shape& s) {
  if (s.empty()) throw ShapeError(std::string(op) + ": needs rank >= 1, got scalar");
  return s.back();
}

// Returns (big, small) ordering for suffix broadcasting, or throws.
template <std::floating_point T>
std::pair<const Tensor<T>*, const Tensor<T>*> broadcast_pair(const char* op, const Tensor<T>& a,
                                                             const Tensor<T>& b) {
  if (is_suffix(b.shape(), a.shape())) return {&a, &b};
  if (is_suffix(a.shape(), b.shape())) return {&b, &a};
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()) + " are not broadcastable");
}

// C(M,N) = A(M,K) B(K,N). Each C element is a sequential fused multiply-add
// over k starting from zero, independent of M and of the blocking.
template <std::floating_point T, std::size_t R, std::size_t W>
void gemm_tile(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t k, std::size_t n) {
  T acc[R][W] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const T* __restrict brow = b + p * n;
    for (std::size_t r = 0; r < R; ++r) {
      const T x = a[r * k + p];
      for (std::size_t j = 0; j < W; ++j) acc[r][j] = std::fma(x, brow[j], acc[r][j]);
    }
  }
  for (std::size_t r = 0; r < R; ++r) std::copy(acc[r], acc[r] + W, c + r * n);
}

// Columns [j0, n) of rows [0, rows), one row at a time.
template <std::floating_point T>
void gemm_tail(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t rows, std::size_t k,
               std::size_t n, std::size_t j0) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* __restrict cr = c + r * n;
    std::fill(cr + j0, cr + n, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T x = a[r * k + p];
      const T* __restrict brow = b + p * n;
      for (std::size_t j = j0; j < n; ++j) cr[j] = std::fma(x, brow[j], cr[j]);
    }
  }
}

template <std::floating_point T>
void gemm_rows(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k,
               std::size_t n) {
  constexpr std::size_t W = 128 / sizeof(T);
  const std::size_t full = n - n % W;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    for (std::size_t j = 0; j < full; j += W) gemm_tile<T, 4, W>(a + i * k, b + j, c + i * n + j, k, n);
    gemm_tail(a + i * k, b, c + i * n, 4, k, n, full);
  }
  for (; i < m; ++i) {
    for (std::size_t j = 0; j < full; j += W) gemm_tile<T, 1, W>(a + i * k, b + j, c + i * n + j, k, n);
    gemm_tail(a + i * k, b, c + i * n, 1, k, n, full);
  }
}

// Visits (i, i % nb) for i in [0, total) without a division per element;
// total is a multiple of nb.
template <typename F>
void broadcast_loop(std::size_t total, std::size_t nb, F&& f) {
  for (std::size_t base = 0; base < total; base += nb) {
    for (std::size_t j = 0; j < nb; ++j) f(base + j, j);
  }
}

template <std::floating_point T, typename F, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& x, F&& f, D&& dfdx_from_xy) {
  check_finite<T>(op, {&x});
  std::vector<T> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  Tensor<T> y(x.shape(), std::move(out));
  TensorStorage<T>* self = y.storage();
  return finish<T>(op, y, {x}, [x, self, d = std::forward<D>(dfdx_from_xy)](std::span<const T> g) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    auto xv = x.values();
    const auto& yv = self->values;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(xv[i], yv[i]);
  });
}

}  // namespace

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_finite<T>("add", {&a, &b});
  auto [big, small] = broadcast_pair("add", a, b);
  const std::size_t nb = small->size();
  std::vector<T> out(big->values().begin(), big->values().end());
  auto sv = small->values();
  broadcast_loop(out.size(), nb, [&](std::size_t i, std::size_t j) { out[i] += sv[j]; });
  Tensor<T> big_t = *big, small_t = *small;
  return finish<T>("add", Tensor<T>(big->shape(), std::move(out)), {a, b},
                   [big_t, small_t, nb](std::span<const T> g) {
                     if (T* gb = grad_ptr(big_t)) {
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                     }
                     if (T* gs = grad_ptr(small_t)) {
                       broadcast_loop(g.size(), nb, [&](std::size_t i, std::size_t j) { gs[j] += g[i]; });
                     }
                   });
}

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_finite<T>("sub", {&a, &b});
  auto [big, small] = broadcast_pair("sub", a, b);
  const bool a_is_big = big == &a;
  const std::size_t nb = small->size();
  std::vector<T> out(big->size());
  auto bv = big->values();
  auto sv = small->values();
  if (a_is_big) {
    broadcast_loop(out.size(), nb, [&](std::size_t i, std::size_t j) { out[i] = bv[i] - sv[j]; });
  } else {
    broadcast_loop(out.size(), nb, [&](std::size_t i, std::size_t j) { out[i] = sv[j] - bv[i]; });
  }
  return finish<T>("sub", Tensor<T>(big->shape(), std::move(out)), {a, b},
                   [a, b, nb, a_is_big](std::span<const T> g) {
                     const Tensor<T>& big_t = a_is_big ? a : b;
                     const Tensor<T>& small_t = a_is_big ? b : a;
                     const T big_sign = a_is_big ? T(1) : T(-1);
                     if (T* gb = grad_ptr(big_t)) {
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += big_sign * g[i];
                     }
                     if (T* gs = grad_ptr(small_t)) {
                       broadcast_loop(g.size(), nb, [&](std::size_t i, std::size_t j) { gs[j] -= big_sign * g[i]; });
                     }
                   });
}

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_finite<T>("mul", {&a, &b});
  auto [big, small] = broadcast_pair("mul", a, b);
  const std::size_t nb = small->size();
  std::vector<T> out(big->size());
  auto bv = big->values();
  auto sv = small->values();
  broadcast_loop(out.size(), nb, [&](std::size_t i, std::size_t j) { out[i] = bv[i] * sv[j]; });
  Tensor<T> big_t = *big, small_t = *small;
  return finish<T>("mul", Tensor<T>(big->shape(), std::move(out)), {a, b},
                   [big_t, small_t, nb](std::span<const T> g) {
                     auto bv = big_t.values();
                     auto sv = small_t.values();
                     if (T* gb = grad_ptr(big_t)) {
                       broadcast_loop(g.size(), nb, [&](std::size_t i, std::size_t j) { gb[i] += g[i] * sv[j]; });
                     }
                     if (T* gs = grad_ptr(small_t)) {
                       broadcast_loop(g.size(), nb, [&](std::size_t i, std::size_t j) { gs[j] += g[i] * bv[i]; });
                     }
                   });
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  check_finite<T>("scale", {&a});
  std::vector<T> out(a.values().begin(), a.values().end());
  for (T& v : out) v *= factor;
  return finish<T>("scale", Tensor<T>(a.shape(), std::move(out)), {a},
                   [a, factor](std::span<const T> g) {
                     if (T* ga = grad_ptr(a)) {
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
                     }
                   });
}

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_finite<T>("matmul", {&a, &b});
  if (b.rank() != 2 || a.rank() < 1 || a.shape().back() != b.shape()[0]) {
    throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                     shape_str(b.shape()));
  }
  const std::size_t k = b.shape()[0];
  const std::size_t n = b.shape()[1];
  const std::size_t m = a.size() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<T> out(m * n);
  gemm_rows(a.values().data(), b.values().data(), out.data(), m, k, n);
  return finish<T>("matmul", Tensor<T>(std::move(out_shape), std::move(out)), {a, b},
                   [a, b, m, k, n](std::span<const T> g) {
                     Eigen::Map<const RowMat<T>> G(g.data(), static_cast<Eigen::Index>(m),
                                                   static_cast<Eigen::Index>(n));
                     if (T* ga = grad_ptr(a)) {
                       Eigen::Map<const RowMat<T>> B(b.values().data(), static_cast<Eigen::Index>(k),
                                                     static_cast<Eigen::Index>(n));
                       Eigen::Map<RowMat<T>> GA(ga, static_cast<Eigen::Index>(m),
                                                static_cast<Eigen::Index>(k));
                       GA.noalias() += G * B.transpose();
                     }
                     if (T* gb = grad_ptr(b)) {
                       Eigen::Map<const RowMat<T>> A(a.values().data(), static_cast<Eigen::Index>(m),
                                                     static_cast<Eigen::Index>(k));
                       Eigen::Map<RowMat<T>> GB(gb, static_cast<Eigen::Index>(k),
                                                static_cast<Eigen::Index>(n));
                       GB.noalias() += A.transpose() * G;
                     }
                   });
}

template <std::floating_point T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids, const Shape& ids_shape) {
  check_finite<T>("embedding", {&table});
  if (table.rank() != 2) {
    throw ShapeError("embedding: table must be rank 2, got " + shape_str(table.shape()));
  }
  if (numel(ids_shape) != ids.size()) {
    throw ShapeError("embedding: ids shape " + shape_str(ids_shape) + " does not match " +
                     std::to_string(ids.size()) + " ids");
  }
  const std::size_t vocab = table.shape()[0];
  const std::size_t dim = table.shape()[1];
  std::vector<T> out(ids.size() * dim);
  auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ValidationError("embedding: id " + std::to_string(ids[i]) + " at position " +
                            std::to_string(i) + " outside vocabulary of size " +
                            std::to_string(vocab));
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i] * dim), dim, out.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(dim);
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return finish<T>("embedding", Tensor<T>(std::move(out_shape), std::move(out)), {table},
                   [table, saved = std::move(saved), dim](std::span<const T> g) {
                     T* gt = grad_ptr(table);
                     if (!gt) return;
                     for (std::size_t i = 0; i < saved.size(); ++i) {
                       T* row = gt + static_cast<std::size_t>(saved[i]) * dim;
                       const T* gi = g.data() + i * dim;
                       for (std::size_t d = 0; d < dim; ++d) row[d] += gi[d];
                     }
                   });
}

template <std::floating_point T>
Tensor<T> take_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  check_finite<T>("take_rows", {&x});
  if (x.rank() < 2) throw ShapeError("take_rows: needs rank >= 2, got " + shape_str(x.shape()));
  if (rows.empty()) throw ShapeError("take_rows: empty row selection");
  const std::size_t cols = x.shape().back();
  const std::size_t n_rows = x.size() / cols;
  std::vector<T> out(rows.size() * cols);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n_rows) {
      throw ShapeError("take_rows: row " + std::to_string(rows[r]) + " out of range for " +
                       shape_str(x.shape()));
    }
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(rows[r] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return finish<T>("take_rows", Tensor<T>({rows.size(), cols}, std::move(out)), {x},
                   [x, saved = std::move(saved), cols](std::span<const T> g) {
                     T* gx = grad_ptr(x);
                     if (!gx) return;
                     for (std::size_t r = 0; r < saved.size(); ++r) {
                       T* dst = gx + saved[r] * cols;
                       const T* src = g.data() + r * cols;
                       for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                     }
                   });
}

template <std::floating_point T>
Tensor<T> gather(const Tensor<T>& x, std::span<const std::size_t> flat_indices) {
  check_finite<T>("gather", {&x});
  if (flat_indices.empty()) throw ShapeError("gather: empty index list");
  std::vector<T> out(flat_indices.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    if (flat_indices[i] >= x.size()) {
      throw ShapeError("gather: index " + std::to_string(flat_indices[i]) + " out of range for " +
                       shape_str(x.shape()));
    }
    out[i] = xv[flat_indices[i]];
  }
  std::vector<std::size_t> saved(flat_indices.begin(), flat_indices.end());
  return finish<T>("gather", Tensor<T>({flat_indices.size()}, std::move(out)), {x},
                   [x, saved = std::move(saved)](std::span<const T> g) {
                     T* gx = grad_ptr(x);
                     if (!gx) return;
                     for (std::size_t i = 0; i < saved.size(); ++i) gx[saved[i]] += g[i];
                   });
}

template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& x) {
  check_finite<T>("softmax", {&x});
  const std::size_t n = last_dim("softmax", x.shape());
  const std::size_t rows = x.size() / n;
  std::vector<T> out(x.size());
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xi = xv.data() + r * n;
    T* yi = out.data() + r * n;
    const T mx = *std::max_element(xi, xi + n);
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      s += yi[j];
    }
    for (std::size_t j = 0; j < n; ++j) yi[j] /= s;
  }
  Tensor<T> y(x.shape(), std::move(out));
  TensorStorage<T>* self = y.storage();
  return finish<T>("softmax", y, {x}, [x, self, n, rows](std::span<const T> g) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    const T* yv = self->values.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yi = yv + r * n;
      const T* gi = g.data() + r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += gi[j] * yi[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += yi[j] * (gi[j] - dot);
    }
  });
}

template <std::floating_point T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  check_finite<T>("log_softmax", {&x});
  const std::size_t n = last_dim("log_softmax", x.shape());
  const std::size_t rows = x.size() / n;
  std::vector<T> out(x.size());
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xi = xv.data() + r * n;
    T* yi = out.data() + r * n;
    const T mx = *std::max_element(xi, xi + n);
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(xi[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) yi[j] = xi[j] - lse;
  }
  Tensor<T> y(x.shape(), std::move(out));
  TensorStorage<T>* self = y.storage();
  return finish<T>("log_softmax", y, {x}, [x, self, n, rows](std::span<const T> g) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    const T* yv = self->values.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gi = g.data() + r * n;
      T gsum = 0;
      for (std::size_t j = 0; j < n; ++j) gsum += gi[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += gi[j] - std::exp(yv[r * n + j]) * gsum;
    }
  });
}

template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  check_finite<T>("layer_norm", {&x, &gain, &bias});
  const std::size_t n = last_dim("layer_norm", x.shape());
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                     shape_str(bias.shape()) + " must be (" + std::to_string(n) + ") for input " +
                     shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / n;
  std::vector<T> out(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> rstd(rows);
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xi = xv.data() + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += xi[j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<T>(n);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (xi[j] - mu) * rstd[r];
      out[r * n + j] = xhat[r * n + j] * gv[j] + bv[j];
    }
  }
  return finish<T>(
      "layer_norm", Tensor<T>(x.shape(), std::move(out)), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd), n, rows](std::span<const T> g) {
        T* gx = grad_ptr(x);
        T* gg = grad_ptr(gain);
        T* gb = grad_ptr(bias);
        auto gv = gain.values();
        std::vector<T> dxhat(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gi = g.data() + r * n;
          const T* hi = xhat.data() + r * n;
          if (gb) {
            for (std::size_t j = 0; j < n; ++j) gb[j] += gi[j];
          }
          if (gg) {
            for (std::size_t j = 0; j < n; ++j) gg[j] += gi[j] * hi[j];
          }
          if (!gx) continue;
          T mean_d = 0, mean_dh = 0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = gi[j] * gv[j];
            mean_d += dxhat[j];
            mean_dh += dxhat[j] * hi[j];
          }
          mean_d /= static_cast<T>(n);
          mean_dh /= static_cast<T>(n);
          for (std::size_t j = 0; j < n; ++j) {
            gx[r * n + j] += rstd[r] * (dxhat[j] - mean_d - hi[j] * mean_dh);
          }
        }
      });
}

template <std::floating_point T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = static_cast<T>(0.044715);
  return unary<T>(
      "gelu", x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v))); },
      [](T v, T) {
        const T t = std::tanh(c * (v + a * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
      });
}

template <std::floating_point T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) { return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <std::floating_point T>
Tensor<T> log_sigmoid(const Tensor<T>& x) {
  return unary<T>(
      "log_sigmoid", x, [](T v) { return std::min(v, T(0)) - std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) {
        // d/dv log sigma(v) = sigma(-v)
        return v >= 0 ? std::exp(-v) / (T(1) + std::exp(-v)) : T(1) / (T(1) + std::exp(v));
      });
}

template <std::floating_point T>
Tensor<T> log(const Tensor<T>& x) {
  return unary<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <std::floating_point T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& x) {
  check_finite<T>("sum", {&x});
  T s = 0;
  for (T v : x.values()) s += v;
  return finish<T>("sum", Tensor<T>::scalar(s), {x}, [x](std::span<const T> g) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[0];
  });
}

template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& x) {
  check_finite<T>("mean", {&x});
  T s = 0;
  for (T v : x.values()) s += v;
  const T n = static_cast<T>(x.size());
  const T inv = T(1) / n;
  return finish<T>("mean", Tensor<T>::scalar(s / n), {x}, [x, inv](std::span<const T> g) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[0] * inv;
  });
}

template <std::floating_point T>
Tensor<T> sum_last(const Tensor<T>& x) {
  check_finite<T>("sum_last", {&x});
  const std::size_t n = last_dim("sum_last", x.shape());
  const std::size_t rows = x.size() / n;
  std::vector<T> out(rows, T(0));
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r] += xv[r * n + j];
  }
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  return finish<T>("sum_last", Tensor<T>(std::move(out_shape), std::move(out)), {x},
                   [x, n, rows](std::span<const T> g) {
                     T* gx = grad_ptr(x);
                     if (!gx) return;
                     for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[r];
                     }
                   });
}

template <std::floating_point T>
Tensor<T> segment_sum(const Tensor<T>& x, std::span<const std::size_t> segments, std::size_t n_segments) {
  check_finite<T>("segment_sum", {&x});
  if (x.rank() != 1 || segments.size() != x.size()) {
    throw ShapeError("segment_sum: input " + shape_str(x.shape()) + " needs rank 1 with " +
                     std::to_string(segments.size()) + " segment ids");
  }
  if (n_segments == 0) throw ShapeError("segment_sum: zero segments");
  std::vector<T> out(n_segments, T(0));
  auto xv = x.values();
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i] >= n_segments) {
      throw ShapeError("segment_sum: segment id " + std::to_string(segments[i]) + " >= " +
                       std::to_string(n_segments));
    }
    out[segments[i]] += xv[i];
  }
  std::vector<std::size_t> saved(segments.begin(), segments.end());
  return finish<T>("segment_sum", Tensor<T>({n_segments}, std::move(out)), {x},
                   [x, saved = std::move(saved)](std::span<const T> g) {
                     T* gx = grad_ptr(x);
                     if (!gx) return;
                     for (std::size_t i = 0; i < saved.size(); ++i) gx[i] += g[saved[i]];
                   });
}

template <std::floating_point T>
Tensor<T> causal_attention(const Tensor<T>& qkv, std::size_t n_heads) {
  check_finite<T>("causal_attention", {&qkv});
  if (qkv.rank() != 3 || qkv.shape()[2] % 3 != 0 || n_heads == 0 ||
      (qkv.shape()[2] / 3) % n_heads != 0) {
    throw ShapeError("causal_attention: qkv shape " + shape_str(qkv.shape()) +
                     " incompatible with " + std::to_string(n_heads) + " heads");
  }
  const std::size_t batch = qkv.shape()[0];
  const std::size_t len = qkv.shape()[1];
  const std::size_t width = qkv.shape()[2];
  const std::size_t dim = width / 3;
  const std::size_t hd = dim / n_heads;
  const T scl = T(1) / std::sqrt(static_cast<T>(hd));
  auto in = qkv.values();
  std::vector<T> out(batch * len * dim, T(0));
  // probs[b][h][i][j], j <= i.
  std::vector<T> probs(batch * n_heads * len * len, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      T* P = probs.data() + (b * n_heads + h) * len * len;
      for (std::size_t i = 0; i < len; ++i) {
        const T* q = in.data() + (b * len + i) * width + h * hd;
        T* pi = P + i * len;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const T* k = in.data() + (b * len + j) * width + dim + h * hd;
          T s = 0;
          for (std::size_t d = 0; d < hd; ++d) s += q[d] * k[d];
          pi[j] = s * scl;
          mx = std::max(mx, pi[j]);
        }
        T z = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          pi[j] = std::exp(pi[j] - mx);
          z += pi[j];
        }
        T* o = out.data() + (b * len + i) * dim + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          pi[j] /= z;
          const T* v = in.data() + (b * len + j) * width + 2 * dim + h * hd;
          for (std::size_t d = 0; d < hd; ++d) o[d] += pi[j] * v[d];
        }
      }
    }
  }
  return finish<T>(
      "causal_attention", Tensor<T>({batch, len, dim}, std::move(out)), {qkv},
      [qkv, probs = std::move(probs), batch, len, width, dim, hd, n_heads, scl](std::span<const T> g) {
        T* gin = grad_ptr(qkv);
        if (!gin) return;
        auto in = qkv.values();
        std::vector<T> dp(len);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const T* P = probs.data() + (b * n_heads + h) * len * len;
            for (std::size_t i = 0; i < len; ++i) {
              const T* pi = P + i * len;
              const T* go = g.data() + (b * len + i) * dim + h * hd;
              T dot = 0;
              for (std::size_t j = 0; j <= i; ++j) {
                const T* v = in.data() + (b * len + j) * width + 2 * dim + h * hd;
                T* gv = gin + (b * len + j) * width + 2 * dim + h * hd;
                T s = 0;
                for (std::size_t d = 0; d < hd; ++d) {
                  s += go[d] * v[d];
                  gv[d] += pi[j] * go[d];
                }
                dp[j] = s;
                dot += pi[j] * s;
              }
              const T* q = in.data() + (b * len + i) * width + h * hd;
              T* gq = gin + (b * len + i) * width + h * hd;
              for (std::size_t j = 0; j <= i; ++j) {
                const T ds = pi[j] * (dp[j] - dot) * scl;
                const T* k = in.data() + (b * len + j) * width + dim + h * hd;
                T* gk = gin + (b * len + j) * width + dim + h * hd;
                for (std::size_t d = 0; d < hd; ++d) {
                  gq[d] += ds * k[d];
                  gk[d] += ds * q[d];
                }
              }
            }
          }
        }
      });
}

template <std::floating_point T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(x.values().begin(), x.values().end());
  return finish<T>("reshape", Tensor<T>(std::move(shape), std::move(out)), {x},
                   [x](std::span<const T> g) {
                     T* gx = grad_ptr(x);
                     if (!gx) return;
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                   });
}

template <std::floating_point T>
Tensor<T> detach(const Tensor<T>& x) {
  return x.clone();
}

#define PKD_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>, const Shape&);   \
  template Tensor<T> take_rows(const Tensor<T>&, std::span<const std::size_t>);                  \
  template Tensor<T> gather(const Tensor<T>&, std::span<const std::size_t>);                     \
  template Tensor<T> softmax(const Tensor<T>&);                                                  \
  template Tensor<T> log_softmax(const Tensor<T>&);                                              \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> gelu(const Tensor<T>&);                                                     \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> log_sigmoid(const Tensor<T>&);                                              \
  template Tensor<T> log(const Tensor<T>&);                                                      \
  template Tensor<T> exp(const Tensor<T>&);                                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> sum_last(const Tensor<T>&);                                                 \
  template Tensor<T> segment_sum(const Tensor<T>&, std::span<const std::size_t>, std::size_t);   \
  template Tensor<T> causal_attention(const Tensor<T>&, std::size_t);                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> detach(const Tensor<T>&);

PKD_INSTANTIATE_OPS(float)
PKD_INSTANTIATE_OPS(double)

}  // namespace pkd::ad
