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
#include <span>

#include "proxykd/autodiff/tensor.hpp"

namespace pkd::ad {

// Elementwise binary ops broadcast when one operand's shape is a trailing
// suffix of the other's (bias rows, per-feature gains, scalars).
template <std::floating_point T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> scale(const Tensor<T>& a, T factor);

/// (..., K) x (K, N) -> (..., N). Each output row is accumulated in a fixed
/// order, so a row's result does not depend on how many rows are batched.
template <std::floating_point T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Rows of table (V, D) selected by ids; output shape ids_shape + (D).
template <std::floating_point T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids, const Shape& ids_shape);

/// Views x as (rows, last_dim) and selects the given rows -> (n, last_dim).
template <std::floating_point T>
Tensor<T> take_rows(const Tensor<T>& x, std::span<const std::size_t> rows);

/// Elements at flat (row-major) offsets -> shape (n).
template <std::floating_point T>
Tensor<T> gather(const Tensor<T>& x, std::span<const std::size_t> flat_indices);

// Normalisations over the last axis. log_softmax subtracts the row max.
template <std::floating_point T> Tensor<T> softmax(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> log_softmax(const Tensor<T>& x);
template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));

template <std::floating_point T> Tensor<T> gelu(const Tensor<T>& x);  // tanh approximation
template <std::floating_point T> Tensor<T> sigmoid(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> log_sigmoid(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> log(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> exp(const Tensor<T>& x);

template <std::floating_point T> Tensor<T> sum(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> mean(const Tensor<T>& x);
/// Reduces the last axis: (..., n) -> (...). A rank-1 input yields a scalar.
template <std::floating_point T> Tensor<T> sum_last(const Tensor<T>& x);
/// out[s] = sum of x[i] with segments[i] == s; x must be rank 1.
template <std::floating_point T>
Tensor<T> segment_sum(const Tensor<T>& x, std::span<const std::size_t> segments, std::size_t n_segments);

/// Multi-head causal self-attention on packed projections.
/// qkv has shape (B, T, 3*D) laid out as [q | k | v]; returns (B, T, D).
/// Scores are scaled by 1/sqrt(D / n_heads) and position i attends to j <= i.
template <std::floating_point T>
Tensor<T> causal_attention(const Tensor<T>& qkv, std::size_t n_heads);

template <std::floating_point T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// Value copy that is cut from the graph.
template <std::floating_point T> Tensor<T> detach(const Tensor<T>& x);

}  // namespace pkd::ad
