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

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace pkd::util {

/// Mixes a base seed with a sequence of tags into a new 64-bit seed
/// (splitmix64 finalizer over the folded inputs).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

using Rng = std::mt19937_64;

}  // namespace pkd::util
