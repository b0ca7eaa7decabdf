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

#include <stdexcept>
#include <string>

namespace pkd {

/// Base class for all failures raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input, schema, or configuration violates a documented contract.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes do not conform for a primitive.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A non-finite value reached a primitive in 64-bit (checked) mode.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace pkd
