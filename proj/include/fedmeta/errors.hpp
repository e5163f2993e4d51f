// Copyright 2026 The fedmeta Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace fedmeta {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor operands do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A value became NaN/Inf, or an op was evaluated outside its domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data (IDX files, checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

class RetryExhausted : public Error {
 public:
  using Error::Error;
};

}  // namespace fedmeta
