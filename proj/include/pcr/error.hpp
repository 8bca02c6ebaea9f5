// Copyright 2026 The pcrpose Authors
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

namespace pcr {

/// Tensor extents or parameter shapes that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration: bad hyperparameters, unknown keys, bad maps.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or missing input data (annotation files, images, checkpoints).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or diverged optimisation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// OKS requested against a ground truth that has no labeled joint.
class UndefinedOksError : public std::domain_error {
 public:
  UndefinedOksError() : std::domain_error("OKS undefined: ground truth has no labeled joints") {}
};

}  // namespace pcr
