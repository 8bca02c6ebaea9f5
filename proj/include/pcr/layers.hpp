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

#include <functional>
#include <random>
#include <string>

#include "pcr/ops.hpp"

namespace pcr {

/// Receives every learnable tensor and batch-norm running state of a module
/// tree, in a fixed traversal order.
struct ParamVisitor {
  std::function<void(const std::string&, Var&)> param;
  std::function<void(const std::string&, BnState&)> buffer;
};

struct ConvLayer {
  ConvSpec spec;
  bool transposed = false;
  Var weight;
  Var bias;

  /// Weights ~ N(0, init_std^2), zero bias.
  static ConvLayer make(const ConvSpec& spec, bool transposed, std::mt19937_64& rng, double init_std) {
    spec.validate();
    ConvLayer l;
    l.spec = spec;
    l.transposed = transposed;
    l.weight = Var::parameter(
        Tensor::randn(transposed ? spec.deconv_weight_shape() : spec.weight_shape(), rng, init_std));
    l.bias = Var::parameter(Tensor::zeros({1, spec.out_channels, 1, 1}));
    return l;
  }

  Var operator()(const Var& x) const {
    return transposed ? deconv2d(x, weight, bias, spec) : conv2d(x, weight, bias, spec);
  }

  void visit(const ParamVisitor& v, const std::string& prefix) {
    v.param(prefix + ".weight", weight);
    v.param(prefix + ".bias", bias);
  }
};

struct BatchNormLayer {
  Var gamma;
  Var beta;
  BnState state;

  static BatchNormLayer make(std::size_t channels) {
    BatchNormLayer l;
    l.gamma = Var::parameter(Tensor::ones({1, channels, 1, 1}));
    l.beta = Var::parameter(Tensor::zeros({1, channels, 1, 1}));
    l.state = BnState(channels);
    return l;
  }

  Var operator()(const Var& x, Mode mode) { return batch_norm(x, gamma, beta, state, mode); }

  void visit(const ParamVisitor& v, const std::string& prefix) {
    v.param(prefix + ".gamma", gamma);
    v.param(prefix + ".beta", beta);
    v.buffer(prefix, state);
  }
};

}  // namespace pcr
