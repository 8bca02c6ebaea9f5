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

/// \file cam.hpp
/// \brief Context-aware module: channel gating (SE), hybrid dilated
/// convolutions (HDC) and a residual projection, fused as
///
///     out = ReLU(se(hdc(x)) * hdc(x) + res(x))
///
/// where `*` scales each channel of the HDC features by the SE gate.
///
/// HDC: four 3x3 convs at dilations 1..4 (C_out/4 channels each, BN + ReLU),
///      concatenated, then a 4x4 stride-2 deconv (stride 2) or a 3x3 conv
///      (stride 1), followed by BN.
/// SE:  global average pool of the HDC output, 1x1 conv to C_out/4, BN
///      (optional), ReLU, 1x1 conv to C_out, sigmoid.
/// RES: nearest 2x upsample (stride 2 only), 1x1 conv, BN.

#include <array>
#include <random>
#include <string>

#include "pcr/layers.hpp"

namespace pcr {

struct CamConfig {
  std::size_t index = 0;  // position within its decoder
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 2;  // 1 or 2
  bool se_bn = true;       // BN after the first SE conv
  bool se_enabled = true;  // false replaces the SE gate by ones

  void validate() const {
    if (in_channels == 0) throw ConfigError("CamConfig: in_channels must be positive");
    if (out_channels == 0 || out_channels % 4 != 0) {
      throw ConfigError("CamConfig: out_channels must be a positive multiple of 4, got " +
                        std::to_string(out_channels));
    }
    if (stride != 1 && stride != 2) throw ConfigError("CamConfig: stride must be 1 or 2");
  }

  std::size_t bottleneck() const { return out_channels / 4; }
};

inline constexpr std::array<std::size_t, 4> kHdcDilations{1, 2, 3, 4};

struct CamParams {
  struct Se {
    ConvLayer squeeze;
    BatchNormLayer squeeze_bn;
    ConvLayer excite;
  } se;
  struct Hdc {
    std::array<ConvLayer, 4> dilated;
    std::array<BatchNormLayer, 4> dilated_bn;
    ConvLayer fuse;  // deconv when stride 2
    BatchNormLayer fuse_bn;
  } hdc;
  struct Res {
    ConvLayer proj;
    BatchNormLayer bn;
  } res;
};

/// Intermediate tensors of one forward pass.
struct CamBranches {
  Var se;   // N x C_out x 1 x 1
  Var hdc;  // N x C_out x H_k x W_k
  Var res;  // N x C_out x H_k x W_k
  Var out;
};

class Cam {
 public:
  Cam(const CamConfig& cfg, std::mt19937_64& rng, double init_std) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t cin = cfg_.in_channels, cout = cfg_.out_channels, q = cfg_.bottleneck();

    params_.se.squeeze = ConvLayer::make(ConvSpec::pointwise(cout, q), false, rng, init_std);
    params_.se.squeeze_bn = BatchNormLayer::make(q);
    params_.se.excite = ConvLayer::make(ConvSpec::pointwise(q, cout), false, rng, init_std);

    for (std::size_t b = 0; b < kHdcDilations.size(); ++b) {
      params_.hdc.dilated[b] = ConvLayer::make(ConvSpec::same3x3(cin, q, kHdcDilations[b]), false, rng, init_std);
      params_.hdc.dilated_bn[b] = BatchNormLayer::make(q);
    }
    params_.hdc.fuse = cfg_.stride == 2
                           ? ConvLayer::make(ConvSpec::upsample_deconv(cout, cout), true, rng, init_std)
                           : ConvLayer::make(ConvSpec::same3x3(cout, cout), false, rng, init_std);
    params_.hdc.fuse_bn = BatchNormLayer::make(cout);

    params_.res.proj = ConvLayer::make(ConvSpec::pointwise(cin, cout), false, rng, init_std);
    params_.res.bn = BatchNormLayer::make(cout);
  }

  const CamConfig& config() const { return cfg_; }
  CamParams& params() { return params_; }
  const CamParams& params() const { return params_; }

  /// Channel gate in [0, 1] from C_out-channel features.
  Var se_forward(const Var& features, Mode mode) {
    if (features.shape().c != cfg_.out_channels) {
      throw ShapeError("se_forward: expected " + std::to_string(cfg_.out_channels) + " channels, got " +
                       std::to_string(features.shape().c));
    }
    Var z = params_.se.squeeze(global_avg_pool(features));
    if (cfg_.se_bn) z = params_.se.squeeze_bn(z, mode);
    return sigmoid(params_.se.excite(relu(z)));
  }

  Var hdc_forward(const Var& x, Mode mode) {
    check_input(x, "hdc_forward");
    std::vector<Var> branches;
    branches.reserve(kHdcDilations.size());
    for (std::size_t b = 0; b < kHdcDilations.size(); ++b) {
      branches.push_back(relu(params_.hdc.dilated_bn[b](params_.hdc.dilated[b](x), mode)));
    }
    return params_.hdc.fuse_bn(params_.hdc.fuse(concat_channels(branches)), mode);
  }

  Var res_forward(const Var& x, Mode mode) {
    check_input(x, "res_forward");
    const Var src = cfg_.stride == 2 ? upsample2x_nearest(x) : x;
    return params_.res.bn(params_.res.proj(src), mode);
  }

  /// ReLU(se * hdc + res).
  static Var fuse(const Var& se, const Var& hdc, const Var& res) { return relu(add(channel_scale(hdc, se), res)); }

  CamBranches forward_branches(const Var& x, Mode mode) {
    CamBranches b;
    b.hdc = hdc_forward(x, mode);
    b.se = cfg_.se_enabled ? se_forward(b.hdc, mode) : Var(Tensor::ones({x.shape().n, cfg_.out_channels, 1, 1}));
    b.res = res_forward(x, mode);
    b.out = fuse(b.se, b.hdc, b.res);
    return b;
  }

  Var forward(const Var& x, Mode mode) { return forward_branches(x, mode).out; }

  Shape output_shape(const Shape& in) const {
    return {in.n, cfg_.out_channels, in.h * cfg_.stride, in.w * cfg_.stride};
  }

  void visit(const ParamVisitor& v, const std::string& prefix) {
    params_.se.squeeze.visit(v, prefix + ".se.squeeze");
    params_.se.squeeze_bn.visit(v, prefix + ".se.squeeze_bn");
    params_.se.excite.visit(v, prefix + ".se.excite");
    for (std::size_t b = 0; b < kHdcDilations.size(); ++b) {
      const std::string name = prefix + ".hdc.d" + std::to_string(kHdcDilations[b]);
      params_.hdc.dilated[b].visit(v, name);
      params_.hdc.dilated_bn[b].visit(v, name + "_bn");
    }
    params_.hdc.fuse.visit(v, prefix + ".hdc.fuse");
    params_.hdc.fuse_bn.visit(v, prefix + ".hdc.fuse_bn");
    params_.res.proj.visit(v, prefix + ".res.proj");
    params_.res.bn.visit(v, prefix + ".res.bn");
  }

 private:
  void check_input(const Var& x, const char* op) const {
    if (x.shape().c != cfg_.in_channels) {
      throw ShapeError(std::string(op) + ": expected " + std::to_string(cfg_.in_channels) + " input channels, got " +
                       std::to_string(x.shape().c));
    }
  }

  CamConfig cfg_;
  CamParams params_;
};

}  // namespace pcr
