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

/// \file model.hpp
/// \brief Progressive multi-level decoder.
///
/// A small strided encoder feeds L parallel decoders of K context-aware
/// modules each. Level l predicts
///
///     h_l = head_l( sum_{i <= l} last_cam_output_i )
///
/// so later levels learn residual features on top of earlier ones. h_L is
/// the inference output; the other levels (and the optional auxiliary head
/// on level L's penultimate module) only add training signal.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pcr/cam.hpp"
#include "pcr/kv.hpp"
#include "pcr/layers.hpp"

namespace pcr {

struct PcrConfig {
  std::size_t K = 3;  // modules per decoder
  std::size_t L = 1;  // decoder levels
  std::vector<std::size_t> channels{256, 256, 256};
  std::size_t joints = 17;
  std::size_t input_h = 256;
  std::size_t input_w = 192;
  std::size_t image_channels = 3;
  /// One stride-2 conv stage per entry; total encoder stride 2^stages.
  std::vector<std::size_t> encoder_channels{64, 128, 256};
  bool aux = false;
  std::uint64_t seed = 0;
  double init_std = 0.001;
  bool se_bn = true;
  /// Loss weight per level; empty means all ones.
  std::vector<double> level_weights;
  double aux_weight = 1.0;

  static constexpr std::size_t kOutputStride = 4;

  std::size_t heatmap_h() const { return input_h / kOutputStride; }
  std::size_t heatmap_w() const { return input_w / kOutputStride; }
  std::size_t encoder_stride() const { return std::size_t{1} << encoder_channels.size(); }

  /// The trailing (stages - 2) modules upsample; the rest keep resolution.
  std::vector<std::size_t> cam_strides() const {
    const std::size_t up = encoder_channels.size() - 2;
    std::vector<std::size_t> s(K, 1);
    for (std::size_t k = K - up; k < K; ++k) s[k] = 2;
    return s;
  }

  double level_weight(std::size_t l) const { return level_weights.empty() ? 1.0 : level_weights.at(l); }

  void validate() const {
    if (K < 1) throw ConfigError("K must be >= 1");
    if (L < 1) throw ConfigError("L must be >= 1");
    if (channels.size() != K) {
      throw ConfigError("channel plan has " + std::to_string(channels.size()) + " entries, K = " + std::to_string(K));
    }
    for (std::size_t c : channels) {
      if (c == 0 || c % 4 != 0) throw ConfigError("every module width must be a positive multiple of 4");
    }
    if (joints == 0) throw ConfigError("joints must be positive");
    if (image_channels == 0) throw ConfigError("image_channels must be positive");
    if (encoder_channels.size() < 2) throw ConfigError("encoder needs at least 2 stride-2 stages");
    for (std::size_t c : encoder_channels) {
      if (c == 0) throw ConfigError("encoder channels must be positive");
    }
    if (encoder_channels.size() - 2 > K) {
      throw ConfigError("K = " + std::to_string(K) + " modules cannot undo an encoder stride of " +
                        std::to_string(encoder_stride()));
    }
    if (input_h == 0 || input_w == 0 || input_h % encoder_stride() != 0 || input_w % encoder_stride() != 0) {
      throw ConfigError("input size must be a positive multiple of the encoder stride " +
                        std::to_string(encoder_stride()));
    }
    if (aux && K < 2) throw ConfigError("aux head needs K >= 2 (it reads the penultimate module)");
    if (!level_weights.empty() && level_weights.size() != L) throw ConfigError("level_weights must have L entries");
    if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
  }

  kv::Map to_kv() const {
    return {{"K", std::to_string(K)},
            {"L", std::to_string(L)},
            {"channels", kv::join(channels)},
            {"joints", std::to_string(joints)},
            {"input_h", std::to_string(input_h)},
            {"input_w", std::to_string(input_w)},
            {"image_channels", std::to_string(image_channels)},
            {"encoder_channels", kv::join(encoder_channels)},
            {"aux", aux ? "1" : "0"},
            {"seed", std::to_string(seed)},
            {"init_std", kv::format_double(init_std)},
            {"se_bn", se_bn ? "1" : "0"},
            {"level_weights", kv::join(level_weights)},
            {"aux_weight", kv::format_double(aux_weight)}};
  }

  /// Applies a recognised key; returns false for keys this struct does not own.
  bool apply(const std::string& key, const std::string& value) {
    if (key == "K") K = kv::parse_number<std::size_t>(key, value);
    else if (key == "L") L = kv::parse_number<std::size_t>(key, value);
    else if (key == "channels") channels = kv::parse_list<std::size_t>(key, value);
    else if (key == "joints") joints = kv::parse_number<std::size_t>(key, value);
    else if (key == "input_h") input_h = kv::parse_number<std::size_t>(key, value);
    else if (key == "input_w") input_w = kv::parse_number<std::size_t>(key, value);
    else if (key == "image_channels") image_channels = kv::parse_number<std::size_t>(key, value);
    else if (key == "encoder_channels") encoder_channels = kv::parse_list<std::size_t>(key, value);
    else if (key == "aux") aux = kv::parse_bool(key, value);
    else if (key == "seed") seed = kv::parse_number<std::uint64_t>(key, value);
    else if (key == "init_std") init_std = kv::parse_number<double>(key, value);
    else if (key == "se_bn") se_bn = kv::parse_bool(key, value);
    else if (key == "level_weights") level_weights = value.empty() ? std::vector<double>{} : kv::parse_list<double>(key, value);
    else if (key == "aux_weight") aux_weight = kv::parse_number<double>(key, value);
    else return false;
    return true;
  }

  /// A single channel count is broadcast to all K modules.
  void broadcast_channels() {
    if (channels.size() == 1 && K > 1) channels.assign(K, channels.front());
  }
};

struct PcrOutputs {
  std::vector<Var> heatmaps;             // h_1 .. h_L
  std::optional<Var> aux;                // level L, penultimate module
  std::vector<std::vector<Var>> cams;    // [level][k] module outputs
  std::vector<Var> fused;                // running sums fed to each head
  Var encoded;
};

struct LossBreakdown {
  Var total;
  std::vector<double> levels;
  double aux = 0.0;
};

class PcrModel {
 public:
  explicit PcrModel(PcrConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    const double sd = cfg_.init_std;

    std::size_t c_in = cfg_.image_channels;
    for (std::size_t c : cfg_.encoder_channels) {
      encoder_.push_back({ConvLayer::make({3, 3, 2, 1, 1, c_in, c}, false, rng, sd), BatchNormLayer::make(c)});
      c_in = c;
    }
    const std::vector<std::size_t> strides = cfg_.cam_strides();
    decoders_.resize(cfg_.L);
    for (std::size_t l = 0; l < cfg_.L; ++l) {
      std::size_t prev = cfg_.encoder_channels.back();
      for (std::size_t k = 0; k < cfg_.K; ++k) {
        CamConfig cc;
        cc.index = k;
        cc.in_channels = prev;
        cc.out_channels = cfg_.channels[k];
        cc.stride = strides[k];
        cc.se_bn = cfg_.se_bn;
        decoders_[l].emplace_back(cc, rng, sd);
        prev = cfg_.channels[k];
      }
      heads_.push_back(ConvLayer::make(ConvSpec::pointwise(cfg_.channels.back(), cfg_.joints), false, rng, sd));
    }
    if (cfg_.aux) {
      aux_head_ = ConvLayer::make(ConvSpec::pointwise(cfg_.channels[cfg_.K - 2], cfg_.joints), false, rng, sd);
    }
  }

  const PcrConfig& config() const { return cfg_; }
  std::vector<std::vector<Cam>>& decoders() { return decoders_; }
  std::vector<ConvLayer>& heads() { return heads_; }
  std::optional<ConvLayer>& aux_head() { return aux_head_; }

  Var encode(const Var& images, Mode mode) {
    const Shape s = images.shape();
    if (s.c != cfg_.image_channels || s.h != cfg_.input_h || s.w != cfg_.input_w) {
      throw ShapeError("model input " + s.str() + ", expected Nx" + std::to_string(cfg_.image_channels) + "x" +
                       std::to_string(cfg_.input_h) + "x" + std::to_string(cfg_.input_w));
    }
    Var x = images;
    for (auto& stage : encoder_) x = relu(stage.bn(stage.conv(x), mode));
    return x;
  }

  /// All K module outputs of decoder `level` applied to shared features.
  std::vector<Var> decoder_forward(const Var& features, std::size_t level, Mode mode) {
    if (level >= cfg_.L) throw ShapeError("decoder level " + std::to_string(level) + " out of range");
    if (features.shape().c != cfg_.encoder_channels.back()) {
      throw ShapeError("decoder_forward: features have " + std::to_string(features.shape().c) + " channels, expected " +
                       std::to_string(cfg_.encoder_channels.back()));
    }
    std::vector<Var> outs;
    Var x = features;
    for (Cam& cam : decoders_[level]) {
      x = cam.forward(x, mode);
      outs.push_back(x);
    }
    return outs;
  }

  PcrOutputs forward(const Var& images, Mode mode) {
    PcrOutputs out;
    out.encoded = encode(images, mode);
    Var running;
    for (std::size_t l = 0; l < cfg_.L; ++l) {
      out.cams.push_back(decoder_forward(out.encoded, l, mode));
      const Var& last = out.cams.back().back();
      running = l == 0 ? last : add(running, last);
      out.fused.push_back(running);
      out.heatmaps.push_back(heads_[l](running));
    }
    if (aux_head_) {
      Var a = (*aux_head_)(out.cams.back()[cfg_.K - 2]);
      for (std::size_t s = decoders_.back().back().config().stride; s > 1; s /= 2) a = upsample2x_nearest(a);
      out.aux = a;
    }
    return out;
  }

  void visit(const ParamVisitor& v) {
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      const std::string p = "encoder." + std::to_string(i);
      encoder_[i].conv.visit(v, p + ".conv");
      encoder_[i].bn.visit(v, p + ".bn");
    }
    for (std::size_t l = 0; l < decoders_.size(); ++l) {
      for (std::size_t k = 0; k < decoders_[l].size(); ++k) {
        decoders_[l][k].visit(v, "level" + std::to_string(l + 1) + ".cam" + std::to_string(k + 1));
      }
      heads_[l].visit(v, "level" + std::to_string(l + 1) + ".head");
    }
    if (aux_head_) aux_head_->visit(v, "aux.head");
  }

  std::vector<std::pair<std::string, Var>> parameters() {
    std::vector<std::pair<std::string, Var>> out;
    visit({[&](const std::string& n, Var& p) { out.emplace_back(n, p); }, [](const std::string&, BnState&) {}});
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& [_, p] : parameters()) n += p.value().size();
    return n;
  }

 private:
  struct EncoderStage {
    ConvLayer conv;
    BatchNormLayer bn;
  };

  PcrConfig cfg_;
  std::vector<EncoderStage> encoder_;
  std::vector<std::vector<Cam>> decoders_;
  std::vector<ConvLayer> heads_;
  std::optional<ConvLayer> aux_head_;
};

/// sum_l w_l * mse(h_l) + w_aux * mse(aux), all against the same target.
inline LossBreakdown multi_task_loss(const PcrOutputs& out, const Tensor& target, const Tensor& weights,
                                     const PcrConfig& cfg) {
  if (out.heatmaps.empty()) throw ShapeError("multi_task_loss: no predictions");
  LossBreakdown lb;
  for (std::size_t l = 0; l < out.heatmaps.size(); ++l) {
    Var term = weighted_mse(out.heatmaps[l], target, weights);
    lb.levels.push_back(term.item());
    term = scale(term, cfg.level_weight(l));
    lb.total = l == 0 ? term : add(lb.total, term);
  }
  if (out.aux) {
    Var term = weighted_mse(*out.aux, target, weights);
    lb.aux = term.item();
    lb.total = add(lb.total, scale(term, cfg.aux_weight));
  }
  return lb;
}

struct TrainStepResult {
  double loss = 0.0;
  std::vector<double> levels;
  double aux = 0.0;
};

/// One full-batch gradient descent update: p <- p - lr * dloss/dp.
inline TrainStepResult train_step(PcrModel& model, const Tensor& images, const Tensor& target, const Tensor& weights,
                                  double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
  auto params = model.parameters();
  for (auto& [_, p] : params) p.zero_grad();
  PcrOutputs out = model.forward(Var(images), Mode::train);
  LossBreakdown lb = multi_task_loss(out, target, weights, model.config());
  const double loss = lb.total.item();
  if (!std::isfinite(loss)) {
    std::string levels;
    for (double v : lb.levels) levels += " " + kv::format_double(v);
    throw NumericError("non-finite loss " + kv::format_double(loss) + " (levels:" + levels + ", aux " +
                       kv::format_double(lb.aux) + ")");
  }
  backward(lb.total);
  for (auto& [name, p] : params) {
    const Tensor& g = p.grad();
    if (!g.all_finite()) throw NumericError("non-finite gradient in " + name + " at loss " + kv::format_double(loss));
    Tensor& v = p.mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
  return {loss, std::move(lb.levels), lb.aux};
}

}  // namespace pcr
