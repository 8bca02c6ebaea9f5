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

/// \file heatmap.hpp
/// \brief Keypoints <-> Gaussian heatmaps.
///
/// Heatmap pixel (u, v) corresponds to network-input pixel (stride*u,
/// stride*v). A labeled joint becomes an unnormalised Gaussian centred on its
/// exact heatmap position, rescaled so the nearest heatmap pixel holds 1.

#include <cmath>
#include <vector>

#include "pcr/geometry.hpp"
#include "pcr/keypoints.hpp"
#include "pcr/tensor.hpp"

namespace pcr {

struct CodecParams {
  std::size_t heatmap_h = 64;
  std::size_t heatmap_w = 48;
  double stride = 4.0;  // input pixels per heatmap pixel
  double sigma = 2.0;   // heatmap pixels
};

/// maps: 1 x J x H x W in [0, 1]; weights: 1 x J x 1 x 1 in {0, 1}.
struct HeatmapTarget {
  Tensor maps;
  Tensor weights;
};

inline HeatmapTarget encode(const KeypointSet& kps, const Affine2D& image_to_input, const CodecParams& p) {
  if (!(p.sigma > 0.0)) throw ConfigError("encode: sigma must be positive");
  if (!(p.stride > 0.0)) throw ConfigError("encode: stride must be positive");
  const std::size_t J = kps.size();
  HeatmapTarget t{Tensor({1, J, p.heatmap_h, p.heatmap_w}), Tensor({1, J, 1, 1})};
  const auto radius = static_cast<long>(std::floor(3.0 * p.sigma));
  const double denom = 2.0 * p.sigma * p.sigma;
  const auto H = static_cast<long>(p.heatmap_h), W = static_cast<long>(p.heatmap_w);
  for (std::size_t j = 0; j < J; ++j) {
    if (kps[j].v <= 0) continue;
    const Point in = image_to_input.apply({kps[j].x, kps[j].y});
    const double hx = in.x / p.stride, hy = in.y / p.stride;
    if (!std::isfinite(hx) || !std::isfinite(hy)) continue;
    const auto qx = static_cast<long>(std::floor(hx + 0.5));
    const auto qy = static_cast<long>(std::floor(hy + 0.5));
    if (qx < 0 || qy < 0 || qx >= W || qy >= H) continue;
    t.weights[j] = 1.0;
    const double d0 = (qx - hx) * (qx - hx) + (qy - hy) * (qy - hy);
    double* plane = t.maps.plane(0, j);
    for (long y = std::max(0L, qy - radius); y <= std::min(H - 1, qy + radius); ++y) {
      for (long x = std::max(0L, qx - radius); x <= std::min(W - 1, qx + radius); ++x) {
        const double d = (x - hx) * (x - hx) + (y - hy) * (y - hy);
        plane[y * W + x] = x == qx && y == qy ? 1.0 : std::exp(-(d - d0) / denom);
      }
    }
  }
  return t;
}

/// Target for a crop that contains no person: every map zero, every joint
/// weighted so any predicted activation is penalised.
inline HeatmapTarget hard_negative_target(std::size_t joints, std::size_t heatmap_h, std::size_t heatmap_w) {
  return {Tensor({1, joints, heatmap_h, heatmap_w}), Tensor({1, joints, 1, 1}, 1.0)};
}

struct HeatmapPeak {
  double x = 0.0;  // heatmap pixels
  double y = 0.0;
  double score = 0.0;
};

/// Per-joint argmax of plane (n, j) of `maps`, optionally shifted a quarter
/// pixel toward the larger neighbour on each axis.
inline std::vector<HeatmapPeak> find_peaks(const Tensor& maps, std::size_t n = 0, bool refine = true) {
  const Shape s = maps.shape();
  std::vector<HeatmapPeak> out(s.c);
  for (std::size_t j = 0; j < s.c; ++j) {
    const double* p = maps.plane(n, j);
    std::size_t best = 0;
    for (std::size_t k = 1; k < s.plane(); ++k) {
      if (p[k] > p[best]) best = k;
    }
    const std::size_t px = best % s.w, py = best / s.w;
    HeatmapPeak pk{static_cast<double>(px), static_cast<double>(py), s.plane() ? p[best] : 0.0};
    if (refine && pk.score > 0.0) {
      if (px > 0 && px + 1 < s.w) {
        const double d = p[best + 1] - p[best - 1];
        pk.x += d > 0.0 ? 0.25 : (d < 0.0 ? -0.25 : 0.0);
      }
      if (py > 0 && py + 1 < s.h) {
        const double d = p[best + s.w] - p[best - s.w];
        pk.y += d > 0.0 ? 0.25 : (d < 0.0 ? -0.25 : 0.0);
      }
    }
    out[j] = pk;
  }
  return out;
}

struct DecodedPose {
  KeypointSet keypoints;
  std::vector<double> scores;

  /// Mean per-joint peak score.
  double instance_score() const {
    if (scores.empty()) return 0.0;
    double s = 0.0;
    for (double v : scores) s += v;
    return s / static_cast<double>(scores.size());
  }
};

/// Heatmaps (plane n of a N x J x H x W tensor) back to image coordinates.
inline DecodedPose decode(const Tensor& maps, const Affine2D& input_to_image, double stride = 4.0, std::size_t n = 0,
                          bool refine = true) {
  DecodedPose out;
  for (const HeatmapPeak& pk : find_peaks(maps, n, refine)) {
    const Point img = input_to_image.apply({pk.x * stride, pk.y * stride});
    out.keypoints.push_back({img.x, img.y, 2});
    out.scores.push_back(pk.score);
  }
  return out;
}

}  // namespace pcr
