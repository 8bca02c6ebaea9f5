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

/// \file batch.hpp
/// \brief Person crops and heatmap targets for training.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pcr/dataset.hpp"
#include "pcr/heatmap.hpp"
#include "pcr/raster.hpp"

namespace pcr {

/// Left/right joint index pairs swapped by a horizontal flip.
using FlipPairs = std::vector<std::pair<std::size_t, std::size_t>>;

inline FlipPairs coco_flip_pairs() {
  return {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}, {13, 14}, {15, 16}};
}

inline void validate_flip_pairs(const FlipPairs& pairs, std::size_t joints) {
  std::vector<int> used(joints, 0);
  for (auto [a, b] : pairs) {
    if (a >= joints || b >= joints || a == b) throw ConfigError("flip pair out of range or self-paired");
    if (used[a]++ || used[b]++) throw ConfigError("joint listed in more than one flip pair");
  }
}

struct Sample {
  Tensor image;             // 1 x C x H x W
  KeypointSet keypoints;    // network-input pixels
  CropTransform transform;  // image <-> network input, flip included
  Source source = Source::labeled;
  bool flipped = false;
};

inline Sample make_sample(const Raster& img, const InstanceRecord& r, std::size_t input_w, std::size_t input_h) {
  Sample s;
  s.transform = crop_transform(r.bbox, input_w, input_h);
  s.image = crop_bilinear(img, s.transform.to_image, input_w, input_h);
  s.keypoints = r.keypoints;
  for (Keypoint& k : s.keypoints) {
    if (!k.labeled()) continue;
    const Point p = s.transform.forward({k.x, k.y});
    k.x = p.x;
    k.y = p.y;
  }
  s.source = r.source;
  return s;
}

/// Mirrors the crop about its vertical centre line (x -> W - 1 - x) and swaps
/// paired joints. Applying it twice restores the sample.
inline Sample flip_sample(const Sample& s, const FlipPairs& pairs) {
  const Shape sh = s.image.shape();
  const double W = static_cast<double>(sh.w);
  Sample out = s;
  for (std::size_t c = 0; c < sh.c; ++c) {
    for (std::size_t y = 0; y < sh.h; ++y) {
      for (std::size_t x = 0; x < sh.w; ++x) out.image.at(0, c, y, x) = s.image.at(0, c, y, sh.w - 1 - x);
    }
  }
  for (Keypoint& k : out.keypoints) {
    if (k.labeled()) k.x = W - 1.0 - k.x;
  }
  for (auto [a, b] : pairs) std::swap(out.keypoints.at(a), out.keypoints.at(b));
  const Affine2D mirror{{-1, 0, W - 1.0, 0, 1, 0}};
  out.transform = {mirror.compose(s.transform.to_input), s.transform.to_image.compose(mirror)};
  out.flipped = !s.flipped;
  return out;
}

inline HeatmapTarget sample_target(const Sample& s, const CodecParams& codec) {
  if (s.source == Source::hard_negative) {
    return hard_negative_target(s.keypoints.size(), codec.heatmap_h, codec.heatmap_w);
  }
  return encode(s.keypoints, Affine2D{}, codec);
}

struct BatchOptions {
  std::size_t input_w = 192;
  std::size_t input_h = 256;
  CodecParams codec;
  bool flip = false;
  FlipPairs pairs;
};

struct Batch {
  Tensor images;   // N x C x H x W
  Tensor maps;     // N x J x h x w
  Tensor weights;  // N x J x 1 x 1
  std::vector<Sample> samples;
};

using ImageLookup = std::function<const Raster&(std::int64_t image_id)>;

/// Crops every record and encodes its target. With `flip`, each sample is
/// mirrored when the next draw of `rng` is odd, so the result depends only on
/// the seed and the record order.
inline Batch build_batch(const std::vector<InstanceRecord>& records, const ImageLookup& images,
                         const BatchOptions& opt, std::mt19937_64& rng) {
  if (records.empty()) throw DataError("build_batch: no records");
  const std::size_t J = records.front().keypoints.size();
  if (opt.flip) validate_flip_pairs(opt.pairs, J);
  Batch b;
  std::vector<Tensor> imgs, maps, weights;
  for (const InstanceRecord& r : records) {
    if (r.keypoints.size() != J) throw DataError("build_batch: records disagree on the joint count");
    Sample s = make_sample(images(r.image_id), r, opt.input_w, opt.input_h);
    if (opt.flip && (rng() & 1u)) s = flip_sample(s, opt.pairs);
    HeatmapTarget t = sample_target(s, opt.codec);
    imgs.push_back(s.image);
    maps.push_back(std::move(t.maps));
    weights.push_back(std::move(t.weights));
    b.samples.push_back(std::move(s));
  }
  b.images = stack_batch(imgs);
  b.maps = stack_batch(maps);
  b.weights = stack_batch(weights);
  return b;
}

/// Loads images of a dataset on first use, resolving file names against a
/// root directory.
class ImageCache {
 public:
  ImageCache(const Dataset& ds, std::filesystem::path root) : root_(std::move(root)) {
    for (const ImageInfo& im : ds.images) files_[im.id] = im.file_name;
  }

  const Raster& operator()(std::int64_t id) {
    if (auto it = cache_.find(id); it != cache_.end()) return it->second;
    const auto f = files_.find(id);
    if (f == files_.end()) throw DataError("image id " + std::to_string(id) + " is not listed in the annotations");
    return cache_.emplace(id, load_pnm((root_ / f->second).string())).first->second;
  }

  ImageLookup lookup() {
    return [this](std::int64_t id) -> const Raster& { return (*this)(id); };
  }

 private:
  std::filesystem::path root_;
  std::map<std::int64_t, std::string> files_;
  std::map<std::int64_t, Raster> cache_;
};

}  // namespace pcr
