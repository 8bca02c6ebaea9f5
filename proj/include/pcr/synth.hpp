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

/// \file synth.hpp
/// \brief Procedural scenes for tests and demos. Each image holds one
/// "person" (a gray ellipse with a coloured disk per joint) and one distractor
/// region (the same colours as squares, no body) that never overlaps it.

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "pcr/dataset.hpp"
#include "pcr/raster.hpp"

namespace pcr {

struct SynthOptions {
  std::size_t count = 8;
  std::size_t joints = 4;
  std::uint64_t seed = 1;
  std::size_t width = 128;
  std::size_t height = 100;
  double box_w = 38.0;
  double box_h = 51.0;
  double joint_radius = 3.0;
  double min_joint_distance = 9.0;
  std::int64_t first_image_id = 1;
};

struct SynthScene {
  Dataset dataset;
  std::vector<Raster> images;  // aligned with dataset.images
  std::vector<PersonDetection> detections;
  std::vector<BBox> distractor_boxes;  // one per image
};

/// Fully saturated colour for joint j of J, evenly spaced in hue.
inline std::array<double, 3> joint_color(std::size_t j, std::size_t joints) {
  const double h = 6.0 * static_cast<double>(j) / static_cast<double>(joints);
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  switch (static_cast<int>(h)) {
    case 0: return {1, x, 0};
    case 1: return {x, 1, 0};
    case 2: return {0, 1, x};
    case 3: return {0, x, 1};
    case 4: return {x, 0, 1};
    default: return {1, 0, x};
  }
}

namespace detail {

template <class Pred>
void paint(Raster& r, const std::array<double, 3>& color, Pred inside) {
  for (std::size_t y = 0; y < r.height; ++y) {
    for (std::size_t x = 0; x < r.width; ++x) {
      if (!inside(static_cast<double>(x), static_cast<double>(y))) continue;
      for (std::size_t c = 0; c < 3; ++c) r.at(x, y, c) = color[c];
    }
  }
}

/// Integer joint positions inside `box` with a margin, pairwise at least
/// `min_dist` apart.
inline std::vector<Point> place_joints(const BBox& box, std::size_t joints, double margin, double min_dist,
                                       std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux(box.x + margin, box.x + box.w - margin);
  std::uniform_real_distribution<double> uy(box.y + margin, box.y + box.h - margin);
  std::vector<Point> pts;
  for (int attempt = 0; pts.size() < joints; ++attempt) {
    if (attempt > 100000) throw ConfigError("synthetic scene: joints do not fit in the box");
    const Point p{std::round(ux(rng)), std::round(uy(rng))};
    const bool clear = std::all_of(pts.begin(), pts.end(), [&](const Point& q) {
      return std::hypot(p.x - q.x, p.y - q.y) >= min_dist;
    });
    if (clear) pts.push_back(p);
  }
  return pts;
}

}  // namespace detail

inline SynthScene make_synthetic(const SynthOptions& o) {
  if (o.joints == 0) throw ConfigError("synthetic scene: joints must be positive");
  if (o.width < 2 * o.box_w + 40 || o.height < o.box_h + 20) throw ConfigError("synthetic scene: image too small");
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> noise(0.0, 0.1);
  const double half = 0.5 * static_cast<double>(o.width);
  std::uniform_real_distribution<double> left_x(2.0, half - o.box_w - 10.0);
  std::uniform_real_distribution<double> right_x(half + 6.0, static_cast<double>(o.width) - o.box_w - 2.0);
  std::uniform_real_distribution<double> top_y(2.0, static_cast<double>(o.height) - o.box_h - 2.0);
  std::uniform_real_distribution<double> score(0.85, 0.99);

  SynthScene s;
  s.dataset.joints = o.joints;
  for (std::size_t i = 0; i < o.count; ++i) {
    const std::int64_t image_id = o.first_image_id + static_cast<std::int64_t>(i);
    Raster img(o.width, o.height, 3);
    for (double& v : img.data) v = noise(rng);

    const BBox person{std::round(left_x(rng)), std::round(top_y(rng)), o.box_w, o.box_h};
    const BBox distractor{std::round(right_x(rng)), std::round(top_y(rng)), o.box_w, o.box_h};
    const Point c = person.center();
    const double ax = 0.45 * person.w, ay = 0.47 * person.h;
    detail::paint(img, {0.5, 0.5, 0.5}, [&](double x, double y) {
      return (x - c.x) * (x - c.x) / (ax * ax) + (y - c.y) * (y - c.y) / (ay * ay) <= 1.0;
    });

    const double margin = o.joint_radius + 3.0;
    InstanceRecord rec;
    rec.id = image_id;
    rec.image_id = image_id;
    rec.bbox = person;
    for (const Point& p : detail::place_joints(person, o.joints, margin, o.min_joint_distance, rng)) {
      rec.keypoints.push_back({p.x, p.y, 2});
    }
    const double r2 = o.joint_radius * o.joint_radius;
    for (std::size_t j = 0; j < o.joints; ++j) {
      const Keypoint k = rec.keypoints[j];
      detail::paint(img, joint_color(j, o.joints),
                    [&](double x, double y) { return (x - k.x) * (x - k.x) + (y - k.y) * (y - k.y) <= r2; });
    }
    const auto squares = detail::place_joints(distractor, o.joints, margin, o.min_joint_distance, rng);
    for (std::size_t j = 0; j < o.joints; ++j) {
      const Point q = squares[j];
      detail::paint(img, joint_color(j, o.joints), [&](double x, double y) {
        return std::abs(x - q.x) <= o.joint_radius && std::abs(y - q.y) <= o.joint_radius;
      });
    }

    s.dataset.images.push_back({image_id, "synth_" + std::to_string(image_id) + ".ppm", o.width, o.height});
    s.dataset.records.push_back(std::move(rec));
    s.images.push_back(std::move(img));
    s.distractor_boxes.push_back(distractor);

    // Detector output: the person, a shifted duplicate overlapping it, the
    // distractor with a high score and a low-score box in the empty band.
    s.detections.push_back({image_id, person, score(rng)});
    s.detections.push_back({image_id, {person.x + 6.0, person.y + 6.0, person.w, person.h}, 0.95});
    s.detections.push_back({image_id, distractor, 0.8});
    s.detections.push_back({image_id, {half - 8.0, static_cast<double>(o.height) - 12.0, 4.0, 8.0}, 0.3});
  }
  return s;
}

}  // namespace pcr
