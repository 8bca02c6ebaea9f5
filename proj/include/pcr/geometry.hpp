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

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "pcr/error.hpp"

namespace pcr {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Axis-aligned box, COCO convention (top-left corner + extents, pixels).
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  Point center() const { return {x + 0.5 * w, y + 0.5 * h}; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Intersection over union; 0 when the union is empty.
inline double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// 2x3 affine map [a b c; d e f]: (x, y) -> (a x + b y + c, d x + e y + f).
struct Affine2D {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};

  Point apply(Point p) const { return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]}; }

  double det() const { return m[0] * m[4] - m[1] * m[3]; }

  Affine2D inverse() const {
    const double d = det();
    if (!(std::abs(d) > 0.0) || !std::isfinite(d)) throw ShapeError("Affine2D: singular matrix");
    const double a = m[4] / d, b = -m[1] / d, c = -m[3] / d, e = m[0] / d;
    return {{a, b, -(a * m[2] + b * m[5]), c, e, -(c * m[2] + e * m[5])}};
  }

  /// this(other(p))
  Affine2D compose(const Affine2D& o) const {
    return {{m[0] * o.m[0] + m[1] * o.m[3], m[0] * o.m[1] + m[1] * o.m[4], m[0] * o.m[2] + m[1] * o.m[5] + m[2],
             m[3] * o.m[0] + m[4] * o.m[3], m[3] * o.m[1] + m[4] * o.m[4], m[3] * o.m[2] + m[4] * o.m[5] + m[5]}};
  }

  static Affine2D scale_translate(double sx, double sy, double tx, double ty) { return {{sx, 0, tx, 0, sy, ty}}; }
};

/// Image pixels -> network-input pixels, with its inverse.
struct CropTransform {
  Affine2D to_input;
  Affine2D to_image;

  Point forward(Point p) const { return to_input.apply(p); }
  Point backward(Point p) const { return to_image.apply(p); }
};

inline constexpr double kCropPadding = 1.25;

/// Maps the box center to the input center after growing the box to the
/// input aspect ratio and padding it by `padding`.
inline CropTransform crop_transform(const BBox& box, std::size_t input_w, std::size_t input_h,
                                    double padding = kCropPadding) {
  if (!(box.w > 0.0) || !(box.h > 0.0) || !std::isfinite(box.w) || !std::isfinite(box.h)) {
    throw ShapeError("crop_transform: degenerate box");
  }
  if (input_w == 0 || input_h == 0) throw ShapeError("crop_transform: empty input size");
  const double aspect = static_cast<double>(input_w) / static_cast<double>(input_h);
  double w = box.w, h = box.h;
  if (w > aspect * h) {
    h = w / aspect;
  } else {
    w = h * aspect;
  }
  w *= padding;
  const double s = static_cast<double>(input_w) / w;
  const Point c = box.center();
  const Affine2D fwd = Affine2D::scale_translate(s, s, 0.5 * static_cast<double>(input_w) - s * c.x,
                                                 0.5 * static_cast<double>(input_h) - s * c.y);
  return {fwd, fwd.inverse()};
}

}  // namespace pcr
