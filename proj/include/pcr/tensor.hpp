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

/// \file tensor.hpp
/// \brief Dense rank-4 (N, C, H, W) array of doubles, row-major.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pcr/error.hpp"

namespace pcr {

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(shape, 0.0); }
  static Tensor ones(Shape shape) { return Tensor(shape, 1.0); }
  static Tensor scalar(double v) { return Tensor({1, 1, 1, 1}, v); }

  template <class Rng>
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t(shape);
    for (double& v : t.data_) v = dist(rng);
    return t;
  }

  template <class Rng>
  static Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(shape);
    for (double& v : t.data_) v = dist(rng);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[index(n, c, h, w)]; }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Pointer to the H*W plane of (n, c).
  double* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const double* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  /// Channels [offset, offset + count) as a new tensor.
  Tensor slice_channels(std::size_t offset, std::size_t count) const {
    if (offset + count > shape_.c) {
      throw ShapeError("channel slice [" + std::to_string(offset) + ", " + std::to_string(offset + count) +
                       ") out of range for " + shape_.str());
    }
    Tensor out({shape_.n, count, shape_.h, shape_.w});
    const std::size_t p = shape_.plane();
    for (std::size_t n = 0; n < shape_.n; ++n) {
      std::copy_n(plane(n, offset), count * p, out.plane(n, 0));
    }
    return out;
  }

  /// Batch entries [offset, offset + count) as a new tensor.
  Tensor slice_batch(std::size_t offset, std::size_t count) const {
    if (offset + count > shape_.n) throw ShapeError("batch slice out of range for " + shape_.str());
    Tensor out({count, shape_.c, shape_.h, shape_.w});
    const std::size_t per = shape_.c * shape_.plane();
    std::copy_n(data_.data() + offset * per, count * per, out.data_.data());
    return out;
  }

  void require_same_shape(const Tensor& other, const char* what) const {
    if (shape_ != other.shape_) {
      throw ShapeError(std::string(what) + ": shape " + shape_.str() + " vs " + other.shape_.str());
    }
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

/// Stacks same-shaped tensors along the batch axis.
inline Tensor stack_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("stack_batch: empty list");
  const Shape s = parts.front().shape();
  std::size_t n = 0;
  for (const Tensor& t : parts) {
    if (t.shape().c != s.c || t.shape().h != s.h || t.shape().w != s.w) {
      throw ShapeError("stack_batch: " + t.shape().str() + " vs " + s.str());
    }
    n += t.shape().n;
  }
  Tensor out({n, s.c, s.h, s.w});
  std::size_t off = 0;
  for (const Tensor& t : parts) {
    std::copy(t.vec().begin(), t.vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(off));
    off += t.size();
  }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double dot(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace pcr
