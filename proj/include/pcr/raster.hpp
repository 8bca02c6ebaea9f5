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

/// \file raster.hpp
/// \brief Minimal interleaved raster with binary PPM/PGM I/O and bilinear
/// crop sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <string>
#include <vector>

#include "pcr/error.hpp"
#include "pcr/geometry.hpp"
#include "pcr/tensor.hpp"

namespace pcr {

/// Row-major, channel-interleaved samples in [0, 1].
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<double> data;

  Raster() = default;
  Raster(std::size_t w, std::size_t h, std::size_t c, double fill = 0.0)
      : width(w), height(h), channels(c), data(w * h * c, fill) {}

  double& at(std::size_t x, std::size_t y, std::size_t c) { return data[(y * width + x) * channels + c]; }
  double at(std::size_t x, std::size_t y, std::size_t c) const { return data[(y * width + x) * channels + c]; }

  /// Bilinear interpolation at a continuous pixel position; zero outside.
  double sample(double x, double y, std::size_t c) const {
    const double fx = std::floor(x), fy = std::floor(y);
    const double ax = x - fx, ay = y - fy;
    const auto x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
    auto px = [&](long xi, long yi) -> double {
      if (xi < 0 || yi < 0 || xi >= static_cast<long>(width) || yi >= static_cast<long>(height)) return 0.0;
      return at(static_cast<std::size_t>(xi), static_cast<std::size_t>(yi), c);
    };
    return (1 - ay) * ((1 - ax) * px(x0, y0) + ax * px(x0 + 1, y0)) +
           ay * ((1 - ax) * px(x0, y0 + 1) + ax * px(x0 + 1, y0 + 1));
  }

  friend bool operator==(const Raster&, const Raster&) = default;
};

namespace detail {

inline std::size_t read_pnm_int(std::istream& is, const std::string& path) {
  char ch;
  while (is.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(is, skip);
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      is.unget();
      break;
    }
  }
  std::size_t v = 0;
  if (!(is >> v)) throw DataError(path + ": malformed PNM header");
  return v;
}

}  // namespace detail

/// Reads binary P6 (RGB) or P5 (gray) files with maxval < 256.
inline Raster load_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open image " + path);
  std::string magic(2, '\0');
  if (!is.read(magic.data(), 2) || (magic != "P6" && magic != "P5")) {
    throw DataError(path + ": not a binary PPM/PGM file");
  }
  const std::size_t channels = magic == "P6" ? 3 : 1;
  const std::size_t w = detail::read_pnm_int(is, path);
  const std::size_t h = detail::read_pnm_int(is, path);
  const std::size_t maxval = detail::read_pnm_int(is, path);
  if (w == 0 || h == 0 || w > 65536 || h > 65536) throw DataError(path + ": implausible image size");
  if (maxval == 0 || maxval > 255) throw DataError(path + ": only 8-bit PNM is supported");
  is.get();  // single whitespace before the raster
  std::vector<unsigned char> bytes(w * h * channels);
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw DataError(path + ": truncated raster");
  }
  Raster r(w, h, channels);
  for (std::size_t i = 0; i < bytes.size(); ++i) r.data[i] = static_cast<double>(bytes[i]) / static_cast<double>(maxval);
  return r;
}

/// Writes P6 for 3 channels, P5 for 1; samples are clamped and rounded.
inline void save_pnm(const Raster& r, const std::string& path) {
  if (r.channels != 1 && r.channels != 3) throw ShapeError("save_pnm: need 1 or 3 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write image " + path);
  os << (r.channels == 3 ? "P6" : "P5") << "\n" << r.width << " " << r.height << "\n255\n";
  std::vector<unsigned char> bytes(r.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(r.data[i], 0.0, 1.0) * 255.0));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed for " + path);
}

/// Resamples the region of `src` that `to_image` maps the input grid onto.
/// Returns 1 x channels x input_h x input_w.
inline Tensor crop_bilinear(const Raster& src, const Affine2D& to_image, std::size_t input_w, std::size_t input_h) {
  if (src.data.size() != src.width * src.height * src.channels) throw DataError("raster buffer size mismatch");
  Tensor out({1, src.channels, input_h, input_w});
  for (std::size_t v = 0; v < input_h; ++v) {
    for (std::size_t u = 0; u < input_w; ++u) {
      const Point p = to_image.apply({static_cast<double>(u), static_cast<double>(v)});
      for (std::size_t c = 0; c < src.channels; ++c) out.at(0, c, v, u) = src.sample(p.x, p.y, c);
    }
  }
  return out;
}

}  // namespace pcr
