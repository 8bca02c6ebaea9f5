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

/// \file tensor_io.hpp
/// \brief Flat binary tensor container.
///
/// Layout: four little-endian uint64 extents (N, C, H, W) followed by
/// N*C*H*W little-endian IEEE-754 doubles in row-major order.

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "pcr/error.hpp"
#include "pcr/tensor.hpp"

namespace pcr {

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(b.data(), 8);
}

inline bool get_u64(std::istream& is, std::uint64_t& v) {
  std::array<unsigned char, 8> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return true;
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t) {
  const Shape s = t.shape();
  for (std::size_t e : {s.n, s.c, s.h, s.w}) detail::put_u64(os, e);
  for (double v : t.data()) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw DataError("write_tensor: stream write failed");
}

inline Tensor read_tensor(std::istream& is) {
  std::array<std::uint64_t, 4> e{};
  for (auto& v : e) {
    if (!detail::get_u64(is, v)) throw DataError("read_tensor: truncated shape header");
  }
  constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;
  std::uint64_t count = 1;
  for (auto v : e) {
    if (v != 0 && count > kMaxElements / v) throw DataError("read_tensor: implausible shape");
    count *= v;
  }
  if (count > kMaxElements) throw DataError("read_tensor: implausible shape");
  Tensor t(Shape{e[0], e[1], e[2], e[3]});
  for (double& v : t.data()) {
    std::uint64_t bits = 0;
    if (!detail::get_u64(is, bits)) throw DataError("read_tensor: truncated payload");
    v = std::bit_cast<double>(bits);
  }
  if (!t.all_finite()) throw DataError("read_tensor: non-finite value in payload");
  return t;
}

inline void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_tensor(os, t);
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return read_tensor(is);
}

}  // namespace pcr
