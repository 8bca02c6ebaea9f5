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

/// \file gradcheck.hpp
/// \brief Central finite-difference verification of backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pcr/autograd.hpp"

namespace pcr {

struct GradCheckEntry {
  std::string name;
  std::size_t elements = 0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  /// ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double rel_error = 0.0;
  bool ok = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Below this gradient norm the check falls back to an absolute bound.
  double norm_floor = 1e-9;
};

/// Compares analytic gradients of `loss_fn` w.r.t. each named leaf against
/// (f(v + h) - f(v - h)) / 2h, one element at a time. `loss_fn` must rebuild
/// the graph from the leaves on every call.
inline std::vector<GradCheckEntry> gradcheck(const std::function<Var()>& loss_fn,
                                             std::vector<std::pair<std::string, Var>> leaves,
                                             const GradCheckOptions& opt = {}) {
  for (auto& [_, v] : leaves) v.zero_grad();
  backward(loss_fn());
  std::vector<Tensor> analytic;
  analytic.reserve(leaves.size());
  for (auto& [_, v] : leaves) analytic.push_back(v.grad());

  auto eval = [&] {
    NoGradGuard guard;
    return loss_fn().item();
  };

  std::vector<GradCheckEntry> out;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Var& leaf = leaves[li].second;
    Tensor& value = leaf.mutable_value();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = value[i];
      value[i] = orig + opt.step;
      const double up = eval();
      value[i] = orig - opt.step;
      const double down = eval();
      value[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[li][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    GradCheckEntry e;
    e.name = leaves[li].first;
    e.elements = value.size();
    e.analytic_norm = std::sqrt(a2);
    e.numeric_norm = std::sqrt(n2);
    const double denom = std::max(e.analytic_norm, e.numeric_norm);
    if (denom < opt.norm_floor) {
      e.rel_error = std::sqrt(diff2);
      e.ok = e.rel_error < opt.norm_floor;
    } else {
      e.rel_error = std::sqrt(diff2) / denom;
      e.ok = e.rel_error < opt.tolerance;
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline bool all_ok(const std::vector<GradCheckEntry>& entries) {
  return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.ok; });
}

}  // namespace pcr
