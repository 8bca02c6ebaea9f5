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
#include <vector>

namespace pcr {

/// COCO visibility: 0 unlabeled, 1 labeled but occluded, 2 labeled and visible.
struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  int v = 0;

  bool labeled() const { return v > 0; }
  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

using KeypointSet = std::vector<Keypoint>;

inline std::size_t labeled_count(const KeypointSet& kps) {
  return static_cast<std::size_t>(std::count_if(kps.begin(), kps.end(), [](const Keypoint& k) { return k.labeled(); }));
}

}  // namespace pcr
