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

/// \file pipeline.hpp
/// \brief Training loop over instance records and top-down inference on
/// detections.

#include <ostream>
#include <random>
#include <vector>

#include "pcr/batch.hpp"
#include "pcr/model.hpp"
#include "pcr/run_config.hpp"

namespace pcr {

struct LossLogRow {
  std::size_t step = 0;
  double total = 0.0;
  std::vector<double> levels;
  double aux = 0.0;
};

inline void write_loss_header(std::ostream& os, const PcrConfig& cfg) {
  os << "step,total";
  for (std::size_t l = 1; l <= cfg.L; ++l) os << ",level" << l;
  if (cfg.aux) os << ",aux";
  os << "\n";
}

inline void write_loss_row(std::ostream& os, const LossLogRow& r, const PcrConfig& cfg) {
  const auto old = os.precision(17);
  os << r.step << "," << r.total;
  for (double v : r.levels) os << "," << v;
  if (cfg.aux) os << "," << r.aux;
  os << "\n";
  os.precision(old);
}

/// Plain gradient descent over `records`, one batch per step. Batches are
/// consecutive slices of the record list (the whole list when batch_size is
/// 0). With flipping enabled, crops are rebuilt every step from a generator
/// seeded by the model seed.
inline std::vector<LossLogRow> train_records(PcrModel& model, const std::vector<InstanceRecord>& records,
                                             const ImageLookup& images, const RunConfig& rc,
                                             std::ostream* csv = nullptr) {
  if (records.empty()) throw DataError("no training records");
  const PcrConfig& cfg = model.config();
  BatchOptions bo{cfg.input_w, cfg.input_h, rc.codec(), rc.flip, rc.flip_pairs};
  std::mt19937_64 rng(cfg.seed);
  const std::size_t bs = rc.batch_size == 0 ? records.size() : std::min(rc.batch_size, records.size());
  const std::size_t chunks = (records.size() + bs - 1) / bs;

  std::vector<Batch> fixed;
  auto chunk = [&](std::size_t c) {
    const auto first = records.begin() + static_cast<std::ptrdiff_t>(c * bs);
    const auto last = records.begin() + static_cast<std::ptrdiff_t>(std::min(records.size(), (c + 1) * bs));
    return std::vector<InstanceRecord>(first, last);
  };
  if (!rc.flip) {
    for (std::size_t c = 0; c < chunks; ++c) fixed.push_back(build_batch(chunk(c), images, bo, rng));
  }

  if (csv) write_loss_header(*csv, cfg);
  std::vector<LossLogRow> log;
  for (std::size_t step = 0; step < rc.steps; ++step) {
    const std::size_t c = step % chunks;
    Batch fresh;
    if (rc.flip) fresh = build_batch(chunk(c), images, bo, rng);
    const Batch& b = rc.flip ? fresh : fixed[c];
    TrainStepResult r = train_step(model, b.images, b.maps, b.weights, rc.lr);
    LossLogRow row{step, r.loss, std::move(r.levels), r.aux};
    if (csv && (step % rc.log_every == 0 || step + 1 == rc.steps)) write_loss_row(*csv, row, cfg);
    log.push_back(std::move(row));
  }
  return log;
}

/// One pose per detection, decoded from the last level's heatmaps in
/// inference mode. The instance score is the mean per-joint peak score.
inline std::vector<PoseResult> infer_detections(PcrModel& model, const std::vector<PersonDetection>& detections,
                                                const ImageLookup& images, std::size_t chunk = 16) {
  const PcrConfig& cfg = model.config();
  std::vector<PoseResult> out;
  NoGradGuard no_grad;
  for (std::size_t first = 0; first < detections.size(); first += chunk) {
    const std::size_t last = std::min(detections.size(), first + chunk);
    std::vector<Tensor> crops;
    std::vector<CropTransform> transforms;
    for (std::size_t i = first; i < last; ++i) {
      const PersonDetection& d = detections[i];
      transforms.push_back(crop_transform(d.bbox, cfg.input_w, cfg.input_h));
      crops.push_back(crop_bilinear(images(d.image_id), transforms.back().to_image, cfg.input_w, cfg.input_h));
    }
    const Tensor maps = model.forward(Var(stack_batch(crops)), Mode::infer).heatmaps.back().value();
    for (std::size_t i = first; i < last; ++i) {
      const DecodedPose p = decode(maps, transforms[i - first].to_image, double(PcrConfig::kOutputStride), i - first);
      PoseResult r{detections[i].image_id, p.keypoints, p.scores, p.instance_score(), detections[i].bbox};
      if (!std::isfinite(r.score)) throw NumericError("non-finite heatmap score");
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace pcr
