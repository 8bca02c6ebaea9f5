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

/// \file run_config.hpp
/// \brief Flat key-value run configuration. Model keys are those of
/// PcrConfig; every other key is listed in RunConfig::apply. Unknown keys are
/// rejected.

#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "pcr/batch.hpp"
#include "pcr/dataset.hpp"
#include "pcr/keypoint_eval.hpp"
#include "pcr/kv.hpp"
#include "pcr/model.hpp"

namespace pcr {

struct RunConfig {
  PcrConfig model;
  double lr = 0.1;
  std::size_t steps = 500;
  std::size_t batch_size = 0;  // 0: full batch
  std::size_t log_every = 1;
  double sigma = 2.0;
  bool flip = false;
  FlipPairs flip_pairs;
  bool hard_negatives = false;
  double hard_negative_score = kHardNegativeScore;
  double pseudo_score = kPseudoLabelScore;
  double nms_threshold = 0.9;
  std::string kappa = "coco";  // "coco" or one positive number for all joints
  std::string train_annotations;
  std::string train_images;
  std::string train_detections;
  std::string out_dir = "run";

  static FlipPairs parse_pairs(const std::string& key, const std::string& value) {
    FlipPairs out;
    if (value.empty()) return out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ConfigError("config key '" + key + "': expected a:b pairs");
      out.emplace_back(kv::parse_number<std::size_t>(key, kv::trim(item.substr(0, colon))),
                       kv::parse_number<std::size_t>(key, kv::trim(item.substr(colon + 1))));
    }
    return out;
  }

  void apply(const std::string& key, const std::string& value) {
    if (model.apply(key, value)) return;
    if (key == "lr") lr = kv::parse_number<double>(key, value);
    else if (key == "steps") steps = kv::parse_number<std::size_t>(key, value);
    else if (key == "batch_size") batch_size = kv::parse_number<std::size_t>(key, value);
    else if (key == "log_every") log_every = kv::parse_number<std::size_t>(key, value);
    else if (key == "sigma") sigma = kv::parse_number<double>(key, value);
    else if (key == "flip") flip = kv::parse_bool(key, value);
    else if (key == "flip_pairs") flip_pairs = parse_pairs(key, value);
    else if (key == "hard_negatives") hard_negatives = kv::parse_bool(key, value);
    else if (key == "hard_negative_score") hard_negative_score = kv::parse_number<double>(key, value);
    else if (key == "pseudo_score") pseudo_score = kv::parse_number<double>(key, value);
    else if (key == "nms_threshold") nms_threshold = kv::parse_number<double>(key, value);
    else if (key == "kappa") kappa = value;
    else if (key == "train_annotations") train_annotations = value;
    else if (key == "train_images") train_images = value;
    else if (key == "train_detections") train_detections = value;
    else if (key == "out_dir") out_dir = value;
    else throw ConfigError("unknown config key '" + key + "'");
  }

  static RunConfig from_kv(const kv::Map& m) {
    RunConfig rc;
    for (const auto& [k, v] : m) rc.apply(k, v);
    rc.model.broadcast_channels();
    return rc;
  }

  static RunConfig from_file(const std::string& path) { return from_kv(kv::parse_file(path)); }

  EvalConfig eval_config() const {
    if (kappa == "coco") {
      if (model.joints != kCocoSigmas.size()) {
        throw ConfigError("kappa = coco needs 17 joints; set a numeric kappa for " + std::to_string(model.joints));
      }
      return EvalConfig::coco();
    }
    const double k = kv::parse_number<double>("kappa", kappa);
    if (!(k > 0.0)) throw ConfigError("kappa must be positive");
    return EvalConfig::uniform(model.joints, k);
  }

  CodecParams codec() const { return {model.heatmap_h(), model.heatmap_w(), double(PcrConfig::kOutputStride), sigma}; }

  void validate() const {
    model.validate();
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and non-negative");
    if (log_every == 0) throw ConfigError("log_every must be positive");
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
    if (flip) validate_flip_pairs(flip_pairs, model.joints);
    if (!(hard_negative_score >= 0.0 && hard_negative_score <= 1.0)) {
      throw ConfigError("hard_negative_score must lie in [0, 1]");
    }
    if (!(nms_threshold > 0.0 && nms_threshold <= 1.0)) throw ConfigError("nms_threshold must lie in (0, 1]");
    eval_config().validate();
  }

  /// Checks every input path of a training run before any work starts.
  void validate_training_paths() const {
    namespace fs = std::filesystem;
    if (train_annotations.empty()) throw ConfigError("train_annotations is not set");
    if (train_images.empty()) throw ConfigError("train_images is not set");
    if (!fs::is_regular_file(train_annotations)) throw DataError("train_annotations not found: " + train_annotations);
    if (!fs::is_directory(train_images)) throw DataError("train_images is not a directory: " + train_images);
    if (hard_negatives && train_detections.empty()) {
      throw ConfigError("hard_negatives = 1 needs train_detections");
    }
    if (!train_detections.empty() && !fs::is_regular_file(train_detections)) {
      throw DataError("train_detections not found: " + train_detections);
    }
    if (out_dir.empty()) throw ConfigError("out_dir is empty");
    const fs::path parent = fs::absolute(out_dir).parent_path();
    if (!fs::is_directory(parent)) throw DataError("parent of out_dir does not exist: " + parent.string());
  }
};

}  // namespace pcr
