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

/// \file dataset.hpp
/// \brief Person-instance records, COCO-format JSON I/O, and the dataset
/// strategies: hard-negative mining, pseudo-label filtering and merging of
/// externally annotated sets.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcr/error.hpp"
#include "pcr/geometry.hpp"
#include "pcr/keypoint_eval.hpp"
#include "pcr/keypoints.hpp"
#include "pcr/kv.hpp"

namespace pcr {

using json = nlohmann::json;

enum class Source { labeled, pseudo, hard_negative, external };

inline const char* to_string(Source s) {
  switch (s) {
    case Source::labeled: return "labeled";
    case Source::pseudo: return "pseudo";
    case Source::hard_negative: return "hard-negative";
    case Source::external: return "external";
  }
  return "labeled";
}

inline Source parse_source(const std::string& s) {
  if (s == "labeled") return Source::labeled;
  if (s == "pseudo") return Source::pseudo;
  if (s == "hard-negative") return Source::hard_negative;
  if (s == "external") return Source::external;
  throw DataError("unknown source tag '" + s + "'");
}

struct ImageInfo {
  std::int64_t id = 0;
  std::string file_name;
  std::size_t width = 0;
  std::size_t height = 0;
  friend bool operator==(const ImageInfo&, const ImageInfo&) = default;
};

struct InstanceRecord {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  BBox bbox;
  KeypointSet keypoints;
  Source source = Source::labeled;
  std::vector<double> joint_scores;  // empty unless produced from predictions
  std::optional<double> area;        // segmentation area when the file provides one
  bool iscrowd = false;

  double effective_area() const { return area ? *area : bbox.area(); }
  friend bool operator==(const InstanceRecord&, const InstanceRecord&) = default;
};

struct Dataset {
  std::size_t joints = 17;
  std::vector<std::string> joint_names;  // may be empty
  std::vector<ImageInfo> images;
  std::vector<InstanceRecord> records;

  const ImageInfo* find_image(std::int64_t id) const {
    auto it = std::find_if(images.begin(), images.end(), [&](const ImageInfo& i) { return i.id == id; });
    return it == images.end() ? nullptr : &*it;
  }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------------------
// JSON I/O

namespace detail {

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": malformed JSON: " + e.what());
  }
}

inline void write_json_file(const json& j, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << j.dump(1) << "\n";
  if (!os) throw DataError("write failed for " + path);
}

inline std::string where(const std::string& array, std::size_t i) { return array + "[" + std::to_string(i) + "]"; }

template <class T>
T field(const json& obj, const char* key, const std::string& ctx) {
  if (!obj.is_object() || !obj.contains(key)) throw DataError(ctx + ": missing '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(ctx + ": field '" + std::string(key) + "' has the wrong type");
  }
}

inline BBox parse_bbox(const json& obj, const std::string& ctx) {
  const auto v = field<std::vector<double>>(obj, "bbox", ctx);
  if (v.size() != 4) throw DataError(ctx + ": bbox must have 4 numbers");
  if (v[2] < 0.0 || v[3] < 0.0) throw DataError(ctx + ": bbox extents must be non-negative");
  return {v[0], v[1], v[2], v[3]};
}

inline json bbox_json(const BBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

/// Triplets (x, y, third); returns the raw third values.
inline KeypointSet parse_triplets(const json& obj, std::size_t joints, const std::string& ctx,
                                  std::vector<double>* thirds) {
  const auto v = field<std::vector<double>>(obj, "keypoints", ctx);
  if (v.size() != 3 * joints) {
    throw DataError(ctx + ": keypoint array has " + std::to_string(v.size()) + " values, expected " +
                    std::to_string(3 * joints));
  }
  KeypointSet kps(joints);
  for (std::size_t j = 0; j < joints; ++j) {
    kps[j].x = v[3 * j];
    kps[j].y = v[3 * j + 1];
    if (thirds) thirds->push_back(v[3 * j + 2]);
  }
  return kps;
}

}  // namespace detail

/// Parses a COCO person-keypoint annotation document. `joints == 0` takes
/// the joint count from the first category, else from the first annotation.
inline Dataset parse_annotations(const json& doc, std::size_t joints = 0, const std::string& origin = "annotations") {
  if (!doc.is_object()) throw DataError(origin + ": top level must be an object");
  Dataset ds;
  if (doc.contains("categories") && doc["categories"].is_array() && !doc["categories"].empty()) {
    const json& cat = doc["categories"][0];
    if (cat.contains("keypoints") && cat["keypoints"].is_array()) {
      ds.joint_names = cat["keypoints"].get<std::vector<std::string>>();
    }
  }
  const json anns = doc.contains("annotations") ? doc["annotations"] : json::array();
  if (!anns.is_array()) throw DataError(origin + ": 'annotations' must be an array");
  if (joints == 0) {
    if (!ds.joint_names.empty()) joints = ds.joint_names.size();
    else if (!anns.empty() && anns[0].contains("keypoints") && anns[0]["keypoints"].is_array())
      joints = anns[0]["keypoints"].size() / 3;
    else joints = 17;
  }
  ds.joints = joints;
  if (!ds.joint_names.empty() && ds.joint_names.size() != joints) ds.joint_names.clear();

  if (doc.contains("images")) {
    if (!doc["images"].is_array()) throw DataError(origin + ": 'images' must be an array");
    for (std::size_t i = 0; i < doc["images"].size(); ++i) {
      const json& im = doc["images"][i];
      const std::string ctx = origin + ": " + detail::where("images", i);
      ImageInfo info;
      info.id = detail::field<std::int64_t>(im, "id", ctx);
      info.file_name = im.value("file_name", std::string{});
      info.width = im.value("width", std::size_t{0});
      info.height = im.value("height", std::size_t{0});
      ds.images.push_back(std::move(info));
    }
  }

  for (std::size_t i = 0; i < anns.size(); ++i) {
    const json& a = anns[i];
    const std::string ctx = origin + ": " + detail::where("annotations", i);
    InstanceRecord r;
    r.id = a.value("id", static_cast<std::int64_t>(i + 1));
    r.image_id = detail::field<std::int64_t>(a, "image_id", ctx);
    r.bbox = detail::parse_bbox(a, ctx);
    std::vector<double> vis;
    r.keypoints = detail::parse_triplets(a, joints, ctx, &vis);
    for (std::size_t j = 0; j < joints; ++j) {
      const double v = vis[j];
      if (v != 0.0 && v != 1.0 && v != 2.0) throw DataError(ctx + ": visibility flag must be 0, 1 or 2");
      r.keypoints[j].v = static_cast<int>(v);
    }
    if (a.contains("area")) r.area = detail::field<double>(a, "area", ctx);
    r.iscrowd = a.value("iscrowd", 0) != 0;
    if (a.contains("source")) r.source = parse_source(detail::field<std::string>(a, "source", ctx));
    if (a.contains("keypoint_scores")) {
      r.joint_scores = detail::field<std::vector<double>>(a, "keypoint_scores", ctx);
      if (r.joint_scores.size() != joints) throw DataError(ctx + ": keypoint_scores length mismatch");
    }
    ds.records.push_back(std::move(r));
  }
  return ds;
}

inline Dataset load_annotations(const std::string& path, std::size_t joints = 0) {
  return parse_annotations(detail::read_json_file(path), joints, path);
}

inline json annotations_json(const Dataset& ds) {
  json images = json::array();
  for (const ImageInfo& im : ds.images) {
    images.push_back({{"id", im.id}, {"file_name", im.file_name}, {"width", im.width}, {"height", im.height}});
  }
  json anns = json::array();
  for (const InstanceRecord& r : ds.records) {
    if (r.keypoints.size() != ds.joints) throw DataError("record " + std::to_string(r.id) + ": joint count mismatch");
    json kp = json::array();
    for (const Keypoint& k : r.keypoints) {
      kp.push_back(k.x);
      kp.push_back(k.y);
      kp.push_back(k.v);
    }
    json a = {{"id", r.id},
              {"image_id", r.image_id},
              {"category_id", 1},
              {"bbox", detail::bbox_json(r.bbox)},
              {"keypoints", kp},
              {"num_keypoints", labeled_count(r.keypoints)},
              {"iscrowd", r.iscrowd ? 1 : 0}};
    if (r.area) a["area"] = *r.area;
    if (r.source != Source::labeled) a["source"] = to_string(r.source);
    if (!r.joint_scores.empty()) a["keypoint_scores"] = r.joint_scores;
    anns.push_back(std::move(a));
  }
  std::vector<std::string> names = ds.joint_names;
  if (names.size() != ds.joints) {
    names.clear();
    for (std::size_t j = 0; j < ds.joints; ++j) names.push_back("joint_" + std::to_string(j));
  }
  json cats = json::array({{{"id", 1}, {"name", "person"}, {"keypoints", names}}});
  return {{"images", images}, {"annotations", anns}, {"categories", cats}};
}

inline void save_annotations(const Dataset& ds, const std::string& path) {
  detail::write_json_file(annotations_json(ds), path);
}

/// COCO detection results: [{image_id, bbox, score[, category_id]}]. Entries
/// whose category is not 1 (person) are skipped.
inline std::vector<PersonDetection> parse_detections(const json& doc, const std::string& origin = "detections") {
  if (!doc.is_array()) throw DataError(origin + ": detections must be a JSON array");
  std::vector<PersonDetection> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::string ctx = origin + ": " + detail::where("detections", i);
    PersonDetection d;
    d.image_id = detail::field<std::int64_t>(doc[i], "image_id", ctx);
    d.bbox = detail::parse_bbox(doc[i], ctx);
    d.score = detail::field<double>(doc[i], "score", ctx);
    if (!std::isfinite(d.score)) throw DataError(ctx + ": non-finite score");
    d.category_id = doc[i].value("category_id", std::int64_t{1});
    if (d.category_id != 1) continue;
    out.push_back(d);
  }
  return out;
}

inline std::vector<PersonDetection> load_detections(const std::string& path) {
  return parse_detections(detail::read_json_file(path), path);
}

inline json detections_json(const std::vector<PersonDetection>& dets) {
  json out = json::array();
  for (const auto& d : dets) {
    out.push_back({{"image_id", d.image_id}, {"category_id", d.category_id}, {"bbox", detail::bbox_json(d.bbox)},
                   {"score", d.score}});
  }
  return out;
}

inline void save_detections(const std::vector<PersonDetection>& dets, const std::string& path) {
  detail::write_json_file(detections_json(dets), path);
}

/// COCO keypoint results: [{image_id, category_id, keypoints: [x, y, s, ...],
/// score}], plus an optional "bbox" naming the source detection.
inline std::vector<PoseResult> parse_results(const json& doc, std::size_t joints = 0,
                                             const std::string& origin = "results") {
  if (!doc.is_array()) throw DataError(origin + ": results must be a JSON array");
  if (joints == 0 && !doc.empty() && doc[0].contains("keypoints") && doc[0]["keypoints"].is_array()) {
    joints = doc[0]["keypoints"].size() / 3;
  }
  std::vector<PoseResult> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::string ctx = origin + ": " + detail::where("results", i);
    PoseResult r;
    r.image_id = detail::field<std::int64_t>(doc[i], "image_id", ctx);
    r.keypoints = detail::parse_triplets(doc[i], joints, ctx, &r.joint_scores);
    for (Keypoint& k : r.keypoints) k.v = 2;
    r.score = detail::field<double>(doc[i], "score", ctx);
    if (!std::isfinite(r.score)) throw DataError(ctx + ": non-finite score");
    if (doc[i].contains("bbox")) r.bbox = detail::parse_bbox(doc[i], ctx);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<PoseResult> load_results(const std::string& path, std::size_t joints = 0) {
  return parse_results(detail::read_json_file(path), joints, path);
}

inline json results_json(const std::vector<PoseResult>& results) {
  json out = json::array();
  for (const PoseResult& r : results) {
    json kp = json::array();
    for (std::size_t j = 0; j < r.keypoints.size(); ++j) {
      kp.push_back(r.keypoints[j].x);
      kp.push_back(r.keypoints[j].y);
      kp.push_back(j < r.joint_scores.size() ? r.joint_scores[j] : 1.0);
    }
    json e = {{"image_id", r.image_id}, {"category_id", 1}, {"keypoints", kp}, {"score", r.score}};
    if (r.bbox) e["bbox"] = detail::bbox_json(*r.bbox);
    out.push_back(std::move(e));
  }
  return out;
}

inline void save_results(const std::vector<PoseResult>& results, const std::string& path) {
  detail::write_json_file(results_json(results), path);
}

/// Ground truth for evaluation. Hard-negative records are excluded.
inline std::vector<GroundTruthInstance> ground_truth(const Dataset& ds) {
  std::vector<GroundTruthInstance> out;
  for (const InstanceRecord& r : ds.records) {
    if (r.source == Source::hard_negative) continue;
    out.push_back({r.image_id, r.keypoints, r.effective_area(), r.bbox, r.iscrowd});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hard-negative mining

inline constexpr double kHardNegativeScore = 0.5;

/// Detections scoring >= score_thr whose box has zero IoU with every
/// ground-truth box of its image. Emitted records carry no labeled joints and
/// train against an all-zero heatmap target.
inline std::vector<InstanceRecord> mine_hard_negatives(const std::vector<PersonDetection>& detections,
                                                       const std::vector<InstanceRecord>& gt, std::size_t joints,
                                                       double score_thr = kHardNegativeScore) {
  if (!(score_thr >= 0.0 && score_thr <= 1.0)) throw ConfigError("hard-negative score threshold must lie in [0, 1]");
  std::map<std::int64_t, std::vector<BBox>> boxes;
  std::int64_t next_id = 1;
  for (const InstanceRecord& r : gt) {
    if (r.source != Source::hard_negative) boxes[r.image_id].push_back(r.bbox);
    next_id = std::max(next_id, r.id + 1);
  }
  std::vector<InstanceRecord> out;
  for (const PersonDetection& d : detections) {
    if (d.score < score_thr) continue;
    const auto it = boxes.find(d.image_id);
    const bool overlaps = it != boxes.end() && std::any_of(it->second.begin(), it->second.end(),
                                                             [&](const BBox& g) { return iou(d.bbox, g) > 0.0; });
    if (overlaps) continue;
    InstanceRecord r;
    r.id = next_id++;
    r.image_id = d.image_id;
    r.bbox = d.bbox;
    r.keypoints.assign(joints, Keypoint{});
    r.source = Source::hard_negative;
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pseudo labels

inline constexpr double kPseudoLabelScore = 0.9;

/// Joints scoring strictly above keep_thr become visible labels; the rest are
/// unlabeled with zeroed coordinates. Records with no kept joint are dropped.
/// Scores are carried along so the filter is idempotent.
inline std::vector<InstanceRecord> filter_pseudo_labels(const std::vector<InstanceRecord>& records,
                                                        double keep_thr = kPseudoLabelScore) {
  std::vector<InstanceRecord> out;
  for (const InstanceRecord& in : records) {
    if (in.joint_scores.size() != in.keypoints.size()) {
      throw DataError("pseudo-label record " + std::to_string(in.id) + " lacks per-joint scores");
    }
    InstanceRecord r = in;
    r.source = Source::pseudo;
    std::size_t kept = 0;
    for (std::size_t j = 0; j < r.keypoints.size(); ++j) {
      if (r.joint_scores[j] > keep_thr) {
        r.keypoints[j].v = 2;
        ++kept;
      } else {
        r.keypoints[j] = Keypoint{};
      }
    }
    if (kept) out.push_back(std::move(r));
  }
  return out;
}

/// Predictions to candidate records: the box is the result's detection box,
/// else the extent of its joints.
inline std::vector<InstanceRecord> records_from_results(const std::vector<PoseResult>& results) {
  std::vector<InstanceRecord> out;
  std::int64_t id = 1;
  for (const PoseResult& p : results) {
    InstanceRecord r;
    r.id = id++;
    r.image_id = p.image_id;
    r.keypoints = p.keypoints;
    r.joint_scores = p.joint_scores;
    if (r.joint_scores.size() != r.keypoints.size()) r.joint_scores.assign(r.keypoints.size(), p.score);
    if (p.bbox) {
      r.bbox = *p.bbox;
    } else if (!p.keypoints.empty()) {
      double x0 = p.keypoints[0].x, x1 = x0, y0 = p.keypoints[0].y, y1 = y0;
      for (const Keypoint& k : p.keypoints) {
        x0 = std::min(x0, k.x), x1 = std::max(x1, k.x), y0 = std::min(y0, k.y), y1 = std::max(y1, k.y);
      }
      r.bbox = {x0, y0, x1 - x0, y1 - y0};
    }
    r.source = Source::pseudo;
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<InstanceRecord> filter_pseudo_labels(const std::vector<PoseResult>& results,
                                                        double keep_thr = kPseudoLabelScore) {
  return filter_pseudo_labels(records_from_results(results), keep_thr);
}

// ---------------------------------------------------------------------------
// Merging external datasets

/// Entry i gives the primary joint index for external joint i, or nothing to
/// discard it. External joints past the end are discarded.
using CategoryMap = std::vector<std::optional<std::size_t>>;

inline void validate_category_map(const CategoryMap& map, std::size_t primary_joints) {
  std::set<std::size_t> seen;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (!map[i]) continue;
    if (*map[i] >= primary_joints) {
      throw ConfigError("category map: external joint " + std::to_string(i) + " maps to " + std::to_string(*map[i]) +
                        ", outside [0, " + std::to_string(primary_joints) + ")");
    }
    if (!seen.insert(*map[i]).second) {
      throw ConfigError("category map: primary joint " + std::to_string(*map[i]) + " is targeted twice");
    }
  }
}

/// `external_index = primary_index` lines; the value `discard` (or `-`) drops
/// the joint.
inline CategoryMap parse_category_map(const kv::Map& m) {
  CategoryMap out;
  for (const auto& [key, value] : m) {
    const auto src = kv::parse_number<std::size_t>("category map key", key);
    if (src >= 4096) throw ConfigError("category map: external index " + key + " is implausibly large");
    if (out.size() <= src) out.resize(src + 1);
    if (value == "discard" || value == "-") continue;
    out[src] = kv::parse_number<std::size_t>(key, value);
  }
  return out;
}

inline kv::Map category_map_kv(const CategoryMap& map) {
  kv::Map m;
  for (std::size_t i = 0; i < map.size(); ++i) m[std::to_string(i)] = map[i] ? std::to_string(*map[i]) : "discard";
  return m;
}

/// 14-joint AI Challenger layout to 17-joint COCO layout. UNVERIFIED
/// placeholder: the twelve limb joints map to their COCO counterparts, while
/// head-top (12) and neck (13) have no COCO equivalent and are discarded.
inline CategoryMap aic_to_coco_default() {
  return {6, 8, 10, 5, 7, 9, 12, 14, 16, 11, 13, 15, std::nullopt, std::nullopt};
}

/// Primary records unchanged, then external records remapped and tagged
/// external.
inline std::vector<InstanceRecord> merge_records(const std::vector<InstanceRecord>& primary,
                                                 const std::vector<InstanceRecord>& external, const CategoryMap& map,
                                                 std::size_t primary_joints) {
  validate_category_map(map, primary_joints);
  std::vector<InstanceRecord> out = primary;
  for (const InstanceRecord& e : external) {
    InstanceRecord r = e;
    r.source = Source::external;
    r.keypoints.assign(primary_joints, Keypoint{});
    if (!e.joint_scores.empty()) r.joint_scores.assign(primary_joints, 0.0);
    for (std::size_t j = 0; j < e.keypoints.size() && j < map.size(); ++j) {
      if (!map[j]) continue;
      r.keypoints[*map[j]] = e.keypoints[j];
      if (!e.joint_scores.empty()) r.joint_scores[*map[j]] = e.joint_scores[j];
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Dataset-level merge. Images are unioned by id; an id present in both with
/// different metadata is an error.
inline Dataset merge_datasets(const Dataset& primary, const Dataset& external, const CategoryMap& map) {
  Dataset out;
  out.joints = primary.joints;
  out.joint_names = primary.joint_names;
  out.images = primary.images;
  for (const ImageInfo& im : external.images) {
    if (const ImageInfo* have = out.find_image(im.id)) {
      if (!(*have == im)) throw DataError("merge: image id " + std::to_string(im.id) + " differs between datasets");
      continue;
    }
    out.images.push_back(im);
  }
  out.records = merge_records(primary.records, external.records, map, primary.joints);
  return out;
}

}  // namespace pcr
