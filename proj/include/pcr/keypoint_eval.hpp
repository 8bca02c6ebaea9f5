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

/// \file keypoint_eval.hpp
/// \brief Object keypoint similarity, OKS-based NMS and COCO-style AP/AR.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "pcr/error.hpp"
#include "pcr/geometry.hpp"
#include "pcr/keypoints.hpp"

namespace pcr {

struct PersonDetection {
  std::int64_t image_id = 0;
  BBox bbox;
  double score = 0.0;
  std::int64_t category_id = 1;
};

struct PoseResult {
  std::int64_t image_id = 0;
  KeypointSet keypoints;
  std::vector<double> joint_scores;
  double score = 0.0;
  std::optional<BBox> bbox;  // detection box the pose was decoded from

  /// Extent of all keypoints, as COCO assigns to keypoint results.
  double keypoint_extent_area() const {
    if (keypoints.empty()) return 0.0;
    auto [x0, x1] = std::minmax_element(keypoints.begin(), keypoints.end(),
                                        [](const Keypoint& a, const Keypoint& b) { return a.x < b.x; });
    auto [y0, y1] = std::minmax_element(keypoints.begin(), keypoints.end(),
                                        [](const Keypoint& a, const Keypoint& b) { return a.y < b.y; });
    return (x1->x - x0->x) * (y1->y - y0->y);
  }

  /// Scale used when this result is the reference of an OKS comparison.
  double area() const { return bbox ? bbox->area() : keypoint_extent_area(); }
};

struct GroundTruthInstance {
  std::int64_t image_id = 0;
  KeypointSet keypoints;
  double area = 0.0;
  BBox bbox;
  bool iscrowd = false;
};

/// COCO per-joint sigmas; the falloff constant is kappa_j = 2 sigma_j.
inline constexpr std::array<double, 17> kCocoSigmas{.26, .25, .25, .35, .35, .79, .79, .72, .72,
                                                    .62, .62, 1.07, 1.07, .87, .87, .89, .89};

struct AreaRange {
  double lo = 0.0;
  double hi = 1e10;
};

struct EvalConfig {
  std::vector<double> kappas;
  std::vector<double> thresholds;
  AreaRange all{0.0, 1e10};
  AreaRange medium{32.0 * 32.0, 96.0 * 96.0};
  AreaRange large{96.0 * 96.0, 1e10};
  std::size_t max_dets = 20;

  /// 0.50, 0.55, ..., 0.95 computed as numpy.linspace does.
  static std::vector<double> default_thresholds() {
    std::vector<double> t(10);
    const double step = (0.95 - 0.5) / 9.0;
    for (std::size_t i = 0; i < 10; ++i) t[i] = 0.5 + static_cast<double>(i) * step;
    t.back() = 0.95;
    return t;
  }

  static EvalConfig coco() {
    EvalConfig c;
    for (double s : kCocoSigmas) c.kappas.push_back(2.0 * s);
    c.thresholds = default_thresholds();
    return c;
  }

  /// Same falloff for every joint.
  static EvalConfig uniform(std::size_t joints, double kappa = 1.0) {
    EvalConfig c;
    c.kappas.assign(joints, kappa);
    c.thresholds = default_thresholds();
    return c;
  }

  void validate() const {
    if (kappas.empty()) throw ConfigError("EvalConfig: no falloff constants");
    for (double k : kappas) {
      if (!(k > 0.0)) throw ConfigError("EvalConfig: falloff constants must be positive");
    }
    if (thresholds.size() != 10) throw ConfigError("EvalConfig: expected 10 OKS thresholds");
  }
};

/// Mean over labeled ground-truth joints of exp(-d^2 / (2 s^2 kappa^2)),
/// with s^2 = gt_area.
inline double oks(const KeypointSet& pred, const KeypointSet& gt, double gt_area, std::span<const double> kappas) {
  if (pred.size() != gt.size() || gt.size() != kappas.size()) {
    throw ShapeError("oks: joint count mismatch (pred " + std::to_string(pred.size()) + ", gt " +
                     std::to_string(gt.size()) + ", kappas " + std::to_string(kappas.size()) + ")");
  }
  const double s2 = gt_area + std::numeric_limits<double>::epsilon();
  double acc = 0.0;
  std::size_t labeled = 0;
  for (std::size_t j = 0; j < gt.size(); ++j) {
    if (!gt[j].labeled()) continue;
    const double dx = pred[j].x - gt[j].x, dy = pred[j].y - gt[j].y;
    acc += std::exp(-(dx * dx + dy * dy) / (2.0 * s2 * kappas[j] * kappas[j]));
    ++labeled;
  }
  if (labeled == 0) throw UndefinedOksError();
  return acc / static_cast<double>(labeled);
}

/// Similarity between two predictions: every joint counts and the scale is
/// the mean of the two areas.
inline double pose_similarity(const PoseResult& a, const PoseResult& b, std::span<const double> kappas) {
  if (a.keypoints.size() != b.keypoints.size() || a.keypoints.size() != kappas.size()) {
    throw ShapeError("pose_similarity: joint count mismatch");
  }
  const double s2 = 0.5 * (a.area() + b.area()) + std::numeric_limits<double>::epsilon();
  double acc = 0.0;
  for (std::size_t j = 0; j < kappas.size(); ++j) {
    const double dx = a.keypoints[j].x - b.keypoints[j].x, dy = a.keypoints[j].y - b.keypoints[j].y;
    acc += std::exp(-(dx * dx + dy * dy) / (2.0 * s2 * kappas[j] * kappas[j]));
  }
  return kappas.empty() ? 0.0 : acc / static_cast<double>(kappas.size());
}

/// Greedy OKS suppression within each image. Results are visited by
/// descending score (ties keep input order); one is kept iff its similarity
/// to every kept result of the same image is <= threshold. Output is in
/// visiting order.
inline std::vector<PoseResult> oks_nms(const std::vector<PoseResult>& results, double threshold,
                                       std::span<const double> kappas) {
  if (!(threshold > 0.0) || threshold > 1.0) throw ConfigError("oks_nms: threshold must lie in (0, 1]");
  std::vector<std::size_t> order(results.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return results[a].score > results[b].score; });
  std::map<std::int64_t, std::vector<std::size_t>> kept_by_image;
  std::vector<PoseResult> out;
  for (std::size_t i : order) {
    auto& kept = kept_by_image[results[i].image_id];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return pose_similarity(results[i], results[k], kappas) > threshold;
    });
    if (suppressed) continue;
    kept.push_back(i);
    out.push_back(results[i]);
  }
  return out;
}

/// Each value is -1 when its area range holds no ground truth.
struct Metrics {
  double ap = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ap_medium = 0.0;
  double ap_large = 0.0;
  double ar = 0.0;
};

namespace detail {

// COCO keypoint OKS including the fallback for ground truth without labeled
// joints (distance to a box grown by its own extent on every side).
inline double coco_oks(const PoseResult& d, const GroundTruthInstance& g, std::span<const double> kappas) {
  const std::size_t J = kappas.size();
  if (d.keypoints.size() != J || g.keypoints.size() != J) throw ShapeError("evaluate_ap: joint count mismatch");
  const std::size_t k1 = labeled_count(g.keypoints);
  const double s2 = g.area + std::numeric_limits<double>::epsilon();
  const double x0 = g.bbox.x - g.bbox.w, x1 = g.bbox.x + 2 * g.bbox.w;
  const double y0 = g.bbox.y - g.bbox.h, y1 = g.bbox.y + 2 * g.bbox.h;
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < J; ++j) {
    double dx, dy;
    if (k1 > 0) {
      if (!g.keypoints[j].labeled()) continue;
      dx = d.keypoints[j].x - g.keypoints[j].x;
      dy = d.keypoints[j].y - g.keypoints[j].y;
    } else {
      const double xd = d.keypoints[j].x, yd = d.keypoints[j].y;
      dx = std::max(0.0, x0 - xd) + std::max(0.0, xd - x1);
      dy = std::max(0.0, y0 - yd) + std::max(0.0, yd - y1);
    }
    acc += std::exp(-(dx * dx + dy * dy) / (2.0 * s2 * kappas[j] * kappas[j]));
    ++count;
  }
  return count ? acc / static_cast<double>(count) : 0.0;
}

struct ImageMatch {
  std::vector<double> scores;                  // per kept detection, descending
  std::vector<std::vector<char>> matched;      // [threshold][det]
  std::vector<std::vector<char>> ignored;      // [threshold][det]
  std::size_t non_ignored_gt = 0;
};

inline ImageMatch match_image(std::vector<const PoseResult*> dets, std::vector<const GroundTruthInstance*> gts,
                              const EvalConfig& cfg, const AreaRange& range) {
  const std::size_t T = cfg.thresholds.size();
  std::stable_sort(dets.begin(), dets.end(), [](const PoseResult* a, const PoseResult* b) { return a->score > b->score; });
  if (dets.size() > cfg.max_dets) dets.resize(cfg.max_dets);

  auto gt_ignored = [&](const GroundTruthInstance* g) {
    return g->iscrowd || labeled_count(g->keypoints) == 0 || g->area < range.lo || g->area > range.hi;
  };
  std::stable_sort(gts.begin(), gts.end(), [&](const GroundTruthInstance* a, const GroundTruthInstance* b) {
    return !gt_ignored(a) && gt_ignored(b);
  });
  std::vector<char> g_ig(gts.size());
  ImageMatch m;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    g_ig[g] = gt_ignored(gts[g]);
    if (!g_ig[g]) ++m.non_ignored_gt;
  }

  std::vector<std::vector<double>> sim(dets.size(), std::vector<double>(gts.size()));
  for (std::size_t d = 0; d < dets.size(); ++d) {
    for (std::size_t g = 0; g < gts.size(); ++g) sim[d][g] = coco_oks(*dets[d], *gts[g], cfg.kappas);
  }

  m.matched.assign(T, std::vector<char>(dets.size(), 0));
  m.ignored.assign(T, std::vector<char>(dets.size(), 0));
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<char> g_taken(gts.size(), 0);
    for (std::size_t d = 0; d < dets.size(); ++d) {
      double best = std::min(cfg.thresholds[t], 1.0 - 1e-10);
      long hit = -1;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (g_taken[g] && !gts[g]->iscrowd) continue;
        if (hit > -1 && !g_ig[static_cast<std::size_t>(hit)] && g_ig[g]) break;
        if (sim[d][g] < best) continue;
        best = sim[d][g];
        hit = static_cast<long>(g);
      }
      if (hit < 0) continue;
      m.matched[t][d] = 1;
      m.ignored[t][d] = g_ig[static_cast<std::size_t>(hit)];
      g_taken[static_cast<std::size_t>(hit)] = 1;
    }
    for (std::size_t d = 0; d < dets.size(); ++d) {
      const double a = dets[d]->keypoint_extent_area();
      if (!m.matched[t][d] && (a < range.lo || a > range.hi)) m.ignored[t][d] = 1;
    }
  }
  for (const PoseResult* d : dets) m.scores.push_back(d->score);
  return m;
}

struct RangeSummary {
  std::vector<double> ap;      // per threshold, -1 when no ground truth
  std::vector<double> recall;  // per threshold, -1 when no ground truth
};

inline RangeSummary accumulate(const std::vector<ImageMatch>& images, std::size_t T) {
  RangeSummary s{std::vector<double>(T, -1.0), std::vector<double>(T, -1.0)};
  std::size_t npig = 0;
  std::vector<double> scores;
  std::vector<std::pair<std::size_t, std::size_t>> where;  // (image, det)
  for (std::size_t i = 0; i < images.size(); ++i) {
    npig += images[i].non_ignored_gt;
    for (std::size_t d = 0; d < images[i].scores.size(); ++d) {
      scores.push_back(images[i].scores[d]);
      where.emplace_back(i, d);
    }
  }
  if (npig == 0) return s;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Recall sample points 0, 0.01, ..., 1 computed as numpy.linspace does.
  std::array<double, 101> rec_thr{};
  for (std::size_t r = 0; r < 101; ++r) rec_thr[r] = static_cast<double>(r) * (1.0 / 100.0);
  rec_thr[100] = 1.0;

  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t nd = order.size();
    std::vector<double> rc(nd), pr(nd);
    double tp = 0.0, fp = 0.0;
    for (std::size_t k = 0; k < nd; ++k) {
      const auto [img, det] = where[order[k]];
      if (!images[img].ignored[t][det]) {
        if (images[img].matched[t][det]) tp += 1.0;
        else fp += 1.0;
      }
      rc[k] = tp / static_cast<double>(npig);
      pr[k] = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
    }
    s.recall[t] = nd ? rc.back() : 0.0;
    for (std::size_t k = nd; k-- > 1;) {
      if (pr[k] > pr[k - 1]) pr[k - 1] = pr[k];
    }
    double acc = 0.0;
    for (double r : rec_thr) {
      const auto it = std::lower_bound(rc.begin(), rc.end(), r);
      if (it != rc.end()) acc += pr[static_cast<std::size_t>(it - rc.begin())];
    }
    s.ap[t] = acc / 101.0;
  }
  return s;
}

/// Mean over entries computed with ground truth present; -1 when there are none.
inline double mean_present(const std::vector<double>& v, std::optional<std::size_t> only = std::nullopt) {
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (only && i != *only) continue;
    if (v[i] < 0.0) continue;
    acc += v[i];
    ++n;
  }
  return n ? acc / static_cast<double>(n) : -1.0;
}

}  // namespace detail

/// COCO keypoint protocol: per-image greedy matching of score-ordered
/// detections (top max_dets) to ground truth by OKS at each threshold,
/// 101-point interpolated precision, averaged over the thresholds. Crowd and
/// keypoint-less ground truth are ignored. Metrics with no ground truth
/// report 0.
inline Metrics evaluate_ap(const std::vector<PoseResult>& results, const std::vector<GroundTruthInstance>& gts,
                           const EvalConfig& cfg) {
  cfg.validate();
  std::map<std::int64_t, std::pair<std::vector<const PoseResult*>, std::vector<const GroundTruthInstance*>>> images;
  for (const auto& r : results) images[r.image_id].first.push_back(&r);
  for (const auto& g : gts) images[g.image_id].second.push_back(&g);

  auto summarise = [&](const AreaRange& range) {
    std::vector<detail::ImageMatch> matches;
    for (auto& [_, v] : images) matches.push_back(detail::match_image(v.first, v.second, cfg, range));
    return detail::accumulate(matches, cfg.thresholds.size());
  };

  const detail::RangeSummary all = summarise(cfg.all);
  const detail::RangeSummary med = summarise(cfg.medium);
  const detail::RangeSummary lrg = summarise(cfg.large);
  auto index_of = [&](double thr) -> std::size_t {
    for (std::size_t i = 0; i < cfg.thresholds.size(); ++i) {
      if (std::abs(cfg.thresholds[i] - thr) < 1e-9) return i;
    }
    throw ConfigError("EvalConfig: threshold grid lacks " + std::to_string(thr));
  };
  Metrics m;
  m.ap = detail::mean_present(all.ap);
  m.ap50 = detail::mean_present(all.ap, index_of(0.5));
  m.ap75 = detail::mean_present(all.ap, index_of(0.75));
  m.ap_medium = detail::mean_present(med.ap);
  m.ap_large = detail::mean_present(lrg.ap);
  m.ar = detail::mean_present(all.recall);
  return m;
}

}  // namespace pcr
