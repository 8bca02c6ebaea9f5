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


#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pcr/keypoint_eval.hpp"

namespace pcr {
namespace {

TEST(Iou, HandCases) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {1, 1, 2, 2}), 1.0 / 7.0);
  EXPECT_EQ(iou({0, 0, 2, 2}, {2, 0, 2, 2}), 0.0);
  EXPECT_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
  EXPECT_EQ(iou({0, 0, 0, 0}, {0, 0, 0, 0}), 0.0);
}

TEST(Oks, SingleJointAtOneSigmaGivesExpMinusOne) {
  // area 100, kappa 0.5: d^2 = 2 * 100 * 0.25 = 50
  const std::vector<double> k{0.5};
  EXPECT_NEAR(oks({{5.0, 5.0, 2}}, {{0.0, 0.0, 2}}, 100.0, k), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(std::exp(-1.0), 0.3679, 1e-4);
}

TEST(Oks, IdenticalPosesScoreOneAndUnlabeledJointsDoNotCount) {
  const std::vector<double> k(3, 0.1);
  const KeypointSet gt{{1, 2, 2}, {3, 4, 1}, {9, 9, 0}};
  const KeypointSet pred{{1, 2, 2}, {3, 4, 2}, {500, 500, 2}};
  EXPECT_EQ(oks(pred, gt, 50.0, k), 1.0);
  EXPECT_THROW((void)oks(pred, KeypointSet(3), 50.0, k), UndefinedOksError);
  EXPECT_THROW((void)oks(pred, KeypointSet(2), 50.0, k), ShapeError);
}

TEST(Oks, SimilarityUsesMeanAreaOverAllJoints) {
  PoseResult a{1, {{0, 0, 2}, {10, 0, 2}}, {}, 0.9, BBox{0, 0, 10, 10}};
  PoseResult b{1, {{3, 4, 2}, {10, 0, 2}}, {}, 0.8, BBox{0, 0, 20, 20}};
  const std::vector<double> k{1.0, 1.0};
  const double s2 = 250.0 + std::numeric_limits<double>::epsilon();
  EXPECT_DOUBLE_EQ(pose_similarity(a, b, k), (std::exp(-25.0 / (2.0 * s2)) + 1.0) / 2.0);
  EXPECT_DOUBLE_EQ(pose_similarity(a, b, k), pose_similarity(b, a, k));
  a.bbox.reset();
  EXPECT_EQ(a.area(), 0.0);  // collinear keypoints
}

TEST(OksNms, MatchesBruteForceOracle) {
  std::mt19937_64 rng(21);
  const std::vector<double> k{0.3, 0.5, 0.7};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t total_suppressed = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    std::vector<PoseResult> rs;
    for (std::size_t i = 0; i < n; ++i) {
      PoseResult r;
      r.image_id = static_cast<std::int64_t>(rng() % 3);
      const double cx = 20.0 * std::floor(3.0 * u(rng)), cy = 20.0 * std::floor(2.0 * u(rng));
      for (int j = 0; j < 3; ++j) r.keypoints.push_back({cx + 6.0 * u(rng), cy + 6.0 * u(rng), 2});
      r.score = std::floor(8.0 * u(rng)) / 8.0;  // ties exercise the ordering rule
      if (u(rng) < 0.5) r.bbox = BBox{cx, cy, 10.0 + 20.0 * u(rng), 10.0 + 20.0 * u(rng)};
      rs.push_back(r);
    }
    const double thr = 0.05 + 0.9 * u(rng);
    const auto got = oks_nms(rs, thr, k);
    const auto want = oracle::nms_indices(rs, thr, k);
    ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
    for (std::size_t i = 0; i < got.size(); ++i) {
      ASSERT_EQ(got[i].keypoints, rs[want[i]].keypoints) << "trial " << trial;
      ASSERT_EQ(got[i].image_id, rs[want[i]].image_id);
    }
    total_suppressed += n - got.size();
  }
  EXPECT_GT(total_suppressed, 500u);
}

TEST(OksNms, ThresholdOneKeepsEverythingAndBadThresholdThrows) {
  const std::vector<double> k{1.0};
  std::vector<PoseResult> rs(4, PoseResult{1, {{5, 5, 2}}, {}, 0.5, BBox{0, 0, 10, 10}});
  EXPECT_EQ(oks_nms(rs, 1.0, k).size(), 4u);
  EXPECT_EQ(oks_nms(rs, 0.99, k).size(), 1u);
  EXPECT_THROW((void)oks_nms(rs, 0.0, k), ConfigError);
  EXPECT_THROW((void)oks_nms(rs, 1.5, k), ConfigError);
}

TEST(OksNms, SuppressesOnlyWithinAnImage) {
  const std::vector<double> k{1.0};
  std::vector<PoseResult> rs{{1, {{5, 5, 2}}, {}, 0.9, BBox{0, 0, 10, 10}},
                             {2, {{5, 5, 2}}, {}, 0.8, BBox{0, 0, 10, 10}},
                             {1, {{5, 5, 2}}, {}, 0.7, BBox{0, 0, 10, 10}}};
  const auto kept = oks_nms(rs, 0.5, k);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].score, 0.9);
  EXPECT_EQ(kept[1].score, 0.8);
}

TEST(EvalConfig, ThresholdGridAndValidation) {
  const auto t = EvalConfig::default_thresholds();
  ASSERT_EQ(t.size(), 10u);
  EXPECT_EQ(t.front(), 0.5);
  EXPECT_EQ(t.back(), 0.95);
  EXPECT_NEAR(t[5], 0.75, 1e-15);
  EXPECT_EQ(EvalConfig::coco().kappas[0], 0.52);
  auto c = EvalConfig::uniform(2);
  c.thresholds.pop_back();
  EXPECT_THROW(c.validate(), ConfigError);
  c = EvalConfig::uniform(2, 0.0);
  EXPECT_THROW(c.validate(), ConfigError);
}

// Single-joint predictions at a chosen OKS o from a ground truth of area s2
// sit d = sqrt(-2 s2 ln o) away when kappa = 1.
PoseResult at_oks(std::int64_t image, double score, Point gt, double area, double o) {
  return {image, {{gt.x + std::sqrt(-2.0 * area * std::log(o)), gt.y, 2}}, {1.0}, score, std::nullopt};
}

GroundTruthInstance gt1(std::int64_t image, Point p, double area) {
  return {image, {{p.x, p.y, 2}}, area, BBox{p.x - 10, p.y - 10, 20, 20}, false};
}

TEST(EvaluateAp, HandWorkedMicroDataset) {
  // Image 1: A (medium) and B (large). Image 2: C (large).
  const std::vector<GroundTruthInstance> gts{gt1(1, {100, 100}, 5000), gt1(1, {1000, 1000}, 20000),
                                             gt1(2, {100, 100}, 20000)};
  const std::vector<PoseResult> rs{at_oks(1, 0.9, {100, 100}, 5000, 0.92), at_oks(1, 0.8, {1000, 1000}, 20000, 0.62),
                                   at_oks(2, 0.7, {100, 100}, 20000, 0.78), at_oks(2, 0.6, {100, 100}, 20000, 0.83)};
  const Metrics m = evaluate_ap(rs, gts, EvalConfig::uniform(1));
  // Per-threshold precision/recall sweeps worked out by hand over the 101
  // recall points; prediction areas are 0, so unmatched ones drop out of the
  // medium and large ranges.
  EXPECT_NEAR(m.ap, (3.5 + 236.0 / 101.0) / 10.0, 1e-12);
  EXPECT_NEAR(m.ap50, 1.0, 1e-12);
  EXPECT_NEAR(m.ap75, 56.0 / 101.0, 1e-12);
  EXPECT_NEAR(m.ap_medium, 0.9, 1e-12);
  EXPECT_NEAR(m.ap_large, (3.0 + 204.0 / 101.0) / 10.0, 1e-12);
  EXPECT_NEAR(m.ar, 19.0 / 30.0, 1e-12);
}

std::vector<GroundTruthInstance> random_gts(std::mt19937_64& rng, std::size_t images, std::size_t per_image) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<GroundTruthInstance> gts;
  for (std::size_t i = 0; i < images; ++i) {
    for (std::size_t p = 0; p < per_image; ++p) {
      GroundTruthInstance g;
      g.image_id = static_cast<std::int64_t>(i + 1);
      const double w = 40.0 + 150.0 * u(rng), h = 40.0 + 150.0 * u(rng);
      g.bbox = {400.0 * static_cast<double>(p), 0.0, w, h};
      g.area = w * h;
      for (std::size_t j = 0; j < 17; ++j) {
        g.keypoints.push_back({g.bbox.x + w * u(rng), h * u(rng), u(rng) < 0.8 ? 2 : 0});
      }
      g.keypoints[0].v = 2;
      gts.push_back(g);
    }
  }
  return gts;
}

TEST(EvaluateAp, PerfectPredictionsScoreOneAndNoneScoreZero) {
  std::mt19937_64 rng(22);
  const auto gts = random_gts(rng, 5, 3);
  std::vector<PoseResult> rs;
  for (const auto& g : gts) rs.push_back({g.image_id, g.keypoints, {}, 0.9, g.bbox});
  const Metrics m = evaluate_ap(rs, gts, EvalConfig::coco());
  EXPECT_NEAR(m.ap, 1.0, 1e-12);
  EXPECT_NEAR(m.ap50, 1.0, 1e-12);
  EXPECT_NEAR(m.ap75, 1.0, 1e-12);
  EXPECT_NEAR(m.ar, 1.0, 1e-12);
  const Metrics z = evaluate_ap({}, gts, EvalConfig::coco());
  EXPECT_EQ(z.ap, 0.0);
  EXPECT_EQ(z.ar, 0.0);
}

TEST(EvaluateAp, RangeWithoutGroundTruthReportsMinusOne) {
  const std::vector<GroundTruthInstance> gts{gt1(1, {100, 100}, 5000)};
  const Metrics m = evaluate_ap({at_oks(1, 0.9, {100, 100}, 5000, 0.99)}, gts, EvalConfig::uniform(1));
  EXPECT_EQ(m.ap, 1.0);
  EXPECT_EQ(m.ap_medium, 1.0);
  EXPECT_EQ(m.ap_large, -1.0);
  EXPECT_EQ(evaluate_ap({}, {}, EvalConfig::uniform(1)).ap, -1.0);
}

TEST(EvaluateAp, InvariantToUniformScaling) {
  std::mt19937_64 rng(23);
  const auto gts = random_gts(rng, 4, 2);
  std::normal_distribution<double> noise(0.0, 6.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<PoseResult> rs;
  for (const auto& g : gts) {
    for (int copy = 0; copy < 2; ++copy) {
      PoseResult r{g.image_id, g.keypoints, {}, u(rng), std::nullopt};
      for (auto& kp : r.keypoints) {
        kp.x += noise(rng);
        kp.y += noise(rng);
      }
      rs.push_back(r);
    }
  }
  auto scaled_gts = gts;
  for (auto& g : scaled_gts) {
    g.area *= 4.0;
    g.bbox = {2 * g.bbox.x, 2 * g.bbox.y, 2 * g.bbox.w, 2 * g.bbox.h};
    for (auto& kp : g.keypoints) kp = {2 * kp.x, 2 * kp.y, kp.v};
  }
  auto scaled_rs = rs;
  for (auto& r : scaled_rs)
    for (auto& kp : r.keypoints) kp = {2 * kp.x, 2 * kp.y, kp.v};
  const Metrics a = evaluate_ap(rs, gts, EvalConfig::coco());
  const Metrics b = evaluate_ap(scaled_rs, scaled_gts, EvalConfig::coco());
  EXPECT_GT(a.ap, 0.05);
  EXPECT_LT(a.ap, 0.99);
  EXPECT_EQ(a.ap, b.ap);
  EXPECT_EQ(a.ap50, b.ap50);
  EXPECT_EQ(a.ap75, b.ap75);
  EXPECT_EQ(a.ar, b.ar);
}

TEST(EvaluateAp, CrowdMatchesAreIgnoredAndMaxDetsApplies) {
  const std::vector<double> k{1.0};
  std::vector<GroundTruthInstance> gts{gt1(1, {100, 100}, 5000)};
  gts.push_back(gt1(1, {1000, 100}, 5000));
  gts.back().iscrowd = true;
  // A crowd-matched detection neither helps nor hurts.
  const std::vector<PoseResult> with_crowd{at_oks(1, 0.95, {1000, 100}, 5000, 0.99), at_oks(1, 0.9, {100, 100}, 5000, 0.99),
                                           at_oks(1, 0.85, {1000, 100}, 5000, 0.99)};
  EXPECT_NEAR(evaluate_ap(with_crowd, gts, EvalConfig::uniform(1)).ap, 1.0, 1e-12);

  // 20 high-scoring misses push the true positive past the detection cap.
  std::vector<PoseResult> many;
  for (int i = 0; i < 20; ++i) many.push_back(at_oks(1, 0.99, {3000.0 + 50.0 * i, 100}, 5000, 0.5));
  many.push_back(at_oks(1, 0.5, {100, 100}, 5000, 0.99));
  auto cfg = EvalConfig::uniform(1);
  const std::vector<GroundTruthInstance> one{gts[0]};
  EXPECT_EQ(evaluate_ap(many, one, cfg).ar, 0.0);
  cfg.max_dets = 21;
  EXPECT_EQ(evaluate_ap(many, one, cfg).ar, 1.0);
}

TEST(EvaluateAp, UnlabeledGroundTruthUsesBoxDistance) {
  GroundTruthInstance g{1, KeypointSet(2), 400.0, BBox{10, 10, 20, 20}, false};
  const std::vector<double> k{1.0, 1.0};
  PoseResult inside{1, {{15, 15, 2}, {-5, 45, 2}}, {}, 1.0, std::nullopt};  // within the tripled box
  EXPECT_EQ(detail::coco_oks(inside, g, k), 1.0);
  PoseResult outside{1, {{60, 15, 2}, {15, 15, 2}}, {}, 1.0, std::nullopt};
  const double s2 = 400.0 + std::numeric_limits<double>::epsilon();
  EXPECT_DOUBLE_EQ(detail::coco_oks(outside, g, k), (std::exp(-100.0 / (2.0 * s2)) + 1.0) / 2.0);
}

}  // namespace
}  // namespace pcr
