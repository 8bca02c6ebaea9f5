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
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "pcr/dataset.hpp"
#include "pcr/tensor_io.hpp"

namespace pcr {
namespace {

namespace fs = std::filesystem;

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "pcr_test_cli";
    fs::remove_all(root_);
    fs::create_directories(root_);
    ASSERT_EQ(run("synth --out " + path("toy") + " --count 4 --joints 4 --seed 5"), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string path(const std::string& rel) { return (root_ / rel).string(); }

  /// Runs the CLI, stdout and stderr into `log`; returns the exit status.
  static int run(const std::string& args, const std::string& log = "last.log") {
    const std::string cmd = std::string(PCR_CLI_PATH) + " " + args + " > " + path(log) + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const std::string& rel) {
    std::ifstream is(path(rel));
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  }

  static std::string train_args(const std::string& out, const std::string& extra = "") {
    return "train --config " + path("toy/train.cfg") + " --set steps=4 --set out_dir=" + path(out) + " " + extra;
  }

  static fs::path root_;
};

fs::path Cli::root_;

TEST_F(Cli, UsageErrorsExitTwoAndHelpExitsZero) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_NE(slurp("last.log").find("gradcheck"), std::string::npos);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("eval --results"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
}

TEST_F(Cli, TrainingIsDeterministicAndZeroRateIsFlat) {
  ASSERT_EQ(run(train_args("a")), 0) << slurp("last.log");
  ASSERT_EQ(run(train_args("b")), 0);
  const std::string a = slurp("a/loss.csv");
  EXPECT_EQ(a, slurp("b/loss.csv"));
  EXPECT_EQ(a.substr(0, a.find('\n')), "step,total,level1,level2");
  EXPECT_TRUE(fs::exists(path("a/checkpoint/manifest.txt")));

  ASSERT_EQ(run(train_args("flat", "--set lr=0")), 0);
  std::istringstream lines(slurp("flat/loss.csv"));
  std::string line, first_total;
  std::getline(lines, line);
  int rows = 0;
  while (std::getline(lines, line)) {
    const std::string total = line.substr(line.find(',') + 1, line.find(',', line.find(',') + 1) - line.find(',') - 1);
    if (rows++ == 0) first_total = total;
    EXPECT_EQ(total, first_total);
  }
  EXPECT_EQ(rows, 4);
}

TEST_F(Cli, TrainMapsErrorsToExitCodes) {
  EXPECT_EQ(run(train_args("x", "--set no_such_key=1")), 2);
  EXPECT_NE(slurp("last.log").find("no_such_key"), std::string::npos);
  EXPECT_EQ(run(train_args("x", "--set train_annotations=" + path("missing.json"))), 3);
  EXPECT_EQ(run(train_args("x", "--set lr=1e300")), 4) << slurp("last.log");
}

TEST_F(Cli, TrainResumesFromCheckpoint) {
  ASSERT_EQ(run(train_args("base")), 0);
  ASSERT_EQ(run(train_args("resumed", "--set hard_negatives=1 --init " + path("base/checkpoint"))), 0)
      << slurp("last.log");
  EXPECT_NE(slurp("last.log").find("4 mined hard negatives"), std::string::npos) << slurp("last.log");
  EXPECT_EQ(run(train_args("x", "--set K=2 --init " + path("base/checkpoint"))), 2);
}

TEST_F(Cli, InferWritesOnePosePerDetection) {
  ASSERT_EQ(run(train_args("inf")), 0);
  const std::string common = "infer --checkpoint " + path("inf/checkpoint") + " --annotations " +
                             path("toy/annotations.json") + " --images " + path("toy/images");
  ASSERT_EQ(run(common + " --detections " + path("toy/detections.json") + " --out " + path("res.json")), 0);
  const auto res = load_results(path("res.json"));
  EXPECT_EQ(res.size(), load_detections(path("toy/detections.json")).size());
  for (const auto& r : res) {
    EXPECT_EQ(r.keypoints.size(), 4u);
    EXPECT_TRUE(r.bbox.has_value());
  }

  save_detections({}, path("empty_dets.json"));
  ASSERT_EQ(run(common + " --detections " + path("empty_dets.json") + " --out " + path("empty_res.json")), 0);
  EXPECT_TRUE(load_results(path("empty_res.json")).empty());
  EXPECT_EQ(run(common + " --detections " + path("nope.json") + " --out " + path("r.json")), 3);
  EXPECT_EQ(run("infer --checkpoint " + path("nope") + " --detections " + path("empty_dets.json") + " --out " +
                path("r.json")),
            3);
}

TEST_F(Cli, EvalScoresGroundTruthAsPerfectAndEmptyAsZero) {
  const Dataset ds = load_annotations(path("toy/annotations.json"));
  std::vector<PoseResult> perfect;
  for (const auto& r : ds.records) perfect.push_back({r.image_id, r.keypoints, {}, 1.0, r.bbox});
  save_results(perfect, path("perfect.json"));
  ASSERT_EQ(run("eval --results " + path("perfect.json") + " --gt " + path("toy/annotations.json") +
                " --kappa 0.1 --json " + path("m.json")),
            0);
  const std::string table = slurp("last.log");
  EXPECT_NE(table.find("AP@.5"), std::string::npos);
  EXPECT_NE(table.find("   1.000"), std::string::npos) << table;
  const auto m = nlohmann::json::parse(slurp("m.json"));
  EXPECT_EQ(m["AP"].get<double>(), 1.0);

  save_results({}, path("none.json"));
  ASSERT_EQ(run("eval --results " + path("none.json") + " --gt " + path("toy/annotations.json") + " --kappa 0.1 --json " +
                path("z.json")),
            0);
  EXPECT_EQ(nlohmann::json::parse(slurp("z.json"))["AP"].get<double>(), 0.0);
  EXPECT_EQ(run("eval --results " + path("none.json") + " --gt " + path("toy/annotations.json")), 2);  // coco needs 17
}

TEST_F(Cli, NmsAtThresholdOneKeepsEverything) {
  std::vector<PoseResult> rs(5, PoseResult{1, {{10, 10, 2}, {20, 20, 2}}, {0.5, 0.5}, 0.5, BBox{0, 0, 30, 30}});
  save_results(rs, path("dup.json"));
  ASSERT_EQ(run("nms --results " + path("dup.json") + " --out " + path("kept.json") + " --threshold 1.0 --kappa 1"), 0);
  EXPECT_EQ(load_results(path("kept.json")).size(), 5u);
  ASSERT_EQ(run("nms --results " + path("dup.json") + " --out " + path("kept.json") + " --threshold 0.9 --kappa 1"), 0);
  EXPECT_EQ(load_results(path("kept.json")).size(), 1u);
  EXPECT_EQ(run("nms --results " + path("dup.json") + " --out " + path("kept.json") + " --threshold 0"), 2);
}

TEST_F(Cli, PseudoKeepsExactlyJointsAboveThreshold) {
  const std::vector<PoseResult> rs{{1, {{1, 1, 2}, {2, 2, 2}, {3, 3, 2}}, {0.95, 0.9, 0.91}, 0.9, std::nullopt},
                                   {1, {{1, 1, 2}, {2, 2, 2}, {3, 3, 2}}, {0.2, 0.9, 0.5}, 0.5, std::nullopt},
                                   {2, {{1, 1, 2}, {2, 2, 2}, {3, 3, 2}}, {0.99, 0.3, 0.900001}, 0.7, std::nullopt}};
  save_results(rs, path("crafted.json"));
  ASSERT_EQ(run("pseudo --results " + path("crafted.json") + " --out " + path("pseudo.json") + " --thr 0.9"), 0);
  const Dataset ds = load_annotations(path("pseudo.json"));
  ASSERT_EQ(ds.records.size(), 2u);
  auto labeled = [](const InstanceRecord& r) {
    std::vector<bool> v;
    for (const auto& k : r.keypoints) v.push_back(k.labeled());
    return v;
  };
  EXPECT_EQ(labeled(ds.records[0]), (std::vector<bool>{true, false, true}));
  EXPECT_EQ(labeled(ds.records[1]), (std::vector<bool>{true, false, true}));
  for (const auto& r : ds.records) EXPECT_EQ(r.source, Source::pseudo);
}

TEST_F(Cli, MineAndMergeWriteAnnotations) {
  ASSERT_EQ(run("mine-hn --detections " + path("toy/detections.json") + " --annotations " +
                path("toy/annotations.json") + " --out " + path("mined.json")),
            0);
  const Dataset mined = load_annotations(path("mined.json"));
  std::size_t neg = 0;
  for (const auto& r : mined.records) neg += r.source == Source::hard_negative;
  EXPECT_EQ(neg, 4u);  // the distractor box of each image

  auto person = [](std::int64_t image, std::size_t joints) {
    InstanceRecord r;
    r.id = 1;
    r.image_id = image;
    r.bbox = {0, 0, 5, 5};
    r.keypoints.assign(joints, Keypoint{1, 1, 2});
    return r;
  };
  Dataset primary, external;
  primary.joints = 17;
  primary.records.push_back(person(1, 17));
  external.joints = 14;
  external.records.push_back(person(9, 14));
  save_annotations(primary, path("p.json"));
  save_annotations(external, path("e.json"));
  ASSERT_EQ(run("merge --primary " + path("p.json") + " --external " + path("e.json") + " --out " + path("merged.json")),
            0) << slurp("last.log");
  const Dataset merged = load_annotations(path("merged.json"));
  ASSERT_EQ(merged.records.size(), 2u);
  EXPECT_EQ(labeled_count(merged.records[1].keypoints), 12u);
  std::ofstream(path("bad.map")) << "0 = 99\n";
  EXPECT_EQ(run("merge --primary " + path("p.json") + " --external " + path("e.json") + " --map " + path("bad.map") +
                " --out " + path("merged.json")),
            2);
}

TEST_F(Cli, EncodeThenDecodeRecoversJoints) {
  ASSERT_EQ(run("encode --annotations " + path("toy/annotations.json") + " --index 1 --input-w 48 --input-h 64 --out " +
                path("hm.bin")),
            0);
  EXPECT_EQ(load_tensor(path("hm.bin")).shape(), (Shape{1, 4, 16, 12}));
  const Dataset ds = load_annotations(path("toy/annotations.json"));
  const BBox b = ds.records[1].bbox;
  std::ostringstream box;
  box.precision(17);
  box << b.x << "," << b.y << "," << b.w << "," << b.h;
  ASSERT_EQ(run("decode --heatmaps " + path("hm.bin") + " --bbox " + box.str() + " --out " + path("dec.json")), 0);
  const auto dec = load_results(path("dec.json"));
  ASSERT_EQ(dec.size(), 1u);
  // One heatmap pixel is 4 input pixels; the crop scale is 48 / (1.25 * 38) here.
  const double px = 4.0 * 1.25 * b.h * 0.75 / 48.0;
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_LE(std::abs(dec[0].keypoints[j].x - ds.records[1].keypoints[j].x), 0.5 * px);
    EXPECT_LE(std::abs(dec[0].keypoints[j].y - ds.records[1].keypoints[j].y), 0.5 * px);
  }
  EXPECT_EQ(run("decode --heatmaps " + path("missing.bin") + " --out " + path("dec.json")), 3);
}

TEST_F(Cli, GradcheckPassesOnMicroModel) {
  EXPECT_EQ(run("gradcheck"), 0) << slurp("last.log");
  EXPECT_NE(slurp("last.log").find("parameter tensors pass"), std::string::npos);
  EXPECT_EQ(run("gradcheck --set lr=1"), 2);
}

}  // namespace
}  // namespace pcr
