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


// pcr: command-line front end for training, inference, evaluation and the
// data-side tools. Exit codes: 0 ok, 2 configuration or usage, 3 data,
// 4 numeric failure.

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pcr/checkpoint.hpp"
#include "pcr/dataset.hpp"
#include "pcr/gradcheck.hpp"
#include "pcr/pipeline.hpp"
#include "pcr/run_config.hpp"
#include "pcr/synth.hpp"
#include "pcr/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace pcr;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

EvalConfig eval_config_for(const std::string& kappa, std::size_t joints) {
  RunConfig rc;
  rc.kappa = kappa;
  rc.model.joints = joints;
  EvalConfig c = rc.eval_config();
  c.validate();
  return c;
}

BBox parse_box(const std::string& text) {
  const auto v = kv::parse_list<double>("bbox", text);
  if (v.size() != 4) throw ConfigError("--bbox expects x,y,w,h");
  return {v[0], v[1], v[2], v[3]};
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::absolute(path).parent_path();
  if (!fs::is_directory(parent)) throw DataError("output directory does not exist: " + parent.string());
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  SynthOptions o;
};

int cmd_synth(const SynthArgs& a) {
  const SynthScene s = make_synthetic(a.o);
  const fs::path root(a.out);
  fs::create_directories(root / "images");
  for (std::size_t i = 0; i < s.images.size(); ++i) {
    save_pnm(s.images[i], (root / "images" / s.dataset.images[i].file_name).string());
  }
  save_annotations(s.dataset, (root / "annotations.json").string());
  save_detections(s.detections, (root / "detections.json").string());
  std::ofstream cfg(root / "train.cfg");
  cfg << "# toy run on the synthetic scene\n"
      << "K = 3\nL = 2\nchannels = 16\njoints = " << a.o.joints << "\n"
      << "input_h = 64\ninput_w = 48\nencoder_channels = 8,16,16\ninit_std = 0.001\nseed = 1\n"
      << "lr = 0.1\nsteps = 500\nkappa = 0.1\n"
      << "train_annotations = " << (root / "annotations.json").string() << "\n"
      << "train_images = " << (root / "images").string() << "\n"
      << "train_detections = " << (root / "detections.json").string() << "\n"
      << "out_dir = " << (root / "run").string() << "\n";
  std::cout << "wrote " << s.images.size() << " images, " << s.dataset.records.size() << " instances and "
            << s.detections.size() << " detections to " << root.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string init;
};

kv::Map config_map(const std::string& path, const std::vector<std::string>& overrides) {
  kv::Map m = path.empty() ? kv::Map{} : kv::parse_file(path);
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    m[kv::trim(o.substr(0, eq))] = kv::trim(o.substr(eq + 1));
  }
  return m;
}

int cmd_train(const TrainArgs& a) {
  const kv::Map m = config_map(a.config, a.overrides);
  RunConfig rc = RunConfig::from_kv(m);
  std::optional<PcrModel> init;
  if (!a.init.empty()) {
    init.emplace(load_checkpoint(a.init));
    const kv::Map ck = init->config().to_kv();
    for (const auto& [k, v] : m) {
      if (ck.contains(k) && ck.at(k) != rc.model.to_kv().at(k)) {
        throw ConfigError("config key '" + k + "' differs from the initial checkpoint");
      }
    }
    rc.model = init->config();
  }
  rc.validate();
  rc.validate_training_paths();

  Dataset ds = load_annotations(rc.train_annotations, rc.model.joints);
  std::vector<InstanceRecord> records;
  for (const InstanceRecord& r : ds.records) {
    if (r.iscrowd) continue;
    if (r.source == Source::hard_negative || labeled_count(r.keypoints) > 0) records.push_back(r);
  }
  std::size_t mined = 0;
  if (rc.hard_negatives) {
    const auto neg = mine_hard_negatives(load_detections(rc.train_detections), ds.records, rc.model.joints,
                                         rc.hard_negative_score);
    mined = neg.size();
    records.insert(records.end(), neg.begin(), neg.end());
  }
  ImageCache images(ds, rc.train_images);

  PcrModel model = init ? std::move(*init) : PcrModel(rc.model);
  const fs::path out(rc.out_dir);
  fs::create_directories(out);
  std::ofstream csv(out / "loss.csv");
  if (!csv) throw DataError("cannot write " + (out / "loss.csv").string());
  const auto log = train_records(model, records, images.lookup(), rc, &csv);
  save_checkpoint(model, out / "checkpoint");
  {
    std::ofstream resolved(out / "run.cfg");
    kv::Map all = m;
    for (const auto& [k, v] : model.config().to_kv()) all[k] = v;
    for (const auto& [k, v] : all) resolved << k << " = " << v << "\n";
  }
  std::cout << "trained on " << records.size() << " records (" << mined << " mined hard negatives) for "
            << log.size() << " steps; loss " << kv::format_double(log.front().total) << " -> "
            << kv::format_double(log.back().total) << "\ncheckpoint: " << (out / "checkpoint").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint, detections, annotations, images, out;
  double min_score = 0.0;
};

int cmd_infer(const InferArgs& a) {
  PcrModel model = load_checkpoint(a.checkpoint);
  std::vector<PersonDetection> dets;
  for (const auto& d : load_detections(a.detections)) {
    if (d.score >= a.min_score) dets.push_back(d);
  }
  ensure_parent(a.out);
  std::vector<PoseResult> results;
  if (!dets.empty()) {
    if (a.annotations.empty() || a.images.empty()) throw DataError("--annotations and --images are required");
    const Dataset ds = load_annotations(a.annotations);
    if (!fs::is_directory(a.images)) throw DataError("image directory not found: " + a.images);
    ImageCache cache(ds, a.images);
    results = infer_detections(model, dets, cache.lookup());
  }
  save_results(results, a.out);
  std::cout << "wrote " << results.size() << " poses to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string results, gt, kappa = "coco", json_out;
};

int cmd_eval(const EvalArgs& a) {
  const Dataset ds = load_annotations(a.gt);
  const auto results = load_results(a.results, ds.joints);
  const Metrics m = evaluate_ap(results, ground_truth(ds), eval_config_for(a.kappa, ds.joints));
  std::printf("%8s %8s %8s %8s %8s %8s\n", "AP", "AP@.5", "AP@.75", "AP^M", "AP^L", "AR");
  std::printf("%8.3f %8.3f %8.3f %8.3f %8.3f %8.3f\n", m.ap, m.ap50, m.ap75, m.ap_medium, m.ap_large, m.ar);
  if (!a.json_out.empty()) {
    ensure_parent(a.json_out);
    const nlohmann::json j = {{"AP", m.ap},          {"AP50", m.ap50},        {"AP75", m.ap75},
                              {"APM", m.ap_medium}, {"APL", m.ap_large},     {"AR", m.ar}};
    std::ofstream(a.json_out) << j.dump(2) << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct NmsArgs {
  std::string results, out, kappa = "coco";
  double threshold = 0.9;
};

int cmd_nms(const NmsArgs& a) {
  const auto results = load_results(a.results);
  const std::size_t joints = results.empty() ? kCocoSigmas.size() : results.front().keypoints.size();
  const auto kept = oks_nms(results, a.threshold, eval_config_for(a.kappa, joints).kappas);
  ensure_parent(a.out);
  save_results(kept, a.out);
  std::cout << "kept " << kept.size() << " of " << results.size() << " poses\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct MineArgs {
  std::string detections, annotations, out;
  double score = kHardNegativeScore;
};

int cmd_mine(const MineArgs& a) {
  Dataset ds = load_annotations(a.annotations);
  const auto neg = mine_hard_negatives(load_detections(a.detections), ds.records, ds.joints, a.score);
  ds.records.insert(ds.records.end(), neg.begin(), neg.end());
  ensure_parent(a.out);
  save_annotations(ds, a.out);
  std::cout << "mined " << neg.size() << " hard negatives\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct PseudoArgs {
  std::string results, annotations, out;
  double thr = kPseudoLabelScore;
};

int cmd_pseudo(const PseudoArgs& a) {
  if (!(a.thr >= 0.0 && a.thr <= 1.0)) throw ConfigError("--thr must lie in [0, 1]");
  const auto results = load_results(a.results);
  Dataset ds;
  if (!a.annotations.empty()) ds.images = load_annotations(a.annotations).images;
  ds.joints = results.empty() ? (a.annotations.empty() ? 17 : load_annotations(a.annotations).joints)
                              : results.front().keypoints.size();
  ds.records = filter_pseudo_labels(results, a.thr);
  std::size_t kept = 0;
  for (const auto& r : ds.records) kept += labeled_count(r.keypoints);
  ensure_parent(a.out);
  save_annotations(ds, a.out);
  std::cout << "kept " << kept << " joints in " << ds.records.size() << " of " << results.size() << " poses\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct MergeArgs {
  std::string primary, external, map, out;
};

int cmd_merge(const MergeArgs& a) {
  const Dataset p = load_annotations(a.primary);
  const Dataset e = load_annotations(a.external);
  CategoryMap map;
  if (!a.map.empty()) {
    map = parse_category_map(kv::parse_file(a.map));
  } else if (e.joints == 14 && p.joints == 17) {
    map = aic_to_coco_default();
  } else {
    throw ConfigError("--map is required unless merging 14-joint records into 17-joint records");
  }
  const Dataset merged = merge_datasets(p, e, map);
  ensure_parent(a.out);
  save_annotations(merged, a.out);
  std::cout << "merged " << p.records.size() << " + " << e.records.size() << " records\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EncodeArgs {
  std::string annotations, out;
  std::size_t index = 0;
  std::size_t input_w = 192, input_h = 256;
  double sigma = 2.0;
};

int cmd_encode(const EncodeArgs& a) {
  const Dataset ds = load_annotations(a.annotations);
  if (a.index >= ds.records.size()) throw DataError("--index is past the last annotation");
  if (a.input_w % PcrConfig::kOutputStride || a.input_h % PcrConfig::kOutputStride) {
    throw ConfigError("input size must be a multiple of 4");
  }
  const InstanceRecord& r = ds.records[a.index];
  const CodecParams p{a.input_h / PcrConfig::kOutputStride, a.input_w / PcrConfig::kOutputStride,
                      double(PcrConfig::kOutputStride), a.sigma};
  const HeatmapTarget t = encode(r.keypoints, crop_transform(r.bbox, a.input_w, a.input_h).to_input, p);
  ensure_parent(a.out);
  save_tensor(a.out, t.maps);
  std::cout << "weights";
  for (double w : t.weights.data()) std::cout << " " << w;
  std::cout << "\n";
  return 0;
}

struct DecodeArgs {
  std::string heatmaps, out, bbox;
  std::int64_t image_id = 0;
  std::size_t input_w = 0, input_h = 0;
  bool plain = false;
};

int cmd_decode(const DecodeArgs& a) {
  const Tensor maps = load_tensor(a.heatmaps);
  const Shape s = maps.shape();
  const std::size_t stride = PcrConfig::kOutputStride;
  const std::size_t in_w = a.input_w ? a.input_w : s.w * stride, in_h = a.input_h ? a.input_h : s.h * stride;
  std::optional<BBox> box;
  Affine2D to_image;
  if (!a.bbox.empty()) {
    box = parse_box(a.bbox);
    to_image = crop_transform(*box, in_w, in_h).to_image;
  }
  std::vector<PoseResult> out;
  for (std::size_t n = 0; n < s.n; ++n) {
    const DecodedPose p = decode(maps, to_image, double(stride), n, !a.plain);
    out.push_back({a.image_id, p.keypoints, p.scores, p.instance_score(), box});
  }
  ensure_parent(a.out);
  save_results(out, a.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::size_t batch = 2;
};

PcrConfig micro_config() {
  PcrConfig c;
  c.K = 1;
  c.L = 1;
  c.channels = {8};
  c.joints = 2;
  c.input_h = 64;
  c.input_w = 48;
  c.encoder_channels = {4, 8};
  c.init_std = 0.2;
  c.seed = 3;
  return c;
}

int cmd_gradcheck(const GradcheckArgs& a) {
  PcrConfig cfg = micro_config();
  if (!a.config.empty() || !a.overrides.empty()) {
    for (const auto& [k, v] : config_map(a.config, a.overrides)) {
      if (!cfg.apply(k, v)) throw ConfigError("gradcheck: '" + k + "' is not a model key");
    }
    cfg.broadcast_channels();
  }
  cfg.validate();
  PcrModel model(cfg);
  std::mt19937_64 rng(cfg.seed + 1);
  const Tensor x = Tensor::uniform({a.batch, cfg.image_channels, cfg.input_h, cfg.input_w}, rng, 0.0, 1.0);
  const Tensor t = Tensor::uniform({a.batch, cfg.joints, cfg.heatmap_h(), cfg.heatmap_w()}, rng, 0.0, 1.0);
  const Tensor w({a.batch, cfg.joints, 1, 1}, 1.0);
  auto loss = [&] { return multi_task_loss(model.forward(Var(x), Mode::train), t, w, cfg).total; };
  const auto entries = gradcheck(loss, model.parameters());
  std::size_t failed = 0;
  for (const auto& e : entries) {
    std::printf("%-40s %6zu  rel_error %.3e  %s\n", e.name.c_str(), e.elements, e.rel_error, e.ok ? "ok" : "FAIL");
    failed += e.ok ? 0 : 1;
  }
  std::printf("%zu of %zu parameter tensors pass\n", entries.size() - failed, entries.size());
  return failed ? kExitNumeric : 0;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const UndefinedOksError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Top-down human keypoint detection with progressively refined multi-level decoders"};
  app.require_subcommand(1);
  int code = 0;

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Write a procedurally generated toy dataset");
  synth->add_option("--out", sy.out, "Output directory")->required();
  synth->add_option("--count", sy.o.count, "Number of images")->capture_default_str();
  synth->add_option("--joints", sy.o.joints, "Joints per person")->capture_default_str();
  synth->add_option("--seed", sy.o.seed, "Generator seed")->capture_default_str();
  synth->add_option("--width", sy.o.width, "Image width")->capture_default_str();
  synth->add_option("--height", sy.o.height, "Image height")->capture_default_str();
  synth->add_option("--first-id", sy.o.first_image_id, "Id of the first image")->capture_default_str();
  synth->callback([&] { code = guarded([&] { return cmd_synth(sy); }); });

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model; writes loss.csv and a checkpoint under out_dir");
  train->add_option("--config", tr.config, "key = value run configuration")->check(CLI::ExistingFile);
  train->add_option("--set", tr.overrides, "Override a configuration key (key=value)");
  train->add_option("--init", tr.init, "Start from this checkpoint directory");
  train->callback([&] { code = guarded([&] { return cmd_train(tr); }); });

  InferArgs in;
  auto* infer = app.add_subcommand("infer", "Estimate one pose per detection box");
  infer->add_option("--checkpoint", in.checkpoint, "Checkpoint directory")->required();
  infer->add_option("--detections", in.detections, "Person detections JSON")->required();
  infer->add_option("--annotations", in.annotations, "Annotation JSON listing the image files");
  infer->add_option("--images", in.images, "Image directory");
  infer->add_option("--out", in.out, "Results JSON")->required();
  infer->add_option("--min-score", in.min_score, "Skip detections scoring below this")->capture_default_str();
  infer->callback([&] { code = guarded([&] { return cmd_infer(in); }); });

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "OKS-based AP/AR of results against annotations");
  eval->add_option("--results", ev.results, "Results JSON")->required();
  eval->add_option("--gt", ev.gt, "Ground-truth annotation JSON")->required();
  eval->add_option("--kappa", ev.kappa, "'coco' or one falloff constant for every joint")->capture_default_str();
  eval->add_option("--json", ev.json_out, "Also write the metrics as JSON");
  eval->callback([&] { code = guarded([&] { return cmd_eval(ev); }); });

  NmsArgs nm;
  auto* nms = app.add_subcommand("nms", "Greedy OKS suppression of pose results");
  nms->add_option("--results", nm.results, "Results JSON")->required();
  nms->add_option("--out", nm.out, "Output results JSON")->required();
  nms->add_option("--threshold", nm.threshold, "Suppress above this similarity")->capture_default_str();
  nms->add_option("--kappa", nm.kappa, "'coco' or one falloff constant")->capture_default_str();
  nms->callback([&] { code = guarded([&] { return cmd_nms(nm); }); });

  MineArgs mi;
  auto* mine = app.add_subcommand("mine-hn", "Append confident detections that touch no person as hard negatives");
  mine->add_option("--detections", mi.detections, "Person detections JSON")->required();
  mine->add_option("--annotations", mi.annotations, "Annotation JSON")->required();
  mine->add_option("--out", mi.out, "Output annotation JSON")->required();
  mine->add_option("--score", mi.score, "Minimum detection score")->capture_default_str();
  mine->callback([&] { code = guarded([&] { return cmd_mine(mi); }); });

  PseudoArgs ps;
  auto* pseudo = app.add_subcommand("pseudo", "Turn confident predicted joints into annotations");
  pseudo->add_option("--results", ps.results, "Results JSON")->required();
  pseudo->add_option("--out", ps.out, "Output annotation JSON")->required();
  pseudo->add_option("--thr", ps.thr, "Keep joints scoring above this")->capture_default_str();
  pseudo->add_option("--annotations", ps.annotations, "Copy the image list from this annotation JSON");
  pseudo->callback([&] { code = guarded([&] { return cmd_pseudo(ps); }); });

  MergeArgs me;
  auto* merge = app.add_subcommand("merge", "Remap an external dataset onto the primary joint layout and merge");
  merge->add_option("--primary", me.primary, "Primary annotation JSON")->required();
  merge->add_option("--external", me.external, "External annotation JSON")->required();
  merge->add_option("--map", me.map, "external_index = primary_index | discard");
  merge->add_option("--out", me.out, "Output annotation JSON")->required();
  merge->callback([&] { code = guarded([&] { return cmd_merge(me); }); });

  EncodeArgs en;
  auto* enc = app.add_subcommand("encode", "Heatmap target of one annotation, as a tensor file");
  enc->add_option("--annotations", en.annotations, "Annotation JSON")->required();
  enc->add_option("--index", en.index, "Annotation index")->capture_default_str();
  enc->add_option("--input-w", en.input_w, "Network input width")->capture_default_str();
  enc->add_option("--input-h", en.input_h, "Network input height")->capture_default_str();
  enc->add_option("--sigma", en.sigma, "Gaussian sigma in heatmap pixels")->capture_default_str();
  enc->add_option("--out", en.out, "Output tensor file")->required();
  enc->callback([&] { code = guarded([&] { return cmd_encode(en); }); });

  DecodeArgs de;
  auto* dec = app.add_subcommand("decode", "Heatmap tensor file to pose results");
  dec->add_option("--heatmaps", de.heatmaps, "Tensor file, N x J x h x w")->required();
  dec->add_option("--out", de.out, "Results JSON")->required();
  dec->add_option("--bbox", de.bbox, "Crop box x,y,w,h mapping back to image pixels");
  dec->add_option("--image-id", de.image_id, "Image id written to every result")->capture_default_str();
  dec->add_option("--input-w", de.input_w, "Network input width (default 4 x heatmap width)");
  dec->add_option("--input-h", de.input_h, "Network input height (default 4 x heatmap height)");
  dec->add_flag("--plain", de.plain, "Plain argmax without the quarter-pixel shift");
  dec->callback([&] { code = guarded([&] { return cmd_decode(de); }); });

  GradcheckArgs gc;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every model parameter");
  grad->add_option("--config", gc.config, "Model keys overriding the micro configuration")->check(CLI::ExistingFile);
  grad->add_option("--set", gc.overrides, "Override a model key (key=value)");
  grad->add_option("--batch", gc.batch, "Batch size")->capture_default_str();
  grad->callback([&] { code = guarded([&] { return cmd_gradcheck(gc); }); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  return code;
}
