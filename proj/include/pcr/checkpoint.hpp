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

/// \file checkpoint.hpp
/// \brief Model checkpoints: a directory holding `manifest.txt` (model
/// configuration plus one `tensor.NNNN = name n c h w` line per stored
/// tensor) and `tensors.bin` (the tensors in manifest order).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "pcr/kv.hpp"
#include "pcr/model.hpp"
#include "pcr/tensor_io.hpp"

namespace pcr {

inline constexpr const char* kManifestFile = "manifest.txt";
inline constexpr const char* kTensorFile = "tensors.bin";

namespace detail {

struct TensorSlot {
  std::string name;
  Shape shape;
  std::function<Tensor()> get;
  std::function<void(Tensor)> set;
};

inline TensorSlot stats_slot(const std::string& name, std::vector<double>& v) {
  return {name, Shape{1, v.size(), 1, 1}, [&v] { return Tensor({1, v.size(), 1, 1}, v); },
          [&v](Tensor t) { v = std::move(t.vec()); }};
}

/// Parameters, then each batch-norm layer's running mean and variance, in
/// model traversal order.
inline std::vector<TensorSlot> checkpoint_slots(PcrModel& model) {
  std::vector<TensorSlot> slots;
  model.visit({[&](const std::string& n, Var& p) {
                 slots.push_back({n, p.shape(), [p] { return p.value(); },
                                  [p](Tensor t) mutable { p.mutable_value() = std::move(t); }});
               },
               [&](const std::string& n, BnState& s) {
                 slots.push_back(stats_slot(n + ".running_mean", s.running_mean));
                 slots.push_back(stats_slot(n + ".running_var", s.running_var));
               }});
  return slots;
}

inline std::string slot_key(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "tensor.%04zu", i);
  return buf;
}

}  // namespace detail

inline void save_checkpoint(PcrModel& model, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  const auto slots = detail::checkpoint_slots(model);
  kv::Map manifest;
  for (const auto& [k, v] : model.config().to_kv()) manifest["model." + k] = v;
  manifest["format"] = "1";
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Shape s = slots[i].shape;
    manifest[detail::slot_key(i)] = slots[i].name + " " + std::to_string(s.n) + " " + std::to_string(s.c) + " " +
                                    std::to_string(s.h) + " " + std::to_string(s.w);
  }
  std::ofstream ms(dir / kManifestFile);
  if (!ms) throw DataError("cannot write checkpoint manifest in " + dir.string());
  for (const auto& [k, v] : manifest) ms << k << " = " << v << "\n";
  std::ofstream ts(dir / kTensorFile, std::ios::binary);
  if (!ts) throw DataError("cannot write checkpoint tensors in " + dir.string());
  for (const auto& slot : slots) write_tensor(ts, slot.get());
  if (!ms || !ts) throw DataError("checkpoint write failed in " + dir.string());
}

inline PcrConfig read_checkpoint_config(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / kManifestFile)) throw DataError("no checkpoint manifest in " + dir.string());
  kv::Map m;
  try {
    m = kv::parse_file((dir / kManifestFile).string());
  } catch (const ConfigError& e) {
    throw DataError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  if (m["format"] != "1") throw DataError("unsupported checkpoint format in " + dir.string());
  PcrConfig cfg;
  for (const auto& [k, v] : m) {
    if (k.rfind("model.", 0) == 0 && !cfg.apply(k.substr(6), v)) {
      throw DataError("checkpoint manifest has unknown model key '" + k + "'");
    }
  }
  cfg.validate();
  return cfg;
}

/// Rebuilds the model recorded in `dir` and restores every stored tensor.
inline PcrModel load_checkpoint(const std::filesystem::path& dir) {
  PcrModel model(read_checkpoint_config(dir));
  const kv::Map m = kv::parse_file((dir / kManifestFile).string());
  auto slots = detail::checkpoint_slots(model);
  std::ifstream ts(dir / kTensorFile, std::ios::binary);
  if (!ts) throw DataError("no checkpoint tensors in " + dir.string());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto it = m.find(detail::slot_key(i));
    if (it == m.end()) throw DataError("checkpoint manifest lacks " + detail::slot_key(i));
    std::istringstream line(it->second);
    std::string name;
    Shape s{};
    line >> name >> s.n >> s.c >> s.h >> s.w;
    if (!line || name != slots[i].name || !(s == slots[i].shape)) {
      throw DataError("checkpoint tensor " + std::to_string(i) + " (" + it->second + ") does not match model slot " +
                      slots[i].name + " " + slots[i].shape.str());
    }
    Tensor t = read_tensor(ts);
    if (!(t.shape() == s)) throw DataError("checkpoint tensor " + name + " has a stored shape unlike its manifest");
    slots[i].set(std::move(t));
  }
  if (m.contains(detail::slot_key(slots.size()))) throw DataError("checkpoint holds more tensors than the model");
  return model;
}

}  // namespace pcr
