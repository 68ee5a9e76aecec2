// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>
#include <vector>

#include "transbridge/dsrecon/dsrecon.hpp"
#include "transbridge/encoder/encoder.hpp"
#include "transbridge/harness/config.hpp"
#include "transbridge/sim/sequence.hpp"
#include "transbridge/voxel/pyramid.hpp"
#include "transbridge/voxel/voxel_ops.hpp"

namespace tb::harness {

using sim::RigidTransform;
using voxel::CoordSet;
using voxel::CoordSetPtr;

/// One training example: the key sweep voxelized at level 1, the label
/// pyramid from its DSRecon frame, and the key-frame object footprints.
struct Sample {
  int index = 0;
  CoordSetPtr coords;
  DenseArray features;
  voxel::ExistencePyramid labels;
  std::vector<nn::BoxLabel> boxes;
};

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer over base and stream
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::string scene_file(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%04d.json", i);
  return buf;
}

inline std::string dense_file(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "dense_%04d.json", i);
  return buf;
}

inline std::string pyramid_file(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pyramid_%04d.ndjson", i);
  return buf;
}

/// Scene i of a dataset. Placement failures retry on a fresh stream so every
/// index yields a scene; the stream actually used is fixed by (seed, i).
inline sim::SceneSequence make_scene(const RunConfig& cfg, int i) {
  constexpr int kAttempts = 16;
  for (int a = 0; a < kAttempts; ++a) {
    const std::uint64_t s = derive_seed(cfg.seed, static_cast<std::uint64_t>(i) * kAttempts + static_cast<std::uint64_t>(a));
    try {
      sim::SceneSequence seq = sim::render_sequence(sim::generate_scene(s, cfg.scene), cfg.sensor);
      seq.meta["index"] = i;
      return seq;
    } catch (const std::runtime_error&) {
      if (a + 1 == kAttempts) throw;
    }
  }
  throw std::logic_error("unreachable");
}

inline std::vector<dsrecon::DenseFrame> run_dsrecon(const sim::SceneSequence& seq, const RunConfig& cfg) {
  const dsrecon::MidpointDensifier densifier(cfg.densify);
  return dsrecon::compose_dsrecon(seq, densifier, cfg.dsrecon);
}

inline std::vector<nn::BoxLabel> key_frame_boxes(const sim::SceneSequence& seq, int key_frame) {
  std::vector<nn::BoxLabel> boxes;
  for (const auto& tr : seq.tracks) {
    const RigidTransform& p = tr.poses.at(static_cast<std::size_t>(key_frame - 1));
    boxes.push_back({p.translation.x, p.translation.y, std::atan2(p.rotation[3], p.rotation[0]), tr.extent.x,
                     tr.extent.y});
  }
  return boxes;
}

inline Sample build_sample(int index, const sim::SceneSequence& seq, const dsrecon::DenseFrame& dense,
                           const RunConfig& cfg) {
  const int key = cfg.data.key_frame;
  if (key > seq.frame_count()) {
    throw ConfigError("data: scene " + std::to_string(index) + " has " + std::to_string(seq.frame_count()) +
                      " frames, key frame is " + std::to_string(key));
  }
  if (dense.t != key) throw ConfigError("data: dense frame for scene " + std::to_string(index) + " is not the key frame");
  const sim::Frame& f = seq.frame(key);
  if (f.points.channels != cfg.encoder.in_channels) {
    throw ConfigError("data: scene " + std::to_string(index) + " points have " + std::to_string(f.points.channels) +
                      " channels, encoder expects " + std::to_string(cfg.encoder.in_channels));
  }
  Sample s;
  s.index = index;
  auto vox = voxel::voxelize(f.points, cfg.grid.level(1));
  s.coords = vox.tensor.coords;
  s.features = std::move(vox.tensor.features);
  s.labels = dsrecon::build_existence_pyramid(dense.points, cfg.grid);
  s.boxes = key_frame_boxes(seq, key);
  return s;
}

/// Builds the whole dataset in memory from the config (no files).
inline std::vector<Sample> synthesize_dataset(const RunConfig& cfg) {
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(cfg.data.scenes));
  for (int i = 0; i < cfg.data.scenes; ++i) {
    const auto seq = make_scene(cfg, i);
    const auto frames = run_dsrecon(seq, cfg);
    out.push_back(build_sample(i, seq, frames.at(static_cast<std::size_t>(cfg.data.key_frame - 1)), cfg));
  }
  return out;
}

/// Writes scene_NNNN.json for every scene of the config into `dir`.
inline void write_scenes(const RunConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < cfg.data.scenes; ++i) sim::write_sequence(dir + "/" + scene_file(i), make_scene(cfg, i));
}

inline nlohmann::json dense_frames_to_json(const std::vector<dsrecon::DenseFrame>& frames) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : frames) arr.push_back(dsrecon::dense_frame_to_json(f));
  return {{"frames", arr}};
}

inline std::vector<dsrecon::DenseFrame> dense_frames_from_json(const nlohmann::json& j) {
  std::vector<dsrecon::DenseFrame> out;
  for (const auto& f : j.at("frames")) out.push_back(dsrecon::dense_frame_from_json(f));
  return out;
}

/// Sorted indices of scene_NNNN.json files in `dir`.
inline std::vector<int> list_scenes(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::ios_base::failure("data directory not found: " + dir);
  static const std::regex re("scene_([0-9]{4,})\\.json");
  std::vector<int> idx;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, re)) idx.push_back(std::stoi(m[1]));
  }
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Runs DSRecon on every scene in `in` and writes dense_NNNN.json plus the
/// key-frame label pyramid pyramid_NNNN.ndjson into `out`.
inline int write_dsrecon(const RunConfig& cfg, const std::string& in, const std::string& out) {
  const auto idx = list_scenes(in);
  std::filesystem::create_directories(out);
  for (int i : idx) {
    const auto seq = sim::read_sequence(in + "/" + scene_file(i));
    const auto frames = run_dsrecon(seq, cfg);
    sim::write_json_file(out + "/" + dense_file(i), dense_frames_to_json(frames));
    const auto& key = frames.at(static_cast<std::size_t>(std::min(cfg.data.key_frame, seq.frame_count()) - 1));
    std::ofstream os(out + "/" + pyramid_file(i), std::ios::trunc);
    if (!os) throw std::ios_base::failure("cannot open for writing: " + out + "/" + pyramid_file(i));
    voxel::write_pyramid(os, dsrecon::build_existence_pyramid(key.points, cfg.grid));
  }
  return static_cast<int>(idx.size());
}

/// Loads every scene in `dir`. A dense_NNNN.json next to a scene is used when
/// present; otherwise DSRecon runs in memory. All consistency checks happen
/// here, before any training step.
inline std::vector<Sample> load_dataset(const RunConfig& cfg, const std::string& dir) {
  const auto idx = list_scenes(dir);
  if (idx.empty()) throw std::ios_base::failure("no scene_NNNN.json files in " + dir);
  std::vector<Sample> out;
  for (int i : idx) {
    const auto seq = sim::read_sequence(dir + "/" + scene_file(i));
    const std::string dp = dir + "/" + dense_file(i);
    std::vector<dsrecon::DenseFrame> frames;
    if (std::filesystem::exists(dp)) {
      try {
        frames = dense_frames_from_json(sim::read_json_file(dp));
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(dp + ": " + e.what());
      }
      if (static_cast<int>(frames.size()) != seq.frame_count()) {
        throw ConfigError("data: " + dp + " has " + std::to_string(frames.size()) + " frames, scene has " +
                          std::to_string(seq.frame_count()));
      }
    } else {
      frames = run_dsrecon(seq, cfg);
    }
    if (cfg.data.key_frame > seq.frame_count()) {
      throw ConfigError("data: scene " + std::to_string(i) + " has fewer frames than the key frame");
    }
    out.push_back(build_sample(i, seq, frames[static_cast<std::size_t>(cfg.data.key_frame - 1)], cfg));
  }
  return out;
}

}  // namespace tb::harness
