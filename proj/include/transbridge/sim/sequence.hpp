// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "transbridge/sim/scene.hpp"

namespace tb::sim {

struct Frame {
  int t = 1;                  // 1-based sweep index
  RigidTransform ego_pose;    // frame t -> frame 1
  PointCloud points{5};       // sensor frame: x, y, z, intensity, timestamp
  std::vector<int> fg_labels; // track id per point, -1 for background
};

struct Track {
  int k = 0;
  Vec3 extent{};                      // length, width, height
  std::vector<RigidTransform> poses;  // per frame: object frame -> sensor frame t
};

struct SceneSequence {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Frame> frames;
  std::vector<Track> tracks;

  int frame_count() const { return static_cast<int>(frames.size()); }
  const Frame& frame(int t) const { return frames.at(static_cast<std::size_t>(t - 1)); }

  const Track& track(int k) const {
    for (const auto& tr : tracks)
      if (tr.k == k) return tr;
    throw std::out_of_range("SceneSequence: unknown track " + std::to_string(k));
  }
};

inline nlohmann::json pose_to_json(const RigidTransform& p) {
  return {{"rotation", p.rotation}, {"translation", {p.translation.x, p.translation.y, p.translation.z}}};
}

inline RigidTransform pose_from_json(const nlohmann::json& j) {
  RigidTransform p;
  const auto& r = j.at("rotation");
  const auto& t = j.at("translation");
  if (r.size() != 9 || t.size() != 3) throw std::invalid_argument("pose: expected 9 rotation and 3 translation values");
  for (int i = 0; i < 9; ++i) p.rotation[static_cast<std::size_t>(i)] = r[static_cast<std::size_t>(i)].get<double>();
  p.translation = {t[0].get<double>(), t[1].get<double>(), t[2].get<double>()};
  return p;
}

inline nlohmann::json sensor_to_json(const SensorSpec& s) {
  return {{"rings", s.rings},
          {"elevation_min_deg", s.elevation_min_deg},
          {"elevation_max_deg", s.elevation_max_deg},
          {"azimuth_step_deg", s.azimuth_step_deg},
          {"max_range", s.max_range},
          {"height", s.height},
          {"frame_dt", s.frame_dt}};
}

inline nlohmann::json gen_spec_to_json(const GenSpec& g) {
  auto v3 = [](Vec3 v) { return nlohmann::json::array({v.x, v.y, v.z}); };
  return {{"frames", g.frames},       {"moving_objects", g.moving_objects}, {"static_objects", g.static_objects},
          {"speed_min", g.speed_min}, {"speed_max", g.speed_max},           {"extent_min", v3(g.extent_min)},
          {"extent_max", v3(g.extent_max)}, {"walls", g.walls},             {"poles", g.poles},
          {"area_half", g.area_half}, {"ego_speed", g.ego_speed},           {"clearance", g.clearance},
          {"max_retries", g.max_retries}};
}

/// Renders every frame of the scene. Frame 1 defines the reference frame.
inline SceneSequence render_sequence(const SceneDescription& scene, const SensorSpec& sensor) {
  SceneSequence seq;
  const int T = scene.frames();
  if (T < 1) throw std::invalid_argument("render_sequence: scene has no frames");
  const RigidTransform first_inv = scene.ego.front().inverse();
  for (int i = 0; i < T; ++i) {
    Frame f;
    f.t = i + 1;
    f.ego_pose = i == 0 ? RigidTransform::identity() : compose(first_inv, scene.ego[static_cast<std::size_t>(i)]);
    LidarFrame lf = simulate_lidar_frame(scene, i, sensor);
    f.points = std::move(lf.points);
    f.fg_labels = std::move(lf.labels);
    seq.frames.push_back(std::move(f));
  }
  for (const auto& obj : scene.objects) {
    Track tr;
    tr.k = obj.id;
    tr.extent = obj.extent;
    for (int i = 0; i < T; ++i) {
      tr.poses.push_back(compose(scene.ego[static_cast<std::size_t>(i)].inverse(), obj.world_pose(i)));
    }
    seq.tracks.push_back(std::move(tr));
  }
  nlohmann::json walls = nlohmann::json::array();
  for (const auto& w : scene.walls) {
    walls.push_back({{"pose", pose_to_json(w.pose)}, {"extent", {w.extent.x, w.extent.y, w.extent.z}}});
  }
  nlohmann::json poles = nlohmann::json::array();
  for (const auto& p : scene.poles) {
    poles.push_back({{"base", {p.base.x, p.base.y, p.base.z}}, {"radius", p.radius}, {"height", p.height}});
  }
  seq.meta = {{"seed", scene.seed},
              {"frames", T},
              {"sensor", sensor_to_json(sensor)},
              {"spec", gen_spec_to_json(scene.spec)},
              {"static_geometry", {{"ground", scene.ground}, {"walls", walls}, {"poles", poles}}}};
  return seq;
}

inline nlohmann::json frame_to_json(const Frame& f) {
  nlohmann::json pts = nlohmann::json::array();
  for (std::size_t i = 0; i < f.points.size(); ++i) {
    auto r = f.points.row(i);
    pts.push_back(nlohmann::json(std::vector<double>(r.begin(), r.end())));
  }
  return {{"t", f.t}, {"ego_pose", pose_to_json(f.ego_pose)}, {"points", std::move(pts)}, {"fg_labels", f.fg_labels}};
}

inline Frame frame_from_json(const nlohmann::json& j) {
  Frame f;
  f.t = j.at("t").get<int>();
  f.ego_pose = pose_from_json(j.at("ego_pose"));
  const auto& pts = j.at("points");
  std::size_t ch = pts.empty() ? 5 : pts[0].size();
  f.points = PointCloud(ch);
  for (const auto& p : pts) f.points.push(p.get<std::vector<double>>());
  f.fg_labels = j.at("fg_labels").get<std::vector<int>>();
  if (f.fg_labels.size() != f.points.size()) {
    throw std::invalid_argument("frame " + std::to_string(f.t) + ": fg_labels/points count mismatch");
  }
  return f;
}

inline nlohmann::json sequence_to_json(const SceneSequence& seq) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : seq.frames) frames.push_back(frame_to_json(f));
  nlohmann::json tracks = nlohmann::json::array();
  for (const auto& tr : seq.tracks) {
    nlohmann::json poses = nlohmann::json::array();
    for (const auto& p : tr.poses) poses.push_back(pose_to_json(p));
    tracks.push_back({{"k", tr.k}, {"extent", {tr.extent.x, tr.extent.y, tr.extent.z}}, {"poses", poses}});
  }
  return {{"meta", seq.meta}, {"frames", frames}, {"tracks", tracks}};
}

inline SceneSequence sequence_from_json(const nlohmann::json& j) {
  SceneSequence seq;
  seq.meta = j.value("meta", nlohmann::json::object());
  for (const auto& f : j.at("frames")) seq.frames.push_back(frame_from_json(f));
  for (const auto& tj : j.at("tracks")) {
    Track tr;
    tr.k = tj.at("k").get<int>();
    const auto& e = tj.at("extent");
    tr.extent = {e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>()};
    for (const auto& p : tj.at("poses")) tr.poses.push_back(pose_from_json(p));
    if (tr.poses.size() != seq.frames.size()) {
      throw std::invalid_argument("track " + std::to_string(tr.k) + ": pose count does not match frame count");
    }
    seq.tracks.push_back(std::move(tr));
  }
  if (seq.frames.empty()) throw std::invalid_argument("scene sequence has no frames");
  return seq;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::ios_base::failure("cannot open for writing: " + path);
  f << j.dump() << '\n';
  if (!f) throw std::ios_base::failure("write failed: " + path);
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::ios_base::failure("cannot open for reading: " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

inline void write_sequence(const std::string& path, const SceneSequence& seq) {
  write_json_file(path, sequence_to_json(seq));
}

inline SceneSequence read_sequence(const std::string& path) { return sequence_from_json(read_json_file(path)); }

}  // namespace tb::sim
