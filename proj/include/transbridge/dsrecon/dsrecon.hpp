// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <vector>

#include "transbridge/dsrecon/densify.hpp"
#include "transbridge/sim/sequence.hpp"
#include "transbridge/voxel/grid.hpp"
#include "transbridge/voxel/pyramid.hpp"
#include "transbridge/voxel/voxel_ops.hpp"

namespace tb::dsrecon {

using sim::RigidTransform;
using sim::SceneSequence;

struct AlignedForeground {
  int k = 0;
  std::vector<AlignedPoint> points;  // object frame
};

struct MergedBackground {
  std::vector<AlignedPoint> points;  // frame-1 coordinates
};

/// Dense per-frame cloud in the sensor frame of sweep t.
struct DenseFrame {
  int t = 1;
  RigidTransform ego_pose;
  PointCloud points{3};
  std::vector<int> fg_labels;
};

/// Object frame union of every sweep's points of track k.
inline AlignedForeground gather_foreground(const SceneSequence& seq, int k) {
  const sim::Track& tr = seq.track(k);
  if (tr.poses.size() != seq.frames.size()) {
    throw std::invalid_argument("gather_foreground: track " + std::to_string(k) + " has " +
                                std::to_string(tr.poses.size()) + " poses for " + std::to_string(seq.frames.size()) +
                                " frames");
  }
  AlignedForeground out{k, {}};
  for (const auto& f : seq.frames) {
    const RigidTransform inv = tr.poses[static_cast<std::size_t>(f.t - 1)].inverse();
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      if (f.fg_labels[i] != k) continue;
      const Vec3 p = f.points.position(i);
      out.points.push_back({inv.apply(p), f.t, p});
    }
  }
  return out;
}

/// Frame-1 union of all points not labeled foreground.
inline MergedBackground merge_background(const SceneSequence& seq) {
  MergedBackground out;
  for (const auto& f : seq.frames) {
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      if (f.fg_labels[i] >= 0) continue;
      const Vec3 p = f.points.position(i);
      out.points.push_back({f.ego_pose.apply(p), f.t, p});
    }
  }
  return out;
}

struct DSReconOptions {
  // Background points (frame-1 coordinates) farther than this in BEV from
  // every ego position are dropped before densification; <= 0 keeps all.
  double crop_radius = 0.0;
};

namespace detail {

// Maps an aligned point into sweep t. Points that came from a sweep are
// re-posed straight from their source coordinates.
inline Vec3 repose(const AlignedPoint& p, const RigidTransform& to_t,
                   const std::vector<RigidTransform>& source_to_t) {
  if (p.source_frame > 0) return source_to_t[static_cast<std::size_t>(p.source_frame - 1)].apply(p.source);
  return to_t.apply(p.pos);
}

inline std::vector<AlignedPoint> crop_background(std::vector<AlignedPoint> pts, const SceneSequence& seq, double radius) {
  if (radius <= 0.0) return pts;
  std::vector<Vec3> egos;
  for (const auto& f : seq.frames) egos.push_back(f.ego_pose.translation);
  std::erase_if(pts, [&](const AlignedPoint& p) {
    for (const Vec3& e : egos)
      if (std::hypot(p.pos.x - e.x, p.pos.y - e.y) <= radius) return false;
    return true;
  });
  return pts;
}

}  // namespace detail

/// Dense, smear-free cloud for every sweep: each aligned set is densified once
/// and re-posed per frame. Frame points are sorted by position.
inline std::vector<DenseFrame> compose_dsrecon(const SceneSequence& seq, const Densifier& densifier,
                                               const DSReconOptions& opt = {}) {
  const std::size_t T = seq.frames.size();
  struct Labeled {
    Vec3 p;
    int label;
  };
  std::vector<std::vector<Labeled>> per_frame(T);

  {
    const MergedBackground bg = merge_background(seq);
    const auto dense = densifier.apply(detail::crop_background(bg.points, seq, opt.crop_radius));
    for (std::size_t t = 0; t < T; ++t) {
      const RigidTransform to_t = seq.frames[t].ego_pose.inverse();
      std::vector<RigidTransform> src(T);
      for (std::size_t s = 0; s < T; ++s) src[s] = sim::relative(to_t, seq.frames[s].ego_pose.inverse());
      for (const auto& p : dense) per_frame[t].push_back({detail::repose(p, to_t, src), -1});
    }
  }
  for (const auto& tr : seq.tracks) {
    const auto dense = densifier.apply(gather_foreground(seq, tr.k).points);
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<RigidTransform> src(T);
      for (std::size_t s = 0; s < T; ++s) src[s] = sim::relative(tr.poses[t], tr.poses[s]);
      for (const auto& p : dense) per_frame[t].push_back({detail::repose(p, tr.poses[t], src), tr.k});
    }
  }

  std::vector<DenseFrame> out;
  out.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    auto& pts = per_frame[t];
    std::sort(pts.begin(), pts.end(), [](const Labeled& a, const Labeled& b) {
      return a.p < b.p || (a.p == b.p && a.label < b.label);
    });
    DenseFrame df;
    df.t = seq.frames[t].t;
    df.ego_pose = seq.frames[t].ego_pose;
    df.points.values.reserve(pts.size() * 3);
    for (const auto& l : pts) {
      df.points.push(l.p);
      df.fg_labels.push_back(l.label);
    }
    out.push_back(std::move(df));
  }
  return out;
}

/// All sweeps merged into sweep t using ego motion only (moving objects smear).
inline DenseFrame naive_merge(const SceneSequence& seq, int t) {
  const RigidTransform to_t = seq.frame(t).ego_pose.inverse();
  DenseFrame df;
  df.t = t;
  df.ego_pose = seq.frame(t).ego_pose;
  for (const auto& f : seq.frames) {
    const RigidTransform m = sim::relative(to_t, f.ego_pose.inverse());
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      df.points.push(m.apply(f.points.position(i)));
      df.fg_labels.push_back(f.fg_labels[i]);
    }
  }
  return df;
}

/// RMS distance, in the object frame, of an object's points from its box
/// (zero for points inside). Measures trailing smear of moving objects.
inline double object_smear(const DenseFrame& frame, int k, const RigidTransform& pose, Vec3 extent) {
  const RigidTransform inv = pose.inverse();
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    if (frame.fg_labels[i] != k) continue;
    const Vec3 l = inv.apply(frame.points.position(i));
    const double dx = std::max(0.0, std::abs(l.x) - 0.5 * extent.x);
    const double dy = std::max(0.0, std::abs(l.y) - 0.5 * extent.y);
    const double dz = std::max(0.0, std::abs(l.z) - 0.5 * extent.z);
    acc += dx * dx + dy * dy + dz * dz;
    ++n;
  }
  return n == 0 ? 0.0 : std::sqrt(acc / static_cast<double>(n));
}

/// Level-1 occupancy of the frame, pooled up through the configured strides.
inline voxel::ExistencePyramid build_existence_pyramid(const PointCloud& dense, const voxel::GridConfig& grid) {
  grid.validate();
  voxel::ExistencePyramid pyr;
  pyr.levels.push_back(voxel::occupancy(dense, grid.level(1)));
  for (int i = 1; i < grid.levels(); ++i) pyr.levels.push_back(voxel::max_pool_occupancy(pyr.levels.back(), grid.stride(i)));
  return pyr;
}

/// Frame JSON in the sequence schema (3-channel points).
inline nlohmann::json dense_frame_to_json(const DenseFrame& f) {
  sim::Frame fr;
  fr.t = f.t;
  fr.ego_pose = f.ego_pose;
  fr.points = f.points;
  fr.fg_labels = f.fg_labels;
  return sim::frame_to_json(fr);
}

inline DenseFrame dense_frame_from_json(const nlohmann::json& j) {
  const sim::Frame fr = sim::frame_from_json(j);
  if (fr.points.channels < 3) throw std::invalid_argument("dense frame: points need at least 3 channels");
  DenseFrame f;
  f.t = fr.t;
  f.ego_pose = fr.ego_pose;
  f.fg_labels = fr.fg_labels;
  for (std::size_t i = 0; i < fr.points.size(); ++i) f.points.push(fr.points.position(i));
  return f;
}

}  // namespace tb::dsrecon
