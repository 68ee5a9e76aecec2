// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "transbridge/core/point_cloud.hpp"
#include "transbridge/sim/transform.hpp"

namespace tb::sim {

/// Oriented box; `pose` maps box-frame points (origin at box center) to world.
struct Cuboid {
  RigidTransform pose;
  Vec3 extent{1, 1, 1};  // full length, width, height

  bool contains_local(Vec3 p, double tol = 0.0) const noexcept {
    return std::abs(p.x) <= 0.5 * extent.x + tol && std::abs(p.y) <= 0.5 * extent.y + tol &&
           std::abs(p.z) <= 0.5 * extent.z + tol;
  }
  bool contains(Vec3 world, double tol = 0.0) const { return contains_local(pose.inverse().apply(world), tol); }
};

/// Vertical cylinder standing on `base`.
struct Cylinder {
  Vec3 base{};
  double radius = 0.15;
  double height = 3.0;

  bool contains(Vec3 p, double tol = 0.0) const noexcept {
    const double dx = p.x - base.x, dy = p.y - base.y;
    return dx * dx + dy * dy <= (radius + tol) * (radius + tol) && p.z >= base.z - tol &&
           p.z <= base.z + height + tol;
  }
};

/// A tracked object moving at constant velocity; z of `start` is the box center height.
struct ObjectSpec {
  int id = 0;
  Vec3 extent{4.0, 1.8, 1.6};
  double yaw = 0.0;
  Vec3 start{};
  Vec3 velocity{};  // meters per frame

  RigidTransform world_pose(int frame) const {
    return RigidTransform::from_yaw(yaw, start + velocity * static_cast<double>(frame));
  }
  Cuboid box(int frame) const { return {world_pose(frame), extent}; }
};

struct SensorSpec {
  int rings = 32;
  double elevation_min_deg = -30.0;
  double elevation_max_deg = 10.0;
  double azimuth_step_deg = 0.4;
  double max_range = 60.0;
  double height = 1.8;
  double frame_dt = 0.1;  // seconds between frames; feeds the timestamp channel

  int azimuth_steps() const { return static_cast<int>(std::lround(360.0 / azimuth_step_deg)); }
  int max_points() const { return rings * azimuth_steps(); }
};

struct GenSpec {
  int frames = 5;
  int moving_objects = 2;
  int static_objects = 1;
  double speed_min = 0.5;  // meters per frame
  double speed_max = 1.0;
  Vec3 extent_min{3.5, 1.6, 1.4};
  Vec3 extent_max{4.8, 2.0, 1.9};
  int walls = 2;
  int poles = 2;
  double area_half = 12.0;  // placement square half-size around the ego start
  double ego_speed = 0.5;   // meters per frame along world +x
  double clearance = 0.5;
  int max_retries = 200;

  void validate() const {
    if (frames < 1) throw std::invalid_argument("scene spec: frames must be >= 1");
    if (moving_objects < 0 || static_objects < 0 || walls < 0 || poles < 0) {
      throw std::invalid_argument("scene spec: counts must be non-negative");
    }
    if (speed_min < 0.0 || speed_max < speed_min) throw std::invalid_argument("scene spec: bad speed range");
    for (int a = 0; a < 3; ++a) {
      if (!(extent_min[a] > 0.0) || extent_max[a] < extent_min[a]) {
        throw std::invalid_argument("scene spec: bad extent range");
      }
    }
    if (!(area_half > 0.0)) throw std::invalid_argument("scene spec: area_half must be positive");
    if (max_retries < 1) throw std::invalid_argument("scene spec: max_retries must be >= 1");
  }
};

/// World description from which every frame is rendered.
struct SceneDescription {
  std::uint64_t seed = 0;
  GenSpec spec;
  bool ground = true;  // plane z = 0
  std::vector<Cuboid> walls;
  std::vector<Cylinder> poles;
  std::vector<ObjectSpec> objects;
  std::vector<RigidTransform> ego;  // world-from-sensor per frame

  int frames() const { return static_cast<int>(ego.size()); }
};

namespace detail {

inline double dist_to_rect_bev(Vec3 p, const Cuboid& c) {
  const Vec3 l = c.pose.inverse().apply(p);
  const double dx = std::max(0.0, std::abs(l.x) - 0.5 * c.extent.x);
  const double dy = std::max(0.0, std::abs(l.y) - 0.5 * c.extent.y);
  return std::hypot(dx, dy);
}

inline double bev_radius(Vec3 extent) { return 0.5 * std::hypot(extent.x, extent.y); }

inline double bev_dist(Vec3 a, Vec3 b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace detail

/// Deterministic in (seed, spec). Objects never overlap each other, the static
/// geometry, or the ego vehicle in any frame.
inline SceneDescription generate_scene(std::uint64_t seed, const GenSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  SceneDescription scene;
  scene.seed = seed;
  scene.spec = spec;
  for (int t = 0; t < spec.frames; ++t) {
    scene.ego.push_back(RigidTransform::from_yaw(0.0, {spec.ego_speed * t, 0.0, 0.0}));
  }
  auto ego_pos = [&](int t) { return scene.ego[static_cast<std::size_t>(t)].translation; };
  const double ego_radius = 2.5;

  auto fail = [&](const std::string& what) {
    throw std::runtime_error("generate_scene: could not place " + what + " after " +
                             std::to_string(spec.max_retries) + " attempts (seed " + std::to_string(seed) + ")");
  };

  for (int w = 0; w < spec.walls; ++w) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      const Vec3 ext{uni(6.0, 12.0), 0.3, uni(2.0, 3.0)};
      const double yaw = uni(0.0, 1.0) < 0.5 ? 0.0 : 0.5 * std::numbers::pi;
      const Vec3 c{uni(-spec.area_half, spec.area_half), uni(-spec.area_half, spec.area_half), 0.5 * ext.z};
      Cuboid wall{RigidTransform::from_yaw(yaw, c), ext};
      bool ok = true;
      for (int t = 0; t < spec.frames && ok; ++t) ok = detail::dist_to_rect_bev(ego_pos(t), wall) > ego_radius + 1.0;
      if (ok) {
        scene.walls.push_back(wall);
        placed = true;
      }
    }
    if (!placed) fail("wall " + std::to_string(w));
  }

  for (int p = 0; p < spec.poles; ++p) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      Cylinder pole{{uni(-spec.area_half, spec.area_half), uni(-spec.area_half, spec.area_half), 0.0}, 0.15, 3.0};
      bool ok = true;
      for (int t = 0; t < spec.frames && ok; ++t) ok = detail::bev_dist(ego_pos(t), pole.base) > ego_radius + 1.0;
      for (const auto& w : scene.walls) ok = ok && detail::dist_to_rect_bev(pole.base, w) > pole.radius + spec.clearance;
      for (const auto& q : scene.poles) ok = ok && detail::bev_dist(q.base, pole.base) > 2 * pole.radius + spec.clearance;
      if (ok) {
        scene.poles.push_back(pole);
        placed = true;
      }
    }
    if (!placed) fail("pole " + std::to_string(p));
  }

  const int total = spec.moving_objects + spec.static_objects;
  for (int k = 0; k < total; ++k) {
    const bool moving = k < spec.moving_objects;
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      ObjectSpec obj;
      obj.id = k;
      obj.extent = {uni(spec.extent_min.x, spec.extent_max.x), uni(spec.extent_min.y, spec.extent_max.y),
                    uni(spec.extent_min.z, spec.extent_max.z)};
      obj.yaw = uni(-std::numbers::pi, std::numbers::pi);
      obj.start = {uni(-spec.area_half, spec.area_half), uni(-spec.area_half, spec.area_half), 0.5 * obj.extent.z};
      if (moving) {
        const double speed = uni(spec.speed_min, spec.speed_max);
        obj.velocity = {speed * std::cos(obj.yaw), speed * std::sin(obj.yaw), 0.0};
      }
      const double r = detail::bev_radius(obj.extent);
      bool ok = true;
      for (int t = 0; t < spec.frames && ok; ++t) {
        const Vec3 c = obj.world_pose(t).translation;
        ok = detail::bev_dist(c, ego_pos(t)) > r + ego_radius;
        for (const auto& w : scene.walls) ok = ok && detail::dist_to_rect_bev(c, w) > r + spec.clearance;
        for (const auto& q : scene.poles) ok = ok && detail::bev_dist(c, q.base) > r + q.radius + spec.clearance;
        for (const auto& o : scene.objects) {
          ok = ok && detail::bev_dist(c, o.world_pose(t).translation) >
                         r + detail::bev_radius(o.extent) + spec.clearance;
        }
      }
      if (ok) {
        scene.objects.push_back(obj);
        placed = true;
      }
    }
    if (!placed) fail("object " + std::to_string(k));
  }
  return scene;
}

struct RayHit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 point{};
  Vec3 normal{};
  int object = -1;  // track id, or -1 for background
};

namespace detail {

inline constexpr double kRayEps = 1e-9;

inline std::optional<RayHit> intersect_box(const Cuboid& box, Vec3 o, Vec3 d) {
  const RigidTransform inv = box.pose.inverse();
  const Vec3 ol = inv.apply(o);
  const Vec3 dl = inv.rotate(d);
  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  int axis = -1;
  double sign = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double h = 0.5 * box.extent[a];
    if (std::abs(dl[a]) < 1e-15) {
      if (ol[a] < -h || ol[a] > h) return std::nullopt;
      continue;
    }
    double t1 = (-h - ol[a]) / dl[a];
    double t2 = (h - ol[a]) / dl[a];
    double s = -1.0;
    if (t1 > t2) {
      std::swap(t1, t2);
      s = 1.0;
    }
    if (t1 > tmin) {
      tmin = t1;
      axis = a;
      sign = s;
    }
    tmax = std::min(tmax, t2);
  }
  if (axis < 0 || tmin > tmax || tmin <= kRayEps) return std::nullopt;
  RayHit hit;
  hit.t = tmin;
  Vec3 pl = ol + dl * tmin;
  for (int a = 0; a < 3; ++a) pl[a] = std::clamp(pl[a], -0.5 * box.extent[a], 0.5 * box.extent[a]);
  pl[axis] = sign * 0.5 * box.extent[axis];
  hit.point = box.pose.apply(pl);
  Vec3 nl{};
  nl[axis] = sign;
  hit.normal = box.pose.rotate(nl);
  return hit;
}

inline std::optional<RayHit> intersect_cylinder(const Cylinder& c, Vec3 o, Vec3 d) {
  std::optional<RayHit> best;
  const double ox = o.x - c.base.x, oy = o.y - c.base.y;
  const double a = d.x * d.x + d.y * d.y;
  if (a > 1e-15) {
    const double b = 2.0 * (ox * d.x + oy * d.y);
    const double cc = ox * ox + oy * oy - c.radius * c.radius;
    const double disc = b * b - 4.0 * a * cc;
    if (disc >= 0.0) {
      const double t = (-b - std::sqrt(disc)) / (2.0 * a);
      const double z = o.z + t * d.z;
      if (t > kRayEps && z >= c.base.z && z <= c.base.z + c.height) {
        RayHit h;
        h.t = t;
        h.point = o + d * t;
        h.normal = Vec3{h.point.x - c.base.x, h.point.y - c.base.y, 0.0} * (1.0 / c.radius);
        best = h;
      }
    }
  }
  if (std::abs(d.z) > 1e-15) {
    const double top = c.base.z + c.height;
    const double t = (top - o.z) / d.z;
    const Vec3 p = o + d * t;
    const double dx = p.x - c.base.x, dy = p.y - c.base.y;
    if (t > kRayEps && dx * dx + dy * dy <= c.radius * c.radius && (!best || t < best->t)) {
      RayHit h;
      h.t = t;
      h.point = {p.x, p.y, top};
      h.normal = {0, 0, 1};
      best = h;
    }
  }
  return best;
}

}  // namespace detail

/// Nearest surface hit within `max_range` along a unit-direction ray.
inline std::optional<RayHit> cast_ray(const SceneDescription& scene, int frame, Vec3 origin, Vec3 dir,
                                      double max_range) {
  std::optional<RayHit> best;
  auto consider = [&](std::optional<RayHit> h) {
    if (h && h->t <= max_range && (!best || h->t < best->t)) best = h;
  };
  if (scene.ground && dir.z < -1e-15) {
    const double t = -origin.z / dir.z;
    if (t > detail::kRayEps) {
      RayHit h;
      h.t = t;
      h.point = origin + dir * t;
      h.point.z = 0.0;
      h.normal = {0, 0, 1};
      consider(h);
    }
  }
  for (const auto& w : scene.walls) consider(detail::intersect_box(w, origin, dir));
  for (const auto& p : scene.poles) consider(detail::intersect_cylinder(p, origin, dir));
  for (const auto& obj : scene.objects) {
    auto h = detail::intersect_box(obj.box(frame), origin, dir);
    if (h) h->object = obj.id;
    consider(h);
  }
  return best;
}

/// True if `p` lies inside any solid of the scene at `frame` (ground counts as
/// the half-space z < 0).
inline bool inside_any_solid(const SceneDescription& scene, int frame, Vec3 p) {
  if (scene.ground && p.z < 0.0) return true;
  for (const auto& w : scene.walls)
    if (w.contains(p)) return true;
  for (const auto& c : scene.poles)
    if (c.contains(p)) return true;
  for (const auto& obj : scene.objects)
    if (obj.box(frame).contains(p)) return true;
  return false;
}

/// One LiDAR sweep in the sensor frame: records (x, y, z, intensity, timestamp)
/// plus the track id of the surface each ray hit (-1 for background).
struct LidarFrame {
  PointCloud points{5};
  std::vector<int> labels;
};

inline Vec3 ray_direction(const SensorSpec& sensor, int ring, int az) {
  const double el_deg = sensor.rings == 1 ? sensor.elevation_min_deg
                                          : sensor.elevation_min_deg + (sensor.elevation_max_deg - sensor.elevation_min_deg) *
                                                                           ring / (sensor.rings - 1);
  const double el = el_deg * std::numbers::pi / 180.0;
  const double azr = az * sensor.azimuth_step_deg * std::numbers::pi / 180.0;
  return {std::cos(el) * std::cos(azr), std::cos(el) * std::sin(azr), std::sin(el)};
}

inline LidarFrame simulate_lidar_frame(const SceneDescription& scene, int frame, const SensorSpec& sensor) {
  if (!(sensor.height > 0.0)) throw std::invalid_argument("simulate_lidar_frame: sensor must be above ground");
  const RigidTransform& ego = scene.ego.at(static_cast<std::size_t>(frame));
  const RigidTransform to_sensor = ego.inverse();
  const Vec3 origin = ego.apply({0.0, 0.0, sensor.height});
  const double ts = frame * sensor.frame_dt;
  LidarFrame out;
  const int steps = sensor.azimuth_steps();
  for (int r = 0; r < sensor.rings; ++r) {
    for (int a = 0; a < steps; ++a) {
      const Vec3 d = ego.rotate(ray_direction(sensor, r, a));
      auto hit = cast_ray(scene, frame, origin, d, sensor.max_range);
      if (!hit) continue;
      const double intensity = std::clamp(std::abs(dot(hit->normal, d)), 0.0, 1.0);
      const Vec3 p = to_sensor.apply(hit->point);
      out.points.push(std::vector<double>{p.x, p.y, p.z, intensity, ts});
      out.labels.push_back(hit->object);
    }
  }
  return out;
}

}  // namespace tb::sim
