// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "transbridge/sim/sequence.hpp"

using namespace tb;
using namespace tb::sim;

namespace {

SensorSpec small_sensor() {
  SensorSpec s;
  s.rings = 8;
  s.azimuth_step_deg = 2.0;
  s.max_range = 30.0;
  return s;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

SceneDescription empty_scene(int frames) {
  SceneDescription s;
  s.ground = false;
  for (int t = 0; t < frames; ++t) s.ego.push_back(RigidTransform::identity());
  return s;
}

}  // namespace

TEST_CASE("transforms compose and invert", "[sim]") {
  const auto a = RigidTransform::from_yaw(0.7, {1, 2, 3});
  const auto b = RigidTransform::from_yaw(-1.3, {-4, 0.5, 0});
  const Vec3 p{0.3, -2.0, 1.1};
  const Vec3 q = compose(a, b).apply(p), r = a.apply(b.apply(p));
  CHECK(distance(q, r) < 1e-12);
  CHECK(distance(a.inverse().apply(a.apply(p)), p) < 1e-12);
  CHECK(rotation_orthonormality_error(compose(a, b)) < 1e-12);
  CHECK(determinant(a) == Catch::Approx(1.0));
  CHECK(relative(a, a).is_identity());
}

TEST_CASE("generate_scene is deterministic and writes identical files", "[sim]") {
  const GenSpec spec;
  const auto dir = std::filesystem::temp_directory_path();
  const std::string p1 = (dir / "tb_seq_a.json").string(), p2 = (dir / "tb_seq_b.json").string();
  write_sequence(p1, render_sequence(generate_scene(42, spec), small_sensor()));
  write_sequence(p2, render_sequence(generate_scene(42, spec), small_sensor()));
  CHECK(slurp(p1) == slurp(p2));
  CHECK(!slurp(p1).empty());

  const auto back = read_sequence(p1);
  const auto orig = render_sequence(generate_scene(42, spec), small_sensor());
  REQUIRE(back.frame_count() == orig.frame_count());
  CHECK(back.frame(3).points.values == orig.frame(3).points.values);
  CHECK(back.track(1).poses == orig.track(1).poses);
  CHECK(back.frame(2).ego_pose == orig.frame(2).ego_pose);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);

  CHECK_THROWS_AS(read_sequence((dir / "no_such_dir" / "x.json").string()), std::ios_base::failure);
  CHECK_THROWS_AS(orig.track(99), std::out_of_range);
}

TEST_CASE("generate_scene with no objects renders background only", "[sim]") {
  GenSpec spec;
  spec.moving_objects = 0;
  spec.static_objects = 0;
  const auto seq = render_sequence(generate_scene(1, spec), small_sensor());
  CHECK(seq.tracks.empty());
  for (const auto& f : seq.frames)
    for (int l : f.fg_labels) CHECK(l == -1);
}

TEST_CASE("zero speed keeps every track pose fixed", "[sim]") {
  GenSpec spec;
  spec.speed_min = spec.speed_max = 0.0;
  spec.ego_speed = 0.0;
  const auto seq = render_sequence(generate_scene(9, spec), small_sensor());
  for (const auto& tr : seq.tracks)
    for (const auto& p : tr.poses) CHECK(p == tr.poses.front());
}

TEST_CASE("infeasible placement fails after bounded retries", "[sim]") {
  GenSpec spec;
  spec.area_half = 1.0;  // everything collides with the ego vehicle
  spec.max_retries = 5;
  CHECK_THROWS_AS(generate_scene(3, spec), std::runtime_error);
  spec = GenSpec{};
  spec.frames = 0;
  CHECK_THROWS_AS(generate_scene(3, spec), std::invalid_argument);
}

TEST_CASE("a single ray hitting a wall at 10 m gives one point", "[sim]") {
  auto scene = empty_scene(1);
  // face at x = 10, spanning the sensor height
  scene.walls.push_back({RigidTransform::from_yaw(0.0, {10.15, 0.0, 1.8}), {0.3, 1.0, 1.0}});
  SensorSpec s;
  s.rings = 1;
  s.elevation_min_deg = 0.0;
  s.azimuth_step_deg = 90.0;
  s.max_range = 50.0;
  const auto f = simulate_lidar_frame(scene, 0, s);
  REQUIRE(f.points.size() == 1);
  CHECK(f.points.position(0).x == Catch::Approx(10.0));
  CHECK(f.points.position(0).y == Catch::Approx(0.0).margin(1e-12));
  CHECK(f.points.row(0)[3] == Catch::Approx(1.0));  // normal incidence
  CHECK(f.labels[0] == -1);

  s.height = 0.0;
  CHECK_THROWS_AS(simulate_lidar_frame(scene, 0, s), std::invalid_argument);
}

TEST_CASE("objects behind a wall are fully occluded", "[sim]") {
  auto scene = empty_scene(1);
  scene.ground = true;
  scene.walls.push_back({RigidTransform::from_yaw(0.0, {8.0, 0.0, 2.5}), {0.3, 30.0, 5.0}});
  ObjectSpec obj;
  obj.id = 0;
  obj.start = {14.0, 0.0, 0.8};
  scene.objects.push_back(obj);
  SensorSpec s;
  s.rings = 16;
  s.azimuth_step_deg = 1.0;
  const auto f = simulate_lidar_frame(scene, 0, s);
  CHECK(f.points.size() > 0);
  CHECK(std::count(f.labels.begin(), f.labels.end(), 0) == 0);

  scene.walls.clear();
  const auto g = simulate_lidar_frame(scene, 0, s);
  CHECK(std::count(g.labels.begin(), g.labels.end(), 0) > 0);
}

TEST_CASE("rendered sweeps respect ray budgets, labels and ray-cast correctness", "[sim]") {
  GenSpec spec;
  spec.frames = 3;
  const auto scene = generate_scene(17, spec);
  const auto sensor = small_sensor();
  const auto seq = render_sequence(scene, sensor);
  for (const auto& f : seq.frames) {
    CHECK(f.points.size() <= static_cast<std::size_t>(sensor.max_points()));
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      CHECK(f.points.row(i)[4] == Catch::Approx((f.t - 1) * sensor.frame_dt));
      const int k = f.fg_labels[i];
      if (k < 0) continue;
      // label oracle: the object-frame point lies on the annotated box
      const Vec3 local = seq.track(k).poses[static_cast<std::size_t>(f.t - 1)].inverse().apply(f.points.position(i));
      const Vec3 e = seq.track(k).extent;
      CHECK(std::abs(local.x) <= 0.5 * e.x + 1e-9);
      CHECK(std::abs(local.y) <= 0.5 * e.y + 1e-9);
      CHECK(std::abs(local.z) <= 0.5 * e.z + 1e-9);
    }
  }
  // march each ray and require free space strictly before the reported hit
  for (int t = 0; t < scene.frames(); ++t) {
    const auto& fr = seq.frames[static_cast<std::size_t>(t)];
    const auto& ego = scene.ego[static_cast<std::size_t>(t)];
    const Vec3 origin = ego.apply({0.0, 0.0, sensor.height});
    for (std::size_t i = 0; i < fr.points.size(); i += 7) {
      const Vec3 hit = ego.apply(fr.points.position(i));
      const double d = distance(hit, origin);
      const Vec3 dir = (hit - origin) * (1.0 / d);
      for (double s = 0.02; s < d - 1e-6; s += 0.02) CHECK_FALSE(inside_any_solid(scene, t, origin + dir * s));
    }
  }
}

TEST_CASE("single-frame sequences have identity ego pose", "[sim]") {
  GenSpec spec;
  spec.frames = 1;
  const auto seq = render_sequence(generate_scene(4, spec), small_sensor());
  REQUIRE(seq.frame_count() == 1);
  CHECK(seq.frame(1).ego_pose.is_identity());
}

TEST_CASE("static background aligns under the ego transforms", "[sim]") {
  GenSpec spec;
  spec.moving_objects = 0;
  spec.static_objects = 0;
  spec.ego_speed = 0.8;
  const auto scene = generate_scene(12, spec);
  const auto seq = render_sequence(scene, small_sensor());
  const auto& first = scene.ego.front();
  for (const auto& f : seq.frames) {
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      // frame-1 coordinates of a surface point must agree with the world geometry
      const Vec3 in1 = f.ego_pose.apply(f.points.position(i));
      const Vec3 world = first.apply(in1);
      const Vec3 direct = scene.ego[static_cast<std::size_t>(f.t - 1)].apply(f.points.position(i));
      CHECK(distance(world, direct) < 1e-9);
      bool on_surface = std::abs(world.z) < 1e-9;
      for (const auto& w : scene.walls) on_surface = on_surface || w.contains(world, 1e-9);
      for (const auto& p : scene.poles) on_surface = on_surface || p.contains(world, 1e-9);
      CHECK(on_surface);
    }
  }
}

TEST_CASE("object points map into the canonical box and poses stay rigid", "[sim]") {
  const auto seq = render_sequence(generate_scene(23, GenSpec{}), small_sensor());
  std::size_t fg = 0;
  for (const auto& tr : seq.tracks) {
    for (const auto& p : tr.poses) {
      CHECK(rotation_orthonormality_error(p) < 1e-12);
      CHECK(determinant(p) == Catch::Approx(1.0).epsilon(1e-12));
    }
  }
  for (const auto& f : seq.frames) {
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      const int k = f.fg_labels[i];
      if (k < 0) continue;
      ++fg;
      const auto& tr = seq.track(k);
      const Vec3 local = tr.poses[static_cast<std::size_t>(f.t - 1)].inverse().apply(f.points.position(i));
      CHECK(std::abs(local.x) <= 0.5 * tr.extent.x + 1e-9);
      CHECK(std::abs(local.y) <= 0.5 * tr.extent.y + 1e-9);
      CHECK(std::abs(local.z) <= 0.5 * tr.extent.z + 1e-9);
    }
  }
  CHECK(fg > 0);
}
