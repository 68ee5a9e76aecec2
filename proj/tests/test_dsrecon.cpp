// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "transbridge/dsrecon/dsrecon.hpp"

using namespace tb;
using namespace tb::dsrecon;
using sim::RigidTransform;

namespace {

const Vec3 kBox{4.0, 2.0, 1.5};

// Surface samples of kBox in its own frame.
std::vector<Vec3> box_surface(double step) {
  std::vector<Vec3> pts;
  const double hx = kBox.x / 2, hy = kBox.y / 2, hz = kBox.z / 2;
  for (double x = -hx; x <= hx + 1e-9; x += step)
    for (double y = -hy; y <= hy + 1e-9; y += step) pts.push_back({x, y, hz});
  for (double x = -hx; x <= hx + 1e-9; x += step)
    for (double z = -hz; z <= hz + 1e-9; z += step) pts.push_back({x, -hy, z});
  return pts;
}

// One object moving `speed` m/frame along x, a flat static patch, ego fixed.
sim::SceneSequence moving_box_sequence(int frames, double speed, double yaw = 0.3) {
  sim::SceneSequence seq;
  sim::Track tr;
  tr.k = 0;
  tr.extent = kBox;
  const auto surface = box_surface(0.25);
  for (int t = 1; t <= frames; ++t) {
    const auto pose = RigidTransform::from_yaw(yaw, {5.0 + speed * (t - 1) * std::cos(yaw), 2.0 + speed * (t - 1) * std::sin(yaw), 0.75});
    tr.poses.push_back(pose);
    sim::Frame f;
    f.t = t;
    for (const Vec3& s : surface) {
      const Vec3 p = pose.apply(s);
      f.points.push(std::vector<double>{p.x, p.y, p.z, 0.5, 0.1 * (t - 1)});
      f.fg_labels.push_back(0);
    }
    for (int i = 0; i < 10; ++i) {
      f.points.push(std::vector<double>{-3.0 + 0.3 * i, -4.0, 0.0, 0.5, 0.1 * (t - 1)});
      f.fg_labels.push_back(-1);
    }
    seq.frames.push_back(std::move(f));
  }
  seq.tracks.push_back(tr);
  return seq;
}

double axis_spread(const std::vector<AlignedPoint>& pts) {
  double lo = 1e300, hi = -1e300;
  for (const auto& p : pts) {
    lo = std::min(lo, p.pos.x);
    hi = std::max(hi, p.pos.x);
  }
  return hi - lo;
}

sim::SensorSpec test_sensor() {
  sim::SensorSpec s;
  s.rings = 16;
  s.azimuth_step_deg = 1.0;
  s.max_range = 30.0;
  return s;
}

}  // namespace

TEST_CASE("gather_foreground aligns a stationary object to the plain union", "[dsrecon]") {
  auto seq = moving_box_sequence(3, 0.0, 0.0);
  for (auto& p : seq.tracks[0].poses) p = RigidTransform::identity();
  for (auto& f : seq.frames) f.points = [&] {
    PointCloud pc(5);
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      auto r = f.points.row(i);
      pc.push(std::vector<double>(r.begin(), r.end()));
    }
    return pc;
  }();
  const auto fg = gather_foreground(seq, 0);
  std::size_t n = 0;
  for (const auto& f : seq.frames) n += static_cast<std::size_t>(std::count(f.fg_labels.begin(), f.fg_labels.end(), 0));
  REQUIRE(fg.points.size() == n);
  std::size_t i = 0;
  for (const auto& f : seq.frames)
    for (std::size_t r = 0; r < f.points.size(); ++r)
      if (f.fg_labels[r] == 0) CHECK(fg.points[i++].pos == f.points.position(r));
  CHECK_THROWS_AS(gather_foreground(seq, 5), std::out_of_range);
}

TEST_CASE("gather_foreground removes motion smear", "[dsrecon]") {
  const auto seq = moving_box_sequence(5, 1.0, 0.0);
  const auto fg = gather_foreground(seq, 0);
  CHECK(axis_spread(fg.points) <= kBox.x + 1e-9);

  std::vector<AlignedPoint> naive;
  for (const auto& f : seq.frames)
    for (std::size_t i = 0; i < f.points.size(); ++i)
      if (f.fg_labels[i] == 0) naive.push_back({f.points.position(i), f.t, {}});
  CHECK(axis_spread(naive) >= kBox.x + 4.0 - 1e-9);

  auto one = moving_box_sequence(3, 1.0);
  for (std::size_t t = 1; t < 3; ++t) std::fill(one.frames[t].fg_labels.begin(), one.frames[t].fg_labels.end(), -1);
  const auto only = gather_foreground(one, 0);
  for (const auto& p : only.points) CHECK(p.source_frame == 1);
  CHECK(only.points.size() == box_surface(0.25).size());
}

TEST_CASE("merge_background", "[dsrecon]") {
  auto seq = moving_box_sequence(1, 0.0);
  const auto single = merge_background(seq);
  REQUIRE(single.points.size() == 10);
  CHECK(single.points[3].pos == Vec3{-3.0 + 0.9, -4.0, 0.0});

  for (auto& f : seq.frames) std::fill(f.fg_labels.begin(), f.fg_labels.end(), 0);
  CHECK(merge_background(seq).points.empty());

  // static world, moving ego: walls stay thin after merging
  sim::GenSpec spec;
  spec.moving_objects = spec.static_objects = 0;
  spec.ego_speed = 1.0;
  const auto scene = sim::generate_scene(31, spec);
  const auto s2 = sim::render_sequence(scene, test_sensor());
  const auto bg = merge_background(s2);
  std::size_t total = 0;
  for (const auto& f : s2.frames) total += f.points.size();
  CHECK(bg.points.size() == total);
  const auto& wall = scene.walls.front();
  const auto to_wall = compose(wall.pose.inverse(), scene.ego.front());
  double lo = 1e300, hi = -1e300;
  std::size_t on_wall = 0;
  for (const auto& p : bg.points) {
    const Vec3 l = to_wall.apply(p.pos);
    if (std::abs(l.x) > 0.5 * wall.extent.x - 0.05 || std::abs(l.z) > 0.5 * wall.extent.z - 0.05 ||
        std::abs(l.y) > 0.5 * wall.extent.y + 0.05)
      continue;
    ++on_wall;
    lo = std::min(lo, l.y);
    hi = std::max(hi, l.y);
  }
  if (on_wall > 0) CHECK(hi - lo < 2 * 0.1 + wall.extent.y);
}

TEST_CASE("densify inserts midpoints and stays local", "[dsrecon]") {
  std::vector<Vec3> line;
  for (int i = 0; i < 201; ++i) line.push_back({0.2 * i, 0.0, 0.0});
  DensifyParams p;
  p.radius = 0.3;
  p.rounds = 1;
  p.spacing = 0.01;
  const auto out = densify(line, p);
  REQUIRE(out.size() == 401);
  std::vector<double> xs;
  for (const auto& v : out) xs.push_back(v.x);
  std::sort(xs.begin(), xs.end());
  for (std::size_t i = 1; i < xs.size(); ++i) CHECK(xs[i] - xs[i - 1] == Catch::Approx(0.1));

  std::vector<Vec3> two_hundred(line.begin(), line.begin() + 200);
  std::reverse(two_hundred.begin(), two_hundred.end());
  CHECK(densify(two_hundred, p) == two_hundred);

  DensifyParams bad = p;
  bad.radius = 0.0;
  CHECK_THROWS_AS(densify(line, bad), std::invalid_argument);
  bad = p;
  bad.spacing = -1.0;
  CHECK_THROWS_AS(densify(line, bad), std::invalid_argument);
}

TEST_CASE("densify output is within r/2 of the input on random clusters", "[dsrecon]") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n(0.0, 0.4);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Vec3> in;
    for (int c = 0; c < 4; ++c) {
      const Vec3 center{3.0 * c, static_cast<double>(trial), 0.0};
      for (int i = 0; i < 120; ++i) in.push_back(center + Vec3{n(rng), n(rng), n(rng)});
    }
    DensifyParams p;
    const auto out = densify(in, p);
    CHECK(out == densify(in, p));
    for (const auto& q : out) {
      double best = 1e300;
      for (const auto& s : in) best = std::min(best, distance(q, s));
      CHECK(best <= 0.5 * p.radius + 1e-12);
    }
  }
}

TEST_CASE("densify removes coincident duplicates first", "[dsrecon]") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 150; ++i) {
    pts.push_back({0.05 * i, 0.0, 0.0});
    pts.push_back({0.05 * i, 0.0, 0.0});
  }
  CHECK(densify(pts, DensifyParams{}).size() == 150);  // 150 unique points: at or below the threshold
}

TEST_CASE("compose_dsrecon with identity densifier reproduces a static single frame", "[dsrecon]") {
  sim::GenSpec spec;
  spec.frames = 1;
  spec.speed_min = spec.speed_max = 0.0;
  const auto seq = sim::render_sequence(sim::generate_scene(5, spec), test_sensor());
  const auto dense = compose_dsrecon(seq, IdentityDensifier{});
  REQUIRE(dense.size() == 1);
  std::set<Vec3> a, b;
  for (std::size_t i = 0; i < dense[0].points.size(); ++i) a.insert(dense[0].points.position(i));
  for (std::size_t i = 0; i < seq.frame(1).points.size(); ++i) b.insert(seq.frame(1).points.position(i));
  CHECK(a == b);
}

TEST_CASE("static scenes match the naive merge exactly", "[dsrecon]") {
  sim::GenSpec spec;
  spec.speed_min = spec.speed_max = 0.0;
  spec.ego_speed = 0.0;
  const auto seq = sim::render_sequence(sim::generate_scene(8, spec), test_sensor());
  const auto dense = compose_dsrecon(seq, IdentityDensifier{});
  for (int t = 1; t <= seq.frame_count(); ++t) {
    const auto naive = naive_merge(seq, t);
    std::set<Vec3> a, b;
    for (std::size_t i = 0; i < dense[static_cast<std::size_t>(t - 1)].points.size(); ++i)
      a.insert(dense[static_cast<std::size_t>(t - 1)].points.position(i));
    for (std::size_t i = 0; i < naive.points.size(); ++i) b.insert(naive.points.position(i));
    CHECK(a == b);
  }
}

TEST_CASE("re-posed objects follow the annotated poses", "[dsrecon]") {
  const auto seq = moving_box_sequence(5, 1.0);
  const MidpointDensifier dens;
  const auto canonical = dens.apply(gather_foreground(seq, 0).points);
  Vec3 c0{};
  for (const auto& p : canonical) c0 = c0 + p.pos;
  c0 = c0 * (1.0 / static_cast<double>(canonical.size()));
  const auto dense = compose_dsrecon(seq, dens);
  for (const auto& df : dense) {
    Vec3 c{};
    std::size_t n = 0;
    for (std::size_t i = 0; i < df.points.size(); ++i) {
      if (df.fg_labels[i] != 0) continue;
      c = c + df.points.position(i);
      ++n;
    }
    REQUIRE(n == canonical.size());
    c = c * (1.0 / static_cast<double>(n));
    CHECK(distance(seq.tracks[0].poses[static_cast<std::size_t>(df.t - 1)].apply(c0), c) < 1e-9);
  }
}

TEST_CASE("moving objects lose their trailing smear", "[dsrecon]") {
  sim::GenSpec spec;
  spec.speed_min = 0.5;
  spec.speed_max = 1.0;
  const auto seq = sim::render_sequence(sim::generate_scene(14, spec), test_sensor());
  const auto dense = compose_dsrecon(seq, MidpointDensifier{}, DSReconOptions{20.0});
  double naive_total = 0.0;
  for (const auto& tr : seq.tracks) {
    for (int t = 1; t <= seq.frame_count(); ++t) {
      const auto& pose = tr.poses[static_cast<std::size_t>(t - 1)];
      const double ours = object_smear(dense[static_cast<std::size_t>(t - 1)], tr.k, pose, tr.extent);
      const double naive = object_smear(naive_merge(seq, t), tr.k, pose, tr.extent);
      naive_total += naive;
      CHECK(ours <= naive / 5.0 + 1e-9);
    }
  }
  CHECK(naive_total > 0.0);
}

TEST_CASE("existence pyramids", "[dsrecon]") {
  const voxel::GridConfig grid;
  const auto empty = build_existence_pyramid(PointCloud(3), grid);
  REQUIRE(empty.depth() == 5);
  for (int i = 1; i <= 5; ++i) CHECK(empty.level(i).empty());

  PointCloud one(3);
  one.push(Vec3{1.0, -2.0, 0.5});
  const auto single = build_existence_pyramid(one, grid);
  for (int i = 1; i <= 5; ++i) CHECK(single.level(i).size() == 1);

  const auto seq = moving_box_sequence(3, 1.0);
  const auto dense = compose_dsrecon(seq, MidpointDensifier{});
  const auto pyr = build_existence_pyramid(dense[1].points, grid);
  const auto l1 = grid.level(1);
  CHECK(pyr.level(3) == voxel::occupancy(dense[1].points, grid.level(3), &l1));
  for (int i = 1; i < 5; ++i) CHECK(voxel::max_pool_occupancy(pyr.level(i), grid.stride(i)) == pyr.level(i + 1));
}

TEST_CASE("dense frames serialize in the sequence frame schema", "[dsrecon]") {
  const auto seq = moving_box_sequence(2, 1.0);
  const auto dense = compose_dsrecon(seq, IdentityDensifier{});
  const auto j = dense_frame_to_json(dense[1]);
  CHECK(j.at("t") == 2);
  CHECK(j.at("points")[0].size() == 3);
  const auto back = dense_frame_from_json(j);
  CHECK(back.points.values == dense[1].points.values);
  CHECK(back.fg_labels == dense[1].fg_labels);
}
