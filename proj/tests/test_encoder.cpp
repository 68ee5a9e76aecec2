// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "transbridge/encoder/encoder.hpp"

using namespace tb;
using namespace tb::nn;
using tb::voxel::make_coords;

namespace {

CoordSetPtr random_active(std::mt19937_64& rng, int n, int lim = 8, int level = 1) {
  std::uniform_int_distribution<int> d(0, lim - 1);
  std::vector<VoxelCoord> v;
  for (int i = 0; i < n; ++i) v.push_back({d(rng), d(rng), d(rng)});
  return make_coords(CoordSet::from_unordered(level, v));
}

// Dense reference: zero-filled grid, every offset enumerated explicitly.
DenseArray dense_conv(const CoordSet& in, const DenseArray& x, const CoordSet& out, const DenseArray& w, Int3 kernel,
                      Int3 stride, int lim) {
  const std::size_t ci = w.dim(1), co = w.dim(2);
  std::vector<double> grid(static_cast<std::size_t>(lim * lim * lim) * ci, 0.0);
  auto at = [&](int a, int b, int c) { return ((static_cast<std::size_t>(a) * lim + b) * lim + c) * ci; };
  for (std::size_t r = 0; r < in.size(); ++r)
    for (std::size_t a = 0; a < ci; ++a) grid[at(in[r].x, in[r].y, in[r].z) + a] = x[r * ci + a];
  DenseArray y({out.size(), co});
  for (std::size_t o = 0; o < out.size(); ++o) {
    std::size_t k = 0;
    for (int dx = 0; dx < kernel[0]; ++dx)
      for (int dy = 0; dy < kernel[1]; ++dy)
        for (int dz = 0; dz < kernel[2]; ++dz, ++k) {
          const int px = out[o].x * stride[0] - ((kernel[0] - 1) / 2 - (stride[0] - 1) / 2) + dx;
          const int py = out[o].y * stride[1] - ((kernel[1] - 1) / 2 - (stride[1] - 1) / 2) + dy;
          const int pz = out[o].z * stride[2] - ((kernel[2] - 1) / 2 - (stride[2] - 1) / 2) + dz;
          if (px < 0 || py < 0 || pz < 0 || px >= lim || py >= lim || pz >= lim) continue;
          for (std::size_t a = 0; a < ci; ++a)
            for (std::size_t b = 0; b < co; ++b) y[o * co + b] += grid[at(px, py, pz) + a] * w[(k * ci + a) * co + b];
        }
  }
  return y;
}

std::size_t brute_pairs(const CoordSet& in, const CoordSet& out, Int3 kernel, Int3 stride) {
  std::size_t n = 0;
  for (const auto& o : out.coords())
    for (const auto& c : in.coords()) {
      bool hit = true;
      for (int a = 0; a < 3; ++a) {
        const int rel = c[a] - (o[a] * stride[a] - ((kernel[a] - 1) / 2 - (stride[a] - 1) / 2));
        hit = hit && rel >= 0 && rel < kernel[a];
      }
      n += hit;
    }
  return n;
}

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.channels = {3, 4, 4, 4, 5};
  return c;
}

}  // namespace

TEST_CASE("rulebook basics", "[encoder]") {
  const auto one = make_coords(CoordSet(1, {{3, 3, 3}}));
  const auto rb = build_submanifold_rulebook(one, {3, 3, 3});
  CHECK(*rb.out_coords == *one);
  CHECK(rb.pair_count() == 1);
  CHECK(rb.pairs[13].size() == 1);

  std::vector<VoxelCoord> kids;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      for (int z = 0; z < 2; ++z) kids.push_back({2 + x, 4 + y, 6 + z});
  const auto st = build_strided_rulebook(make_coords(CoordSet(1, kids)), {3, 3, 3}, {2, 2, 2});
  REQUIRE(st.out_coords->size() == 1);
  CHECK((*st.out_coords)[0] == VoxelCoord{1, 2, 3});
  CHECK(st.out_coords->level() == 2);

  CHECK_THROWS_AS(build_submanifold_rulebook(one, {2, 3, 3}), std::invalid_argument);
  CHECK_THROWS_AS(build_strided_rulebook(one, {3, 3, 3}, {1, 1, 5}), std::invalid_argument);
}

TEST_CASE("rulebook pair counts match brute-force enumeration", "[encoder]") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const auto in = random_active(rng, 20 + 7 * trial);
    const auto sub = build_submanifold_rulebook(in, {3, 3, 3});
    CHECK(sub.pair_count() == brute_pairs(*in, *sub.out_coords, {3, 3, 3}, {1, 1, 1}));
    const Int3 stride = trial % 2 ? Int3{2, 2, 2} : Int3{1, 1, 5};
    const Int3 kernel = trial % 2 ? Int3{3, 3, 3} : Int3{3, 3, 5};
    const auto st = build_strided_rulebook(in, kernel, stride);
    CHECK(st.pair_count() == brute_pairs(*in, *st.out_coords, kernel, stride));
    for (const auto& offs : st.pairs)
      for (const auto& [i, o] : offs) {
        CHECK(i < in->size());
        CHECK(o < st.out_coords->size());
      }
  }
}

TEST_CASE("identity kernel reproduces the input", "[encoder]") {
  std::mt19937_64 rng(2);
  const auto in = random_active(rng, 40);
  const auto x = tbtest::random_array({in->size(), 3}, rng);
  DenseArray w({27, 3, 3});
  for (std::size_t a = 0; a < 3; ++a) w[(13 * 3 + a) * 3 + a] = 1.0;
  ParamStore store;
  ad::Graph g(store);
  auto rb = std::make_shared<const Rulebook>(build_submanifold_rulebook(in, {3, 3, 3}));
  CHECK(g.value(sparse_conv(g.constant(x), rb, g.constant(w))) == x);
  CHECK_THROWS_AS(sparse_conv(g.constant(DenseArray({in->size(), 2})), rb, g.constant(w)), ShapeError);
}

TEST_CASE("sparse conv equals dense conv on random 8^3 grids", "[encoder]") {
  std::mt19937_64 rng(3);
  ParamStore store;
  for (int trial = 0; trial < 24; ++trial) {
    const auto in = random_active(rng, 10 + 9 * trial);
    const auto x = tbtest::random_array({in->size(), 3}, rng);
    const int mode = trial % 3;
    const Int3 kernel = mode == 2 ? Int3{3, 3, 5} : Int3{3, 3, 3};
    const Int3 stride = mode == 0 ? Int3{1, 1, 1} : (mode == 1 ? Int3{2, 2, 2} : Int3{1, 1, 5});
    const Rulebook rb = mode == 0 ? build_submanifold_rulebook(in, kernel) : build_strided_rulebook(in, kernel, stride);
    const auto w = tbtest::random_array({static_cast<std::size_t>(rb.volume()), 3, 4}, rng);
    ad::Graph g(store);
    const auto out = g.value(sparse_conv(g.constant(x), std::make_shared<const Rulebook>(rb), g.constant(w)));
    const auto ref = dense_conv(*in, x, *rb.out_coords, w, kernel, stride, 8);
    double err = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) err = std::max(err, std::abs(out[i] - ref[i]));
    CHECK(err < 1e-9);
  }
}

TEST_CASE("sparse conv gradients match finite differences", "[encoder]") {
  std::mt19937_64 rng(4);
  const auto in = random_active(rng, 30, 5);
  auto rb = std::make_shared<const Rulebook>(build_strided_rulebook(in, {3, 3, 3}, {2, 2, 2}));
  ParamStore store;
  const auto x = tbtest::random_array({in->size(), 2}, rng);
  const auto w = tbtest::random_array({27, 2, 3}, rng);
  const double err = tbtest::grad_check(store, {x, w}, [&](ad::Graph& g, const std::vector<ad::Var>& v) {
    return tbtest::project_to_scalar(g, ad::sigmoid(sparse_conv(v[0], rb, v[1])));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("encoder channel plan, sparsity and empty input", "[encoder]") {
  std::mt19937_64 rng(5);
  const EncoderConfig cfg;
  ParamStore store;
  init_encoder_params(store, cfg, rng);
  CHECK(store.contains("encoder.level1.subm0.w"));
  CHECK(store.contains("encoder.level5.down.w"));
  CHECK(store.at("encoder.level5.down.w").value.dims() == Dims{45, 64, 128});

  const auto in = random_active(rng, 300, 32);
  const auto feats = tbtest::random_array({in->size(), 5}, rng);
  ad::Graph g(store);
  const auto levels = encoder_forward(g, in, feats, cfg);
  REQUIRE(levels.size() == 5);
  const std::vector<std::size_t> ch{16, 32, 64, 64, 128};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(g.value(levels[i].features).dim(1) == ch[i]);
    CHECK(levels[i].level() == static_cast<int>(i + 1));
    if (i > 0) CHECK(levels[i].size() <= levels[i - 1].size());
  }
  CHECK(*levels[0].coords == *in);

  ad::Graph g2(store);
  const auto empty = encoder_forward(g2, make_coords(CoordSet(1, {})), DenseArray({0, 5}), cfg);
  for (const auto& l : empty) CHECK(l.size() == 0);
  CHECK_THROWS_AS(encoder_forward(g2, in, DenseArray({in->size(), 4}), cfg), ShapeError);

  EncoderConfig bad;
  bad.channels.pop_back();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("encoder is translation equivariant under stride-aligned shifts", "[encoder]") {
  std::mt19937_64 rng(6);
  const EncoderConfig cfg = tiny_config();
  ParamStore store;
  init_encoder_params(store, cfg, rng);
  const auto in = random_active(rng, 80, 16);
  const auto feats = tbtest::random_array({in->size(), 5}, rng);
  std::vector<VoxelCoord> shifted;
  for (const auto& c : in->coords()) shifted.push_back({c.x + 8, c.y + 16, c.z + 40});
  const auto in2 = make_coords(CoordSet(1, shifted));
  ad::Graph g(store);
  const auto a = encoder_forward(g, in, feats, cfg);
  const auto b = encoder_forward(g, in2, feats, cfg);
  for (std::size_t l = 0; l < a.size(); ++l) {
    REQUIRE(a[l].size() == b[l].size());
    Int3 div{1, 1, 1};
    for (std::size_t s = 0; s < l; ++s)
      for (int ax = 0; ax < 3; ++ax) div[ax] *= cfg.strides[s][ax];
    for (std::size_t r = 0; r < a[l].size(); ++r) {
      const VoxelCoord ca = (*a[l].coords)[r], cb = (*b[l].coords)[r];
      CHECK(cb.x - ca.x == 8 / div[0]);
      CHECK(cb.y - ca.y == 16 / div[1]);
      CHECK(cb.z - ca.z == 40 / div[2]);
    }
    CHECK(g.value(a[l].features) == g.value(b[l].features));
  }
}

TEST_CASE("proxy detection loss", "[encoder]") {
  std::mt19937_64 rng(7);
  const EncoderConfig cfg = tiny_config();
  ParamStore store;
  init_encoder_params(store, cfg, rng);
  const auto coords = make_coords(CoordSet(5, {{0, 0, 0}, {1, 0, 0}, {2, 3, 0}}));
  const DenseArray labels({3}, {1.0, 0.0, 1.0});

  {
    // zero head -> ln 2
    store.at("encoder.head.w").value = DenseArray({5, 1});
    ad::Graph g(store);
    const SparseMap top{coords, g.constant(tbtest::random_array({3, 5}, rng))};
    CHECK(g.value(proxy_detection_loss(top, labels)).item() == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  }
  {
    store.at("encoder.head.w").value = DenseArray({5, 1}, {1, 0, 0, 0, 0});
    ad::Graph g(store);
    const SparseMap top{coords, g.constant(DenseArray({3, 5}, {20, 0, 0, 0, 0, -20, 0, 0, 0, 0, 20, 0, 0, 0, 0}))};
    CHECK(g.value(proxy_detection_loss(top, labels)).item() < 1e-6);
    CHECK_THROWS_AS(proxy_detection_loss(top, DenseArray({2})), ShapeError);
  }
  store.at("encoder.head.w").value = tbtest::random_array({5, 1}, rng);
  ParamStore head;
  ad::add_linear_params(head, "encoder.head", 5, 1, rng);
  const double err = tbtest::grad_check(head, {tbtest::random_array({3, 5}, rng)},
                                        [&](ad::Graph&, const std::vector<ad::Var>& v) {
                                          return proxy_detection_loss(SparseMap{coords, v[0]}, labels);
                                        });
  CHECK(err < 1e-6);

  const voxel::GridConfig grid;
  const auto geom = grid.level(5);
  // a box centred on voxel (8,8): footprint 4 m x 2 m
  const Vec3 c = geom.center({8, 8, 0});
  const auto lab = detection_labels(CoordSet(5, {{8, 8, 0}, {0, 0, 0}}), geom, {{c.x, c.y, 0.4, 4.0, 2.0}});
  CHECK(lab[0] == 0.0);  // rows are coordinate-sorted
  CHECK(lab[1] == 1.0);
}

TEST_CASE("encoder gradients reach every stage", "[encoder]") {
  std::mt19937_64 rng(8);
  EncoderConfig cfg = tiny_config();
  cfg.channels = {2, 2, 3, 3, 2};
  ParamStore store;
  init_encoder_params(store, cfg, rng);
  const auto in = random_active(rng, 25, 8);
  const auto feats = tbtest::random_array({in->size(), 5}, rng);
  const double err = tbtest::grad_check(store, {}, [&](ad::Graph& g, const std::vector<ad::Var>&) {
    const auto lv = encoder_forward(g, in, feats, cfg);
    ad::Var acc = ad::sum(ad::sigmoid(detection_logits(lv.back())));
    for (const auto& l : lv) acc = ad::add(acc, tbtest::project_to_scalar(g, l.features));
    return acc;
  });
  CHECK(err < 1e-4);
}
