// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "transbridge/core/vec3.hpp"

namespace tb::voxel {

struct VoxelCoord {
  int x = 0;
  int y = 0;
  int z = 0;

  constexpr int operator[](int i) const noexcept { return i == 0 ? x : (i == 1 ? y : z); }
  friend constexpr auto operator<=>(const VoxelCoord&, const VoxelCoord&) = default;
};

using Int3 = std::array<int, 3>;
using Real3 = std::array<double, 3>;

constexpr int floor_div(int a, int b) noexcept { return a >= 0 ? a / b : -((-a + b - 1) / b); }

constexpr VoxelCoord floor_div(VoxelCoord c, const Int3& s) noexcept {
  return {floor_div(c.x, s[0]), floor_div(c.y, s[1]), floor_div(c.z, s[2])};
}

// Packs a coordinate into 64 bits; valid for |component| < 2^20.
constexpr std::uint64_t pack(VoxelCoord c) noexcept {
  constexpr std::int64_t bias = 1 << 20;
  return (static_cast<std::uint64_t>(c.x + bias) << 42) | (static_cast<std::uint64_t>(c.y + bias) << 21) |
         static_cast<std::uint64_t>(c.z + bias);
}

/// Geometry of one pyramid level: voxel size, shared origin, index extent.
struct LevelGeometry {
  int level = 1;
  Real3 voxel_size{0.1, 0.1, 0.2};
  Real3 origin{0.0, 0.0, 0.0};
  Int3 extent{128, 128, 16};

  bool contains(VoxelCoord c) const noexcept {
    return c.x >= 0 && c.y >= 0 && c.z >= 0 && c.x < extent[0] && c.y < extent[1] && c.z < extent[2];
  }

  Vec3 center(VoxelCoord c) const noexcept {
    return {origin[0] + (c.x + 0.5) * voxel_size[0], origin[1] + (c.y + 0.5) * voxel_size[1],
            origin[2] + (c.z + 0.5) * voxel_size[2]};
  }

  VoxelCoord coord_of(Vec3 p) const noexcept {
    return {static_cast<int>(std::floor((p.x - origin[0]) / voxel_size[0])),
            static_cast<int>(std::floor((p.y - origin[1]) / voxel_size[1])),
            static_cast<int>(std::floor((p.z - origin[2]) / voxel_size[2]))};
  }
};

/// Level-1 grid plus the per-transition strides that define levels 2..N.
/// Coarser extents are derived by ceiling division through the stride list.
struct GridConfig {
  Real3 voxel_size{0.1, 0.1, 0.2};
  Real3 origin{-6.4, -6.4, -0.3};
  Int3 extent{128, 128, 16};
  std::vector<Int3> strides{{2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {1, 1, 5}};

  int levels() const noexcept { return static_cast<int>(strides.size()) + 1; }

  // Stride of the transition from `level` to `level + 1`.
  const Int3& stride(int level) const { return strides.at(static_cast<std::size_t>(level - 1)); }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (!(voxel_size[a] > 0.0)) throw std::invalid_argument("grid: voxel_size must be positive on every axis");
      if (extent[a] <= 0) throw std::invalid_argument("grid: extent must be positive on every axis");
    }
    for (const auto& s : strides) {
      for (int v : s) {
        if (v < 1) throw std::invalid_argument("grid: stride components must be >= 1");
      }
    }
  }

  LevelGeometry level(int i) const {
    if (i < 1 || i > levels()) throw std::out_of_range("grid: level " + std::to_string(i) + " out of range");
    LevelGeometry g{1, voxel_size, origin, extent};
    for (int l = 1; l < i; ++l) {
      const Int3& s = stride(l);
      for (int a = 0; a < 3; ++a) {
        g.voxel_size[a] *= s[a];
        g.extent[a] = (g.extent[a] + s[a] - 1) / s[a];
      }
      g.level = l + 1;
    }
    return g;
  }
};

}  // namespace tb::voxel
