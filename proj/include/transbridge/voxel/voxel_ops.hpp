// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "transbridge/core/point_cloud.hpp"
#include "transbridge/voxel/grid.hpp"
#include "transbridge/voxel/sparse_tensor.hpp"

namespace tb::voxel {

struct VoxelizeResult {
  SparseVoxelTensor tensor;
  std::size_t dropped = 0;  // points outside the level extent
};

/// Voxel feature = mean of all channels of the points falling in it. Points in
/// a voxel are summed in lexicographic record order, so the result is
/// bit-identical under any permutation of the input.
inline VoxelizeResult voxelize(const PointCloud& points, const LevelGeometry& geom) {
  for (int a = 0; a < 3; ++a) {
    if (!(geom.voxel_size[a] > 0.0)) throw std::invalid_argument("voxelize: voxel size must be positive");
  }
  const std::size_t ch = points.channels;
  struct Entry {
    VoxelCoord c;
    std::size_t row;
  };
  std::vector<Entry> entries;
  entries.reserve(points.size());
  VoxelizeResult res;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const VoxelCoord c = geom.coord_of(points.position(i));
    if (!geom.contains(c)) {
      ++res.dropped;
      continue;
    }
    entries.push_back({c, i});
  }
  std::sort(entries.begin(), entries.end(), [&](const Entry& a, const Entry& b) {
    if (a.c != b.c) return a.c < b.c;
    auto ra = points.row(a.row), rb = points.row(b.row);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  std::vector<VoxelCoord> coords;
  std::vector<double> feats;
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i;
    std::vector<double> acc(ch, 0.0);
    while (j < entries.size() && entries[j].c == entries[i].c) {
      auto r = points.row(entries[j].row);
      for (std::size_t k = 0; k < ch; ++k) acc[k] += r[k];
      ++j;
    }
    const double n = static_cast<double>(j - i);
    for (double& v : acc) feats.push_back(v / n);
    coords.push_back(entries[i].c);
    i = j;
  }
  const std::size_t count = coords.size();
  res.tensor = SparseVoxelTensor(make_coords(CoordSet(geom.level, std::move(coords))),
                                 DenseArray::unchecked({count, ch}, std::move(feats)));
  return res;
}

/// Binary occupancy of a point set at one level; points outside `clip` (if
/// given) or outside the level extent are ignored.
inline CoordSet occupancy(const PointCloud& points, const LevelGeometry& geom, const LevelGeometry* clip = nullptr) {
  std::vector<VoxelCoord> coords;
  coords.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 p = points.position(i);
    if (clip && !clip->contains(clip->coord_of(p))) continue;
    const VoxelCoord c = geom.coord_of(p);
    if (geom.contains(c)) coords.push_back(c);
  }
  return CoordSet::from_unordered(geom.level, std::move(coords));
}

/// Parent occupied iff any child occupied; parent = floor(child / kernel).
inline CoordSet max_pool_occupancy(const CoordSet& occ, const Int3& kernel) {
  for (int k : kernel) {
    if (k < 1) throw std::invalid_argument("max_pool_occupancy: kernel components must be >= 1");
  }
  std::vector<VoxelCoord> parents;
  parents.reserve(occ.size());
  for (const VoxelCoord& c : occ.coords()) parents.push_back(floor_div(c, kernel));
  return CoordSet::from_unordered(occ.level() + 1, std::move(parents));
}

struct ChildExpansion {
  std::vector<VoxelCoord> coords;      // emission order: parent-major, offsets lexicographic
  std::vector<std::size_t> parent;     // parent row of each child
  std::vector<std::size_t> sub_index;  // lexicographic offset index in [0, S)
};

inline int sub_voxel_count(const Int3& kernel) { return kernel[0] * kernel[1] * kernel[2]; }

/// Every parent emits its S = prod(kernel) children; children outside
/// `extent` (the child level's grid) are dropped.
inline ChildExpansion expand_children(const CoordSet& parents, const Int3& kernel, const LevelGeometry* extent = nullptr) {
  ChildExpansion out;
  const std::size_t s = static_cast<std::size_t>(sub_voxel_count(kernel));
  out.coords.reserve(parents.size() * s);
  for (std::size_t p = 0; p < parents.size(); ++p) {
    const VoxelCoord& pc = parents[p];
    std::size_t idx = 0;
    for (int dx = 0; dx < kernel[0]; ++dx)
      for (int dy = 0; dy < kernel[1]; ++dy)
        for (int dz = 0; dz < kernel[2]; ++dz, ++idx) {
          const VoxelCoord c{pc.x * kernel[0] + dx, pc.y * kernel[1] + dy, pc.z * kernel[2] + dz};
          if (extent && !extent->contains(c)) continue;
          out.coords.push_back(c);
          out.parent.push_back(p);
          out.sub_index.push_back(idx);
        }
  }
  return out;
}

struct UnionAlignment {
  CoordSetPtr coords;
  std::vector<long> row_a;  // -1 where the coordinate is absent from a
  std::vector<long> row_b;
};

inline UnionAlignment align_union(const CoordSet& a, const CoordSet& b) {
  if (a.level() != b.level()) {
    throw std::invalid_argument("align_union: level mismatch " + std::to_string(a.level()) + " vs " +
                                std::to_string(b.level()));
  }
  UnionAlignment u;
  std::vector<VoxelCoord> merged;
  merged.reserve(a.size() + b.size());
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i] < b[j])) {
      merged.push_back(a[i]);
      u.row_a.push_back(static_cast<long>(i++));
      u.row_b.push_back(-1);
    } else if (i == a.size() || b[j] < a[i]) {
      merged.push_back(b[j]);
      u.row_a.push_back(-1);
      u.row_b.push_back(static_cast<long>(j++));
    } else {
      merged.push_back(a[i]);
      u.row_a.push_back(static_cast<long>(i++));
      u.row_b.push_back(static_cast<long>(j++));
    }
  }
  u.coords = make_coords(CoordSet(a.level(), std::move(merged)));
  return u;
}

/// One point per voxel at its geometric center.
inline PointCloud to_point_cloud(const CoordSet& occ, const LevelGeometry& geom) {
  PointCloud pc(3);
  pc.values.reserve(occ.size() * 3);
  for (const VoxelCoord& c : occ.coords()) pc.push(geom.center(c));
  return pc;
}

/// Centers of voxels whose score is strictly above `threshold`.
inline PointCloud to_point_cloud(const CoordSet& coords, const std::vector<double>& scores, double threshold,
                                 const LevelGeometry& geom) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("to_point_cloud: threshold outside [0,1]");
  if (scores.size() != coords.size()) throw std::invalid_argument("to_point_cloud: score/coord count mismatch");
  PointCloud pc(3);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (scores[i] > threshold) pc.push(geom.center(coords[i]));
  }
  return pc;
}

}  // namespace tb::voxel
