// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "transbridge/core/vec3.hpp"

namespace tb::dsrecon {

/// A point in an aligned set. Points taken from a sweep remember where they
/// came from so they can be re-posed without a round trip through the aligned
/// frame; synthesized points have source_frame == 0.
struct AlignedPoint {
  Vec3 pos;
  int source_frame = 0;  // 1-based sweep index, 0 if synthesized
  Vec3 source{};         // coordinates in the source sweep's sensor frame

  friend bool operator<(const AlignedPoint& a, const AlignedPoint& b) {
    return std::tie(a.pos, a.source_frame, a.source) < std::tie(b.pos, b.source_frame, b.source);
  }
};

struct DensifyParams {
  double radius = 0.4;          // neighbor radius r
  int rounds = 2;               // d
  double spacing = 0.1;         // resample cell size
  std::size_t min_points = 200; // sets with at most this many points are returned unchanged

  void validate() const {
    if (!(radius > 0.0)) throw std::invalid_argument("densify: radius must be positive");
    if (!(spacing > 0.0)) throw std::invalid_argument("densify: spacing must be positive");
    if (rounds < 0) throw std::invalid_argument("densify: rounds must be non-negative");
  }
};

namespace detail {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

inline CellKey cell_of(Vec3 p, double size) {
  return {static_cast<std::int64_t>(std::floor(p.x / size)), static_cast<std::int64_t>(std::floor(p.y / size)),
          static_cast<std::int64_t>(std::floor(p.z / size))};
}

/// Uniform hash grid over a fixed point list.
class HashGrid {
 public:
  HashGrid(const std::vector<Vec3>& pts, double cell) : pts_(&pts), cell_(cell) {
    for (std::size_t i = 0; i < pts.size(); ++i) cells_[cell_of(pts[i], cell)].push_back(i);
  }

  // Calls fn(j) for every stored point within `r` of p (r <= cell size).
  template <typename Fn>
  void for_each_near(Vec3 p, double r, Fn&& fn) const {
    const CellKey c = cell_of(p, cell_);
    const double r2 = r * r;
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == cells_.end()) continue;
          for (std::size_t j : it->second) {
            const Vec3 d = (*pts_)[j] - p;
            if (dot(d, d) <= r2) fn(j);
          }
        }
  }

  bool any_within(Vec3 p, double r) const {
    bool found = false;
    for_each_near(p, r, [&](std::size_t) { found = true; });
    return found;
  }

 private:
  const std::vector<Vec3>* pts_;
  double cell_;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> cells_;
};

inline std::vector<Vec3> positions(const std::vector<AlignedPoint>& pts) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(p.pos);
  return out;
}

}  // namespace detail

/// Removes exactly coincident positions, keeping the lexicographically first
/// record; output is sorted.
inline std::vector<AlignedPoint> dedup_points(std::vector<AlignedPoint> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end(), [](const AlignedPoint& a, const AlignedPoint& b) { return a.pos == b.pos; }),
            pts.end());
  return pts;
}

/// Keeps, per spacing-sized cell, the point nearest the cell center (ties
/// broken by record order). Output is sorted by cell.
inline std::vector<AlignedPoint> grid_resample(const std::vector<AlignedPoint>& pts, double spacing) {
  struct Best {
    detail::CellKey cell;
    std::size_t idx;
    double d2;
  };
  std::unordered_map<detail::CellKey, std::size_t, detail::CellHash> slot;
  std::vector<Best> best;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto c = detail::cell_of(pts[i].pos, spacing);
    const Vec3 center{(c.x + 0.5) * spacing, (c.y + 0.5) * spacing, (c.z + 0.5) * spacing};
    const Vec3 d = pts[i].pos - center;
    const double d2 = dot(d, d);
    auto [it, inserted] = slot.emplace(c, best.size());
    if (inserted) {
      best.push_back({c, i, d2});
    } else {
      Best& b = best[it->second];
      if (d2 < b.d2 || (d2 == b.d2 && pts[i] < pts[b.idx])) {
        b.idx = i;
        b.d2 = d2;
      }
    }
  }
  std::sort(best.begin(), best.end(), [](const Best& a, const Best& b) {
    return std::tie(a.cell.x, a.cell.y, a.cell.z) < std::tie(b.cell.x, b.cell.y, b.cell.z);
  });
  std::vector<AlignedPoint> out;
  out.reserve(best.size());
  for (const auto& b : best) out.push_back(pts[b.idx]);
  return out;
}

/// Midpoints of neighbor pairs within `radius`, restricted to points that stay
/// within radius/2 of the original set. Deterministic given the input order.
inline std::vector<AlignedPoint> midpoint_round(const std::vector<AlignedPoint>& current,
                                                const detail::HashGrid& originals, double radius) {
  const std::vector<Vec3> pos = detail::positions(current);
  detail::HashGrid grid(pos, radius);
  std::vector<AlignedPoint> mids;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    grid.for_each_near(pos[i], radius, [&](std::size_t j) {
      if (j <= i) return;
      const Vec3 m = (pos[i] + pos[j]) * 0.5;
      if (originals.any_within(m, 0.5 * radius)) mids.push_back({m, 0, {}});
    });
  }
  return mids;
}

/// Default densifier: `rounds` of midpoint insertion each followed by a grid
/// resample. Sets with at most `min_points` points are returned unchanged.
inline std::vector<AlignedPoint> densify(const std::vector<AlignedPoint>& input, const DensifyParams& params) {
  params.validate();
  if (input.size() <= params.min_points) return input;
  std::vector<AlignedPoint> current = dedup_points(input);
  if (current.size() <= params.min_points) return current;
  const std::vector<Vec3> orig_pos = detail::positions(current);
  const detail::HashGrid originals(orig_pos, 0.5 * params.radius);
  for (int round = 0; round < params.rounds; ++round) {
    std::vector<AlignedPoint> mids = midpoint_round(current, originals, params.radius);
    current.insert(current.end(), mids.begin(), mids.end());
    current = grid_resample(dedup_points(std::move(current)), params.spacing);
  }
  if (params.rounds == 0) current = grid_resample(current, params.spacing);
  return current;
}

inline std::vector<Vec3> densify(const std::vector<Vec3>& input, const DensifyParams& params) {
  std::vector<AlignedPoint> pts;
  pts.reserve(input.size());
  for (const auto& p : input) pts.push_back({p, 0, {}});
  return detail::positions(densify(pts, params));
}

/// Pluggable reconstruction step applied to each aligned set.
class Densifier {
 public:
  virtual ~Densifier() = default;
  virtual std::vector<AlignedPoint> apply(const std::vector<AlignedPoint>& pts) const = 0;
};

class IdentityDensifier final : public Densifier {
 public:
  std::vector<AlignedPoint> apply(const std::vector<AlignedPoint>& pts) const override { return pts; }
};

class MidpointDensifier final : public Densifier {
 public:
  explicit MidpointDensifier(DensifyParams p = {}) : params_(p) { params_.validate(); }
  std::vector<AlignedPoint> apply(const std::vector<AlignedPoint>& pts) const override {
    return densify(pts, params_);
  }
  const DensifyParams& params() const noexcept { return params_; }

 private:
  DensifyParams params_;
};

}  // namespace tb::dsrecon
