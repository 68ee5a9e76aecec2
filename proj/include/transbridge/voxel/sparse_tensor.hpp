// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "transbridge/core/dense_array.hpp"
#include "transbridge/voxel/grid.hpp"

namespace tb::voxel {

/// Sorted, duplicate-free set of active coordinates at one level, with a hash
/// index from coordinate to dense row.
class CoordSet {
 public:
  CoordSet() = default;

  // Sorts `coords`; throws on duplicates.
  CoordSet(int level, std::vector<VoxelCoord> coords) : level_(level), coords_(std::move(coords)) {
    std::sort(coords_.begin(), coords_.end());
    if (std::adjacent_find(coords_.begin(), coords_.end()) != coords_.end()) {
      throw std::invalid_argument("CoordSet: duplicate coordinate at level " + std::to_string(level));
    }
    build_index();
  }

  // Sorts and removes duplicates.
  static CoordSet from_unordered(int level, std::vector<VoxelCoord> coords) {
    std::sort(coords.begin(), coords.end());
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    return CoordSet(level, std::move(coords));
  }

  int level() const noexcept { return level_; }
  std::size_t size() const noexcept { return coords_.size(); }
  bool empty() const noexcept { return coords_.empty(); }
  const std::vector<VoxelCoord>& coords() const noexcept { return coords_; }
  const VoxelCoord& operator[](std::size_t i) const noexcept { return coords_[i]; }

  long find(VoxelCoord c) const {
    auto it = index_.find(pack(c));
    return it == index_.end() ? -1 : static_cast<long>(it->second);
  }
  bool contains(VoxelCoord c) const { return index_.count(pack(c)) != 0; }

  friend bool operator==(const CoordSet& a, const CoordSet& b) {
    return a.level_ == b.level_ && a.coords_ == b.coords_;
  }

 private:
  void build_index() {
    index_.reserve(coords_.size());
    for (std::size_t i = 0; i < coords_.size(); ++i) index_.emplace(pack(coords_[i]), i);
  }

  int level_ = 1;
  std::vector<VoxelCoord> coords_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

using CoordSetPtr = std::shared_ptr<const CoordSet>;

inline CoordSetPtr make_coords(CoordSet s) { return std::make_shared<const CoordSet>(std::move(s)); }

/// Active coordinates with one feature row per coordinate ([num_active, channels]).
struct SparseVoxelTensor {
  CoordSetPtr coords = make_coords(CoordSet{});
  DenseArray features = DenseArray({0, 0});

  SparseVoxelTensor() = default;
  SparseVoxelTensor(CoordSetPtr c, DenseArray f) : coords(std::move(c)), features(std::move(f)) {
    if (features.rank() != 2 || features.dim(0) != coords->size()) {
      throw ShapeError("SparseVoxelTensor: features " + dims_to_string(features.dims()) + " for " +
                       std::to_string(coords->size()) + " active voxels");
    }
  }

  int level() const noexcept { return coords->level(); }
  std::size_t size() const noexcept { return coords->size(); }
  std::size_t channels() const { return features.dim(1); }
};

}  // namespace tb::voxel
