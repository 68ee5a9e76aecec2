// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "transbridge/voxel/sparse_tensor.hpp"

namespace tb::voxel {

/// Binary occupancy labels for levels 1..N (element 0 is level 1).
struct ExistencePyramid {
  std::vector<CoordSet> levels;

  int depth() const noexcept { return static_cast<int>(levels.size()); }
  const CoordSet& level(int i) const { return levels.at(static_cast<std::size_t>(i - 1)); }
};

/// Per-level voxel dump record: {"level":i,"coord":[x,y,z],"value":v}.
struct VoxelRecord {
  int level = 1;
  VoxelCoord coord;
  double value = 0.0;
};

inline void write_voxel_records(std::ostream& os, int level, const CoordSet& coords, const std::vector<double>& values) {
  if (values.size() != coords.size()) throw std::invalid_argument("write_voxel_records: value count mismatch");
  for (std::size_t i = 0; i < coords.size(); ++i) {
    nlohmann::json rec;
    rec["level"] = level;
    rec["coord"] = {coords[i].x, coords[i].y, coords[i].z};
    rec["value"] = values[i];
    os << rec.dump() << '\n';
  }
}

inline void write_pyramid(std::ostream& os, const ExistencePyramid& pyr) {
  for (int i = 1; i <= pyr.depth(); ++i) {
    write_voxel_records(os, i, pyr.level(i), std::vector<double>(pyr.level(i).size(), 1.0));
  }
}

inline std::vector<VoxelRecord> read_voxel_records(std::istream& is) {
  std::vector<VoxelRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      const auto& c = rec.at("coord");
      if (!c.is_array() || c.size() != 3) throw std::invalid_argument("coord must have 3 entries");
      out.push_back({rec.at("level").get<int>(), {c[0].get<int>(), c[1].get<int>(), c[2].get<int>()},
                     rec.at("value").get<double>()});
    } catch (const std::exception& e) {
      throw std::invalid_argument("voxel NDJSON line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

/// Records with value > 0.5 become occupied voxels; levels 1..depth are
/// always present even when empty.
inline ExistencePyramid read_pyramid(std::istream& is, int depth) {
  std::map<int, std::vector<VoxelCoord>> by_level;
  for (const auto& r : read_voxel_records(is)) {
    if (r.level < 1 || r.level > depth) {
      throw std::invalid_argument("pyramid NDJSON: level " + std::to_string(r.level) + " outside 1.." +
                                  std::to_string(depth));
    }
    if (r.value > 0.5) by_level[r.level].push_back(r.coord);
  }
  ExistencePyramid pyr;
  for (int i = 1; i <= depth; ++i) pyr.levels.push_back(CoordSet::from_unordered(i, std::move(by_level[i])));
  return pyr;
}

}  // namespace tb::voxel
