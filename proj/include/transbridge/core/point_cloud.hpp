// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "transbridge/core/vec3.hpp"

namespace tb {

/// Row-major point records; the first three channels are x, y, z in meters.
struct PointCloud {
  std::size_t channels = 3;
  std::vector<double> values;

  PointCloud() = default;
  explicit PointCloud(std::size_t ch) : channels(ch) {
    if (ch < 3) throw std::invalid_argument("PointCloud: need at least x,y,z channels");
  }

  std::size_t size() const noexcept { return channels ? values.size() / channels : 0; }
  bool empty() const noexcept { return values.empty(); }

  std::span<const double> row(std::size_t i) const { return {values.data() + i * channels, channels}; }
  std::span<double> row(std::size_t i) { return {values.data() + i * channels, channels}; }
  Vec3 position(std::size_t i) const {
    const double* r = values.data() + i * channels;
    return {r[0], r[1], r[2]};
  }

  void push(std::span<const double> rec) {
    if (rec.size() != channels) throw std::invalid_argument("PointCloud: record has wrong channel count");
    values.insert(values.end(), rec.begin(), rec.end());
  }
  void push(Vec3 p) {
    if (channels != 3) throw std::invalid_argument("PointCloud: xyz push on multi-channel cloud");
    values.insert(values.end(), {p.x, p.y, p.z});
  }
};

}  // namespace tb
