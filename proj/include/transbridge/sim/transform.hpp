// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "transbridge/core/vec3.hpp"

namespace tb::sim {

/// x' = R x + t. Rotation is stored row-major.
struct RigidTransform {
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3 translation{};

  static RigidTransform identity() { return {}; }

  static RigidTransform from_yaw(double yaw, Vec3 t) {
    const double c = std::cos(yaw), s = std::sin(yaw);
    return {{c, -s, 0, s, c, 0, 0, 0, 1}, t};
  }

  Vec3 rotate(Vec3 p) const noexcept {
    const auto& r = rotation;
    return {r[0] * p.x + r[1] * p.y + r[2] * p.z, r[3] * p.x + r[4] * p.y + r[5] * p.z,
            r[6] * p.x + r[7] * p.y + r[8] * p.z};
  }

  Vec3 apply(Vec3 p) const noexcept { return rotate(p) + translation; }

  RigidTransform inverse() const noexcept {
    const auto& r = rotation;
    RigidTransform inv;
    inv.rotation = {r[0], r[3], r[6], r[1], r[4], r[7], r[2], r[5], r[8]};
    inv.translation = inv.rotate(translation) * -1.0;
    return inv;
  }

  bool is_identity() const noexcept { return *this == identity(); }

  friend bool operator==(const RigidTransform&, const RigidTransform&) = default;
};

/// (a ∘ b)(p) = a(b(p))
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += a.rotation[i * 3 + k] * b.rotation[k * 3 + j];
      out.rotation[i * 3 + j] = acc;
    }
  out.translation = a.apply(b.translation);
  return out;
}

/// to ∘ inv(from): maps points expressed relative to `from` onto `to`.
/// Bitwise-equal poses yield the exact identity, so re-posing points between
/// frames in which an object (or the ego vehicle) did not move is lossless.
inline RigidTransform relative(const RigidTransform& to, const RigidTransform& from) {
  if (to == from) return RigidTransform::identity();
  return compose(to, from.inverse());
}

inline double rotation_orthonormality_error(const RigidTransform& t) {
  double err = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += t.rotation[i * 3 + k] * t.rotation[j * 3 + k];
      err = std::max(err, std::abs(acc - (i == j ? 1.0 : 0.0)));
    }
  return err;
}

inline double determinant(const RigidTransform& t) {
  const auto& r = t.rotation;
  return r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) + r[2] * (r[3] * r[7] - r[4] * r[6]);
}

}  // namespace tb::sim
