// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "transbridge/encoder/sparse_conv.hpp"
#include "transbridge/voxel/grid.hpp"

namespace tb::nn {

struct EncoderConfig {
  std::size_t in_channels = 5;  // x, y, z, intensity, timestamp
  std::vector<std::size_t> channels{16, 32, 64, 64, 128};
  std::vector<Int3> strides{{2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {1, 1, 5}};
  std::vector<Int3> down_kernels{{3, 3, 3}, {3, 3, 3}, {3, 3, 3}, {3, 3, 5}};
  Int3 subm_kernel{3, 3, 3};
  int subm_per_stage = 1;

  int levels() const noexcept { return static_cast<int>(channels.size()); }

  void validate() const {
    if (channels.empty()) throw std::invalid_argument("encoder: need at least one level");
    if (strides.size() + 1 != channels.size() || down_kernels.size() != strides.size()) {
      throw std::invalid_argument("encoder: strides/kernels must have length levels-1 (" +
                                  std::to_string(channels.size() - 1) + ")");
    }
    for (std::size_t c : channels)
      if (c == 0) throw std::invalid_argument("encoder: channel counts must be positive");
    if (in_channels == 0) throw std::invalid_argument("encoder: input channels must be positive");
    if (subm_per_stage < 1) throw std::invalid_argument("encoder: subm_per_stage must be >= 1");
    for (std::size_t i = 0; i < strides.size(); ++i)
      for (int a = 0; a < 3; ++a)
        if (down_kernels[i][a] < strides[i][a] || strides[i][a] < 1) {
          throw std::invalid_argument("encoder: stage " + std::to_string(i + 1) + " kernel must cover its stride");
        }
    for (int k : subm_kernel)
      if (k < 1 || k % 2 == 0) throw std::invalid_argument("encoder: submanifold kernel must be odd");
  }

  static EncoderConfig matching(const voxel::GridConfig& grid) {
    EncoderConfig c;
    c.strides = grid.strides;
    c.down_kernels.clear();
    for (const auto& s : grid.strides) {
      Int3 k;
      for (int a = 0; a < 3; ++a) k[a] = s[a] <= 2 ? 3 : (s[a] % 2 ? s[a] : s[a] + 1);
      c.down_kernels.push_back(k);
    }
    if (c.channels.size() != grid.strides.size() + 1) c.channels.resize(grid.strides.size() + 1, 128);
    return c;
  }
};

inline std::string encoder_prefix(int level) { return "encoder.level" + std::to_string(level); }

inline void init_encoder_params(ParamStore& store, const EncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  auto subm = [&](int level, std::size_t in, std::size_t out) {
    for (int j = 0; j < cfg.subm_per_stage; ++j) {
      const std::string p = encoder_prefix(level) + ".subm" + std::to_string(j);
      add_conv_params(store, p, cfg.subm_kernel, j == 0 ? in : out, out, rng);
      ad::add_norm_params(store, p + ".norm", out);
    }
  };
  subm(1, cfg.in_channels, cfg.channels[0]);
  for (int i = 1; i < cfg.levels(); ++i) {
    const std::string p = encoder_prefix(i + 1) + ".down";
    const std::size_t cin = cfg.channels[static_cast<std::size_t>(i - 1)], cout = cfg.channels[static_cast<std::size_t>(i)];
    add_conv_params(store, p, cfg.down_kernels[static_cast<std::size_t>(i - 1)], cin, cout, rng);
    ad::add_norm_params(store, p + ".norm", cout);
    subm(i + 1, cout, cout);
  }
  ad::add_linear_params(store, "encoder.head", cfg.channels.back(), 1, rng);
}

namespace detail {

inline ad::Var conv_norm_relu(const SparseMap& x, const std::shared_ptr<const Rulebook>& rb, const std::string& name) {
  ad::Graph& g = *x.features.graph;
  ad::Var y = sparse_conv(x.features, rb, g.param(name + ".w"));
  return ad::relu(ad::layer_norm(y, 1, name + ".norm"));
}

}  // namespace detail

/// Level-1 input features: the voxelized sweep, [n, in_channels].
inline std::vector<SparseMap> encoder_forward(ad::Graph& g, const CoordSetPtr& coords, const DenseArray& features,
                                              const EncoderConfig& cfg) {
  cfg.validate();
  if (features.rank() != 2 || features.dim(0) != coords->size() || features.dim(1) != cfg.in_channels) {
    throw ShapeError("encoder_forward: input features " + dims_to_string(features.dims()) + " for " +
                     std::to_string(coords->size()) + " sites with " + std::to_string(cfg.in_channels) + " channels");
  }
  if (coords->level() != 1) throw std::invalid_argument("encoder_forward: input must be at level 1");
  std::vector<SparseMap> out;
  SparseMap cur{coords, g.constant(features)};
  auto subm_stack = [&](int level) {
    auto rb = std::make_shared<const Rulebook>(build_submanifold_rulebook(cur.coords, cfg.subm_kernel));
    for (int j = 0; j < cfg.subm_per_stage; ++j) {
      cur.features = detail::conv_norm_relu(cur, rb, encoder_prefix(level) + ".subm" + std::to_string(j));
    }
  };
  subm_stack(1);
  out.push_back(cur);
  for (int i = 1; i < cfg.levels(); ++i) {
    const std::size_t s = static_cast<std::size_t>(i - 1);
    auto rb = std::make_shared<const Rulebook>(build_strided_rulebook(cur.coords, cfg.down_kernels[s], cfg.strides[s]));
    cur = SparseMap{rb->out_coords, detail::conv_norm_relu(cur, rb, encoder_prefix(i + 1) + ".down")};
    subm_stack(i + 1);
    out.push_back(cur);
  }
  return out;
}

/// Oriented box footprint used for proxy detection labels.
struct BoxLabel {
  double cx = 0, cy = 0, yaw = 0;
  double length = 0, width = 0;
};

/// 1 where the voxel center lies inside any box footprint (bird's-eye view).
/// The top level is collapsed in height, so only x and y are tested.
inline DenseArray detection_labels(const CoordSet& coords, const voxel::LevelGeometry& geom,
                                   const std::vector<BoxLabel>& boxes) {
  DenseArray labels({coords.size()});
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const Vec3 c = geom.center(coords[i]);
    for (const auto& b : boxes) {
      const double dx = c.x - b.cx, dy = c.y - b.cy;
      const double lx = std::cos(b.yaw) * dx + std::sin(b.yaw) * dy;
      const double ly = -std::sin(b.yaw) * dx + std::cos(b.yaw) * dy;
      if (std::abs(lx) <= 0.5 * b.length && std::abs(ly) <= 0.5 * b.width) {
        labels[i] = 1.0;
        break;
      }
    }
  }
  return labels;
}

/// Per-voxel foreground logits at the top level.
inline ad::Var detection_logits(const SparseMap& top) {
  ad::Var z = ad::linear(top.features, "encoder.head");
  return ad::reshape(z, {top.size()});
}

/// Mean binary cross-entropy of the proxy detection head (L_D).
inline ad::Var proxy_detection_loss(const SparseMap& top, const DenseArray& labels) {
  if (labels.size() != top.size()) {
    throw ShapeError("proxy_detection_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(top.size()) + " sites");
  }
  return ad::bce_with_logits(detection_logits(top), labels);
}

}  // namespace tb::nn
