// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "transbridge/core/graph.hpp"
#include "transbridge/core/ops.hpp"
#include "transbridge/voxel/sparse_tensor.hpp"

namespace tb::nn {

using voxel::CoordSet;
using voxel::CoordSetPtr;
using voxel::Int3;
using voxel::VoxelCoord;

/// Sparse feature map whose features live on an autodiff graph.
struct SparseMap {
  CoordSetPtr coords;
  ad::Var features;  // [coords->size(), c]

  int level() const noexcept { return coords->level(); }
  std::size_t size() const noexcept { return coords->size(); }
};

/// Per kernel offset (lexicographic over [0,K) per axis), the (input row,
/// output row) pairs it connects.
struct Rulebook {
  Int3 kernel{3, 3, 3};
  Int3 stride{1, 1, 1};
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> pairs;
  std::size_t in_rows = 0;
  CoordSetPtr out_coords;

  int volume() const noexcept { return kernel[0] * kernel[1] * kernel[2]; }
  std::size_t pair_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : pairs) n += p.size();
    return n;
  }
};

/// Input offset start of output site o along one axis: o*s - pad.
inline int conv_pad(int k, int s) noexcept { return (k - 1) / 2 - (s - 1) / 2; }

namespace detail {

inline void fill_pairs(Rulebook& rb, const CoordSet& in) {
  const CoordSet& out = *rb.out_coords;
  rb.pairs.assign(static_cast<std::size_t>(rb.volume()), {});
  Int3 pad;
  for (int a = 0; a < 3; ++a) pad[a] = conv_pad(rb.kernel[a], rb.stride[a]);
  for (std::size_t o = 0; o < out.size(); ++o) {
    const VoxelCoord oc = out[o];
    std::size_t k = 0;
    for (int dx = 0; dx < rb.kernel[0]; ++dx)
      for (int dy = 0; dy < rb.kernel[1]; ++dy)
        for (int dz = 0; dz < rb.kernel[2]; ++dz, ++k) {
          const VoxelCoord ic{oc.x * rb.stride[0] - pad[0] + dx, oc.y * rb.stride[1] - pad[1] + dy,
                              oc.z * rb.stride[2] - pad[2] + dz};
          const long r = in.find(ic);
          if (r >= 0) rb.pairs[k].emplace_back(static_cast<std::size_t>(r), o);
        }
  }
}

}  // namespace detail

/// Output coords equal input coords; offsets centered on each site.
inline Rulebook build_submanifold_rulebook(const CoordSetPtr& in, const Int3& kernel) {
  for (int k : kernel) {
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("submanifold rulebook: kernel extents must be odd");
  }
  Rulebook rb;
  rb.kernel = kernel;
  rb.in_rows = in->size();
  rb.out_coords = in;
  detail::fill_pairs(rb, *in);
  return rb;
}

/// Output coords = { floor(c / stride) : c active }, at level + 1.
inline Rulebook build_strided_rulebook(const CoordSetPtr& in, const Int3& kernel, const Int3& stride) {
  for (int a = 0; a < 3; ++a) {
    if (kernel[a] < 1 || stride[a] < 1) throw std::invalid_argument("strided rulebook: kernel and stride must be >= 1");
    if (kernel[a] < stride[a]) throw std::invalid_argument("strided rulebook: kernel must cover the stride");
  }
  Rulebook rb;
  rb.kernel = kernel;
  rb.stride = stride;
  rb.in_rows = in->size();
  std::vector<VoxelCoord> out;
  out.reserve(in->size());
  for (const VoxelCoord& c : in->coords()) out.push_back(voxel::floor_div(c, stride));
  rb.out_coords = voxel::make_coords(CoordSet::from_unordered(in->level() + 1, std::move(out)));
  detail::fill_pairs(rb, *in);
  return rb;
}

/// Gather-multiply-scatter convolution. weight: [kernel volume, c_in, c_out].
inline ad::Var sparse_conv(ad::Var x, std::shared_ptr<const Rulebook> rb, ad::Var weight) {
  ad::Graph& g = ad::detail::graph_of(x, weight);
  const DenseArray& xv = g.value(x);
  const DenseArray& wv = g.value(weight);
  if (xv.rank() != 2 || xv.dim(0) != rb->in_rows) {
    throw ShapeError("sparse_conv: features " + dims_to_string(xv.dims()) + " for " + std::to_string(rb->in_rows) +
                     " input sites");
  }
  if (wv.rank() != 3 || wv.dim(0) != static_cast<std::size_t>(rb->volume()) || wv.dim(1) != xv.dim(1)) {
    throw ShapeError("sparse_conv: weight " + dims_to_string(wv.dims()) + " incompatible with kernel volume " +
                     std::to_string(rb->volume()) + " and " + std::to_string(xv.dim(1)) + " input channels");
  }
  const std::size_t ci = wv.dim(1), co = wv.dim(2);
  DenseArray out({rb->out_coords->size(), co});
  const double* xd = xv.data().data();
  const double* wd = wv.data().data();
  double* od = out.data().data();
  for (std::size_t k = 0; k < rb->pairs.size(); ++k) {
    const double* wk = wd + k * ci * co;
    for (const auto& [i, o] : rb->pairs[k]) {
      const double* xi = xd + i * ci;
      double* oo = od + o * co;
      for (std::size_t a = 0; a < ci; ++a) {
        const double v = xi[a];
        if (v == 0.0) continue;
        const double* wr = wk + a * co;
        for (std::size_t b = 0; b < co; ++b) oo[b] += v * wr[b];
      }
    }
  }
  return g.record("sparse_conv", {x.id, weight.id}, std::move(out), [rb, ci, co](ad::Graph& g, std::size_t self) {
    const auto ix = g.inputs(self)[0], iw = g.inputs(self)[1];
    const double* dout = g.grad_buffer(self).data().data();
    const double* xd = g.value(ix).data().data();
    const double* wd = g.value(iw).data().data();
    double* dx = g.needs_grad(ix) ? g.grad_buffer(ix).data().data() : nullptr;
    double* dw = g.needs_grad(iw) ? g.grad_buffer(iw).data().data() : nullptr;
    for (std::size_t k = 0; k < rb->pairs.size(); ++k) {
      const double* wk = wd + k * ci * co;
      double* dwk = dw ? dw + k * ci * co : nullptr;
      for (const auto& [i, o] : rb->pairs[k]) {
        const double* d = dout + o * co;
        for (std::size_t a = 0; a < ci; ++a) {
          const double* wr = wk + a * co;
          if (dx) {
            double acc = 0.0;
            for (std::size_t b = 0; b < co; ++b) acc += d[b] * wr[b];
            dx[i * ci + a] += acc;
          }
          if (dwk) {
            const double v = xd[i * ci + a];
            double* dwr = dwk + a * co;
            for (std::size_t b = 0; b < co; ++b) dwr[b] += v * d[b];
          }
        }
      }
    }
  });
}

/// Registers "<name>.w" as [kernel volume, c_in, c_out], Xavier-scaled by the
/// receptive field.
inline void add_conv_params(ParamStore& store, const std::string& name, const Int3& kernel, std::size_t in,
                            std::size_t out, std::mt19937_64& rng) {
  const std::size_t vol = static_cast<std::size_t>(kernel[0] * kernel[1] * kernel[2]);
  store.add_xavier(name + ".w", {vol, in, out}, vol * in, vol * out, rng);
}

}  // namespace tb::nn
