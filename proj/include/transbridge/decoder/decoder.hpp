// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "transbridge/encoder/encoder.hpp"
#include "transbridge/voxel/grid.hpp"
#include "transbridge/voxel/pyramid.hpp"
#include "transbridge/voxel/voxel_ops.hpp"

namespace tb::nn {

struct DecoderConfig {
  std::vector<std::size_t> channels{128, 160, 64, 32, 16};  // f_T^N .. f_T^1
  double beta = 0.7;
  double alpha = 3.0;
  double empty_cap = 0.75;  // max empty/all ratio among supervised voxels

  int levels() const noexcept { return static_cast<int>(channels.size()); }

  // Completion channels c2 at pyramid level i (1-based).
  std::size_t c2(int level) const { return channels.at(channels.size() - static_cast<std::size_t>(level)); }

  void validate() const {
    if (channels.size() < 2) throw std::invalid_argument("decoder: need at least two levels");
    for (std::size_t c : channels)
      if (c == 0) throw std::invalid_argument("decoder: channel counts must be positive");
    if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("decoder: beta must lie in (0,1)");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("decoder: alpha must be >= 0");
    if (!(empty_cap > 0.0 && empty_cap < 1.0)) throw std::invalid_argument("decoder: empty_cap must lie in (0,1)");
  }
};

inline std::string decoder_prefix(int level) { return "decoder.level" + std::to_string(level); }

inline void init_decoder_params(ParamStore& store, const DecoderConfig& cfg, const EncoderConfig& enc,
                                const voxel::GridConfig& grid, std::mt19937_64& rng) {
  cfg.validate();
  const int n = cfg.levels();
  if (enc.levels() != n || grid.levels() != n) {
    throw std::invalid_argument("decoder: level count " + std::to_string(n) + " differs from encoder/grid (" +
                                std::to_string(enc.levels()) + "/" + std::to_string(grid.levels()) + ")");
  }
  ad::add_linear_params(store, decoder_prefix(n) + ".bridge", enc.channels.back(), cfg.c2(n), rng);
  for (int i = n - 1; i >= 1; --i) {
    const std::string p = decoder_prefix(i);
    const std::size_t c2 = cfg.c2(i), cp = cfg.c2(i + 1), cd = enc.channels[static_cast<std::size_t>(i - 1)];
    const std::size_t s = static_cast<std::size_t>(voxel::sub_voxel_count(grid.stride(i)));
    ad::add_linear_params(store, p + ".ub.expand", cp, s * c2, rng);
    ad::add_linear_params(store, p + ".ub.score", c2, s * c2, rng);
    ad::add_linear_params(store, p + ".ub.out", c2, c2, rng);
    ad::add_norm_params(store, p + ".ub.norm", c2);
    ad::add_linear_params(store, p + ".ib.proj", cd, c2, rng);
    ad::add_linear_params(store, p + ".ib.q", c2, c2, rng);
    ad::add_linear_params(store, p + ".ib.k", c2, c2, rng);
    ad::add_linear_params(store, p + ".ib.v", c2, c2, rng);
    ad::add_linear_params(store, p + ".ib.out", c2, c2, rng);
    ad::add_norm_params(store, p + ".ib.norm", c2);
    ad::add_linear_params(store, p + ".concat", 2 * c2, c2, rng);
    ad::add_linear_params(store, p + ".scm", c2, 1, rng);
  }
}

/// Up-Sampling Bridge: every parent voxel spawns its S children; head h of the
/// token attention produces child h (lexicographic offset order).
inline SparseMap ub_forward(const SparseMap& parent, const Int3& kernel, std::size_t c2, const std::string& prefix,
                            const voxel::LevelGeometry* child_extent = nullptr) {
  const std::size_t P = parent.size(), S = static_cast<std::size_t>(voxel::sub_voxel_count(kernel));
  ad::Var u = ad::linear(parent.features, prefix + ".expand");
  ad::Var tokens = ad::reshape(u, {P, S, c2});
  ad::Var scores = ad::reshape(ad::linear(tokens, prefix + ".score"), {P, S, S, c2});
  ad::Var attn = ad::softmax(scores, 1);
  ad::Var heads = ad::attention_pool(attn, tokens);  // [P, S(head), c2]
  ad::Var rows = ad::reshape(heads, {P * S, c2});

  const auto kids = voxel::expand_children(*parent.coords, kernel, child_extent);
  std::vector<std::size_t> order(kids.coords.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return kids.coords[a] < kids.coords[b]; });
  std::vector<VoxelCoord> sorted;
  std::vector<long> index;
  sorted.reserve(order.size());
  index.reserve(order.size());
  for (std::size_t r : order) {
    sorted.push_back(kids.coords[r]);
    index.push_back(static_cast<long>(kids.parent[r] * S + kids.sub_index[r]));
  }
  ad::Var out = ad::gather_rows(rows, std::move(index));
  ad::Var res = ad::layer_norm(ad::add(ad::linear(out, prefix + ".out"), out), 1, prefix + ".norm");
  return {voxel::make_coords(CoordSet(parent.level() - 1, std::move(sorted))), res};
}

/// Interpreting Bridge: per voxel, a c2 x c2 channel attention map from the
/// outer product of query and key projections.
inline SparseMap ib_forward(const SparseMap& det, std::size_t c2, const std::string& prefix) {
  ad::Var d = ad::linear(det.features, prefix + ".proj");
  ad::Var q = ad::linear(d, prefix + ".q");
  ad::Var k = ad::linear(d, prefix + ".k");
  ad::Var v = ad::linear(d, prefix + ".v");
  ad::Var b = ad::softmax(ad::scale(ad::batched_outer(q, k), 1.0 / std::sqrt(static_cast<double>(c2))), 2);
  ad::Var out = ad::batched_matvec(b, v);
  ad::Var res = ad::layer_norm(ad::add(ad::linear(out, prefix + ".out"), out), 1, prefix + ".norm");
  return {det.coords, res};
}

/// Union of both active sets; a side missing a coordinate contributes zeros.
inline SparseMap sparsity_concat(const SparseMap& u, const SparseMap& i, const std::string& name) {
  const auto al = voxel::align_union(*u.coords, *i.coords);
  ad::Var fu = ad::gather_rows(u.features, al.row_a);
  ad::Var fi = ad::gather_rows(i.features, al.row_b);
  return {al.coords, ad::linear(ad::concat_cols(fu, fi), name)};
}

/// Per-voxel linear map at the top level; the active set is unchanged.
inline SparseMap level_n_bridge(const SparseMap& det, const std::string& name) {
  return {det.coords, ad::linear(det.features, name)};
}

enum class Mode { Training, Inference };

/// Inference pruning rule: strictly above the threshold.
constexpr bool scm_keep(double score, double beta) noexcept { return score > beta; }

struct ScmResult {
  ad::Var scores;             // e^i, [n]
  std::vector<long> kept;     // rows of f_T^i passed on
  SparseMap pruned;
};

/// Existence scores and pruning. Inference keeps e > beta; training keeps the
/// generated voxels that are occupied in the label pyramid.
inline ScmResult scm_apply(const SparseMap& ft, const std::string& name, Mode mode, double beta,
                           const CoordSet* labels = nullptr) {
  if (mode == Mode::Training && labels == nullptr) throw std::invalid_argument("scm_apply: training mode needs labels");
  if (mode == Mode::Inference && !(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("scm_apply: beta outside (0,1)");
  ScmResult r;
  r.scores = ad::sigmoid(ad::reshape(ad::linear(ft.features, name), {ft.size()}));
  const ad::Graph& g = *ft.features.graph;
  const DenseArray& e = g.value(r.scores);
  std::vector<VoxelCoord> kept;
  for (std::size_t j = 0; j < ft.size(); ++j) {
    const bool keep = mode == Mode::Inference ? scm_keep(e[j], beta) : labels->contains((*ft.coords)[j]);
    if (!keep) continue;
    r.kept.push_back(static_cast<long>(j));
    kept.push_back((*ft.coords)[j]);
  }
  r.pruned = {voxel::make_coords(CoordSet(ft.level(), std::move(kept))), ad::gather_rows(ft.features, r.kept)};
  return r;
}

struct LevelOutput {
  int level = 1;
  SparseMap ft;                       // generated voxels f_T^i
  std::optional<ad::Var> scores;      // e^i (absent at the top level)
  std::vector<long> kept;             // rows passed to the next level
  CoordSetPtr kept_coords;
};

/// Levels N..1 (element 0 is level N). `labels` is required in training mode.
inline std::vector<LevelOutput> decoder_forward(const std::vector<SparseMap>& det, const DecoderConfig& cfg,
                                                const voxel::GridConfig& grid, Mode mode,
                                                const voxel::ExistencePyramid* labels = nullptr) {
  const int n = cfg.levels();
  if (static_cast<int>(det.size()) != n) {
    throw std::invalid_argument("decoder_forward: expected " + std::to_string(n) + " encoder levels, got " +
                                std::to_string(det.size()));
  }
  if (mode == Mode::Training && (labels == nullptr || labels->depth() < n - 1)) {
    throw std::invalid_argument("decoder_forward: training mode needs labels for levels 1.." + std::to_string(n - 1));
  }
  std::vector<LevelOutput> out;
  LevelOutput top;
  top.level = n;
  top.ft = level_n_bridge(det.back(), decoder_prefix(n) + ".bridge");
  top.kept.resize(top.ft.size());
  std::iota(top.kept.begin(), top.kept.end(), 0L);
  top.kept_coords = top.ft.coords;
  out.push_back(top);
  SparseMap parent = top.ft;
  for (int i = n - 1; i >= 1; --i) {
    const std::string p = decoder_prefix(i);
    const auto geom = grid.level(i);
    const SparseMap fu = ub_forward(parent, grid.stride(i), cfg.c2(i), p + ".ub", &geom);
    const SparseMap fi = ib_forward(det[static_cast<std::size_t>(i - 1)], cfg.c2(i), p + ".ib");
    LevelOutput lo;
    lo.level = i;
    lo.ft = sparsity_concat(fu, fi, p + ".concat");
    ScmResult scm = scm_apply(lo.ft, p + ".scm", mode, cfg.beta, mode == Mode::Training ? &labels->level(i) : nullptr);
    lo.scores = scm.scores;
    lo.kept = std::move(scm.kept);
    lo.kept_coords = scm.pruned.coords;
    parent = scm.pruned;
    out.push_back(std::move(lo));
  }
  return out;
}

/// Rows supervised at one level: all positives plus at most
/// floor(pos * cap / (1 - cap)) uniformly chosen negatives.
inline std::vector<long> subsample_supervision(const std::vector<double>& labels, double empty_cap, std::mt19937_64& rng) {
  std::vector<long> pos, neg;
  for (std::size_t j = 0; j < labels.size(); ++j) (labels[j] > 0.5 ? pos : neg).push_back(static_cast<long>(j));
  const auto cap = static_cast<std::size_t>(std::floor(static_cast<double>(pos.size()) * empty_cap / (1.0 - empty_cap) + 1e-9));
  if (neg.size() > cap) {
    std::shuffle(neg.begin(), neg.end(), rng);
    neg.resize(cap);
  }
  std::vector<long> rows = pos;
  rows.insert(rows.end(), neg.begin(), neg.end());
  std::sort(rows.begin(), rows.end());
  return rows;
}

/// Occupancy labels of generated voxels against the label pyramid.
inline std::vector<double> level_labels(const CoordSet& generated, const CoordSet& gt) {
  std::vector<double> y(generated.size());
  for (std::size_t j = 0; j < generated.size(); ++j) y[j] = gt.contains(generated[j]) ? 1.0 : 0.0;
  return y;
}

/// L_T = 1/(N-1) * sum_i mean smooth-L1 over the supervised voxels of level i.
inline ad::Var completion_loss(ad::Graph& g, const std::vector<ad::Var>& scores,
                               const std::vector<std::vector<double>>& labels,
                               const std::vector<std::vector<long>>& rows) {
  if (scores.size() != labels.size() || scores.size() != rows.size() || scores.empty()) {
    throw std::invalid_argument("completion_loss: need matching, non-empty per-level scores, labels and rows");
  }
  ad::Var total = g.constant(DenseArray::scalar(0.0));
  for (std::size_t l = 0; l < scores.size(); ++l) {
    const std::size_t n = g.value(scores[l]).size();
    if (labels[l].size() != n) {
      throw ShapeError("completion_loss: level " + std::to_string(l) + " has " + std::to_string(n) + " scores and " +
                       std::to_string(labels[l].size()) + " labels");
    }
    if (rows[l].empty()) continue;
    ad::Var e = ad::gather_rows(ad::reshape(scores[l], {n, 1}), rows[l]);
    DenseArray y({rows[l].size(), 1});
    for (std::size_t j = 0; j < rows[l].size(); ++j) y[j] = labels[l][static_cast<std::size_t>(rows[l][j])];
    total = ad::add(total, ad::smooth_l1(e, g.constant(std::move(y))));
  }
  return ad::scale(total, 1.0 / static_cast<double>(scores.size()));
}

/// L = L_D + alpha * L_T. With alpha = 0 the completion branch is cut from the
/// backward pass entirely, so decoder parameters receive no gradient.
inline ad::Var joint_loss(ad::Var l_d, ad::Var l_t, double alpha) {
  ad::Graph& g = ad::detail::graph_of(l_d, l_t);
  if (!std::isfinite(g.value(l_d).item()) || !std::isfinite(g.value(l_t).item())) {
    throw std::domain_error("joint_loss: non-finite component");
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("joint_loss: alpha must be finite and >= 0");
  if (alpha == 0.0) l_t = ad::detach(l_t);
  return ad::add(l_d, ad::scale(l_t, alpha));
}

}  // namespace tb::nn
