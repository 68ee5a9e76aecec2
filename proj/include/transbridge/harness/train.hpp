// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "transbridge/core/adam.hpp"
#include "transbridge/core/checkpoint.hpp"
#include "transbridge/decoder/decoder.hpp"
#include "transbridge/encoder/encoder.hpp"
#include "transbridge/harness/config.hpp"
#include "transbridge/harness/dataset.hpp"
#include "transbridge/harness/metrics.hpp"

namespace tb::harness {

using voxel::VoxelCoord;

inline ParamStore init_model(const RunConfig& cfg) {
  cfg.validate();
  ParamStore store;
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x5EED));
  nn::init_encoder_params(store, cfg.encoder, rng);
  nn::init_decoder_params(store, cfg.decoder, cfg.encoder, cfg.grid, rng);
  return store;
}

inline ParamStore load_model(const RunConfig& cfg, const std::string& checkpoint) {
  ParamStore store = init_model(cfg);
  load_checkpoint(checkpoint, store);
  return store;
}

struct StepLosses {
  ad::Var total, detection, completion;
};

/// Training-mode forward pass of one sample: L_D, L_T and the joint loss.
inline StepLosses sample_losses(ad::Graph& g, const Sample& s, const RunConfig& cfg, std::mt19937_64& rng) {
  const auto det = nn::encoder_forward(g, s.coords, s.features, cfg.encoder);
  const int n = cfg.grid.levels();
  const DenseArray det_labels = nn::detection_labels(*det.back().coords, cfg.grid.level(n), s.boxes);
  ad::Var l_d = nn::proxy_detection_loss(det.back(), det_labels);
  const auto outs = nn::decoder_forward(det, cfg.decoder, cfg.grid, nn::Mode::Training, &s.labels);
  std::vector<ad::Var> scores;
  std::vector<std::vector<double>> labels;
  std::vector<std::vector<long>> rows;
  for (std::size_t j = 1; j < outs.size(); ++j) {
    scores.push_back(*outs[j].scores);
    labels.push_back(nn::level_labels(*outs[j].ft.coords, s.labels.level(outs[j].level)));
    rows.push_back(nn::subsample_supervision(labels.back(), cfg.decoder.empty_cap, rng));
  }
  ad::Var l_t = nn::completion_loss(g, scores, labels, rows);
  return {nn::joint_loss(l_d, l_t, cfg.decoder.alpha), l_d, l_t};
}

inline std::string epoch_checkpoint_name(int epoch) { return "checkpoint_epoch" + std::to_string(epoch) + ".tbrg"; }

struct TrainOutput {
  ParamStore store;
  MetricsReport report;
};

/// Mini-batch training with Adam. Sample order, negative subsampling and
/// initialization all derive from cfg.seed, so a rerun is bit-identical.
/// When `out_dir` is non-empty, checkpoints are written every
/// cfg.train.checkpoint_every epochs plus a final checkpoint.tbrg.
inline TrainOutput train(const RunConfig& cfg, const std::vector<Sample>& data, const std::string& out_dir = {},
                         const std::function<void(const LossPoint&)>& on_step = {}) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: empty dataset");
  for (const auto& s : data) {
    if (s.features.dim(1) != cfg.encoder.in_channels) throw ConfigError("train: sample feature width mismatch");
    if (s.labels.depth() != cfg.grid.levels()) throw ConfigError("train: label pyramid depth mismatch");
  }
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  TrainOutput out{init_model(cfg), {}};
  ParamStore& store = out.store;
  std::vector<std::size_t> order(data.size());
  const auto B = static_cast<std::size_t>(cfg.train.batch_size);
  int step = 0;
  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0x10000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t b0 = 0; b0 < order.size(); b0 += B) {
      const std::size_t b1 = std::min(order.size(), b0 + B);
      const double w = 1.0 / static_cast<double>(b1 - b0);
      ++step;
      store.zero_grad();
      LossPoint lp{step, epoch, 0, 0, 0};
      for (std::size_t k = b0; k < b1; ++k) {
        std::mt19937_64 rng(derive_seed(cfg.seed, (static_cast<std::uint64_t>(step) << 20) + k));
        ad::Graph g(store);
        const StepLosses l = sample_losses(g, data[order[k]], cfg, rng);
        lp.total += w * g.value(l.total).item();
        lp.detection += w * g.value(l.detection).item();
        lp.completion += w * g.value(l.completion).item();
        g.backward(ad::scale(l.total, w));
      }
      adam_step(store, cfg.optimizer);
      out.report.losses.push_back(lp);
      if (on_step) on_step(lp);
    }
    if (!out_dir.empty() && epoch % cfg.train.checkpoint_every == 0) {
      save_checkpoint(out_dir + "/" + epoch_checkpoint_name(epoch), store);
    }
  }
  if (!out_dir.empty()) save_checkpoint(out_dir + "/checkpoint.tbrg", store);
  return out;
}

/// Inference-mode existence metrics per level, plus mean L_D and L_T over the
/// scenes. The store is only read.
inline MetricsReport evaluate(ParamStore& store, const RunConfig& cfg, const std::vector<Sample>& data) {
  cfg.validate();
  const int n = cfg.grid.levels();
  MetricsReport r;
  for (int i = 1; i <= n; ++i) r.levels.push_back({i, 0, 0, 0});
  double ld = 0.0, lt = 0.0;
  for (const auto& s : data) {
    ad::Graph g(store);
    const auto det = nn::encoder_forward(g, s.coords, s.features, cfg.encoder);
    ld += g.value(nn::proxy_detection_loss(det.back(), nn::detection_labels(*det.back().coords, cfg.grid.level(n), s.boxes)))
              .item();
    const auto outs = nn::decoder_forward(det, cfg.decoder, cfg.grid, nn::Mode::Inference);
    std::vector<ad::Var> scores;
    std::vector<std::vector<double>> labels;
    std::vector<std::vector<long>> rows;
    for (const auto& o : outs) {
      r.levels[static_cast<std::size_t>(o.level - 1)].accumulate(*o.kept_coords, s.labels.level(o.level));
      if (!o.scores) continue;
      scores.push_back(*o.scores);
      labels.push_back(nn::level_labels(*o.ft.coords, s.labels.level(o.level)));
      rows.emplace_back(labels.back().size());
      std::iota(rows.back().begin(), rows.back().end(), 0L);
    }
    lt += g.value(nn::completion_loss(g, scores, labels, rows)).item();
  }
  if (!data.empty()) {
    r.detection_loss = ld / static_cast<double>(data.size());
    r.completion_loss = lt / static_cast<double>(data.size());
  }
  return r;
}

/// Level-1 sweep voxels of one frame: the encoder input.
inline voxel::SparseVoxelTensor encode_frame(const sim::Frame& f, const RunConfig& cfg) {
  if (f.points.channels != cfg.encoder.in_channels) {
    throw ConfigError("frame points have " + std::to_string(f.points.channels) + " channels, encoder expects " +
                      std::to_string(cfg.encoder.in_channels));
  }
  return voxel::voxelize(f.points, cfg.grid.level(1)).tensor;
}

struct Completion {
  CoordSet kept;                // level-1 voxels with score > beta
  std::vector<double> scores;   // per kept voxel
  PointCloud points{3};         // kept voxel centers
};

inline Completion complete_frame(ParamStore& store, const RunConfig& cfg, const voxel::SparseVoxelTensor& input,
                                 double beta) {
  nn::DecoderConfig dec = cfg.decoder;
  dec.beta = beta;
  dec.validate();
  ad::Graph g(store);
  const auto det = nn::encoder_forward(g, input.coords, input.features, cfg.encoder);
  const auto outs = nn::decoder_forward(det, dec, cfg.grid, nn::Mode::Inference);
  const nn::LevelOutput& l1 = outs.back();
  const DenseArray& e = g.value(*l1.scores);
  Completion c;
  std::vector<VoxelCoord> kept;
  for (long row : l1.kept) {
    kept.push_back((*l1.ft.coords)[static_cast<std::size_t>(row)]);
    c.scores.push_back(e[static_cast<std::size_t>(row)]);
  }
  c.kept = CoordSet(1, std::move(kept));
  c.points = voxel::to_point_cloud(c.kept, cfg.grid.level(1));
  return c;
}

inline void write_ply(std::ostream& os, const PointCloud& pts, const std::vector<double>& scores) {
  if (scores.size() != pts.size()) throw std::invalid_argument("write_ply: score/point count mismatch");
  os << "ply\nformat ascii 1.0\nelement vertex " << pts.size()
     << "\nproperty double x\nproperty double y\nproperty double z\nproperty double score\nend_header\n";
  char buf[128];
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 p = pts.position(i);
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g\n", p.x, p.y, p.z, scores[i]);
    os << buf;
  }
}

/// completion.ply and completion.ndjson in `out_dir`; returns the point count.
inline std::size_t export_completion(const Completion& c, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream ply(out_dir + "/completion.ply", std::ios::trunc);
  if (!ply) throw std::ios_base::failure("cannot open for writing: " + out_dir + "/completion.ply");
  write_ply(ply, c.points, c.scores);
  std::ofstream nd(out_dir + "/completion.ndjson", std::ios::trunc);
  if (!nd) throw std::ios_base::failure("cannot open for writing: " + out_dir + "/completion.ndjson");
  voxel::write_voxel_records(nd, 1, c.kept, c.scores);
  if (!ply || !nd) throw std::ios_base::failure("write failed in " + out_dir);
  return c.points.size();
}

inline void write_report(const std::string& path, const MetricsReport& r) { sim::write_json_file(path, report_to_json(r)); }

}  // namespace tb::harness
