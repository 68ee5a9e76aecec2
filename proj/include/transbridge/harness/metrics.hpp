// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "transbridge/voxel/sparse_tensor.hpp"

namespace tb::harness {

using voxel::CoordSet;

/// Detection score from mAP and the five true-positive error metrics
/// (translation, scale, orientation, velocity, attribute).
inline double nds_score(double map, double ate, double ase, double aoe, double ave, double aae) {
  if (!(map >= 0.0 && map <= 1.0)) throw std::invalid_argument("nds_score: mAP must lie in [0,1]");
  const std::array<double, 5> tp{ate, ase, aoe, ave, aae};
  double acc = 5.0 * map;
  for (double e : tp) {
    if (!(e >= 0.0)) throw std::invalid_argument("nds_score: TP metrics must be >= 0");
    acc += 1.0 - std::min(1.0, e);
  }
  return acc / 10.0;
}

struct NdsInputs {
  double map = 0, ate = 0, ase = 0, aoe = 0, ave = 0, aae = 0;
  double score() const { return nds_score(map, ate, ase, aoe, ave, aae); }
};

/// Occupancy counts for one level, summed over scenes.
struct LevelMetrics {
  int level = 1;
  std::size_t kept = 0;
  std::size_t labels = 0;
  std::size_t intersection = 0;

  // Empty predictions count as precision 0 unless the labels are empty too.
  double precision() const {
    if (kept == 0) return labels == 0 ? 1.0 : 0.0;
    return static_cast<double>(intersection) / static_cast<double>(kept);
  }
  double recall() const {
    if (labels == 0) return 1.0;
    return static_cast<double>(intersection) / static_cast<double>(labels);
  }
  double iou() const {
    const std::size_t uni = kept + labels - intersection;
    if (uni == 0) return 1.0;
    return static_cast<double>(intersection) / static_cast<double>(uni);
  }

  void accumulate(const CoordSet& predicted, const CoordSet& gt) {
    std::size_t inter = 0;
    for (const auto& c : predicted.coords()) inter += gt.contains(c) ? 1 : 0;
    kept += predicted.size();
    labels += gt.size();
    intersection += inter;
  }
};

struct LossPoint {
  int step = 0;
  int epoch = 0;
  double total = 0, detection = 0, completion = 0;
};

struct MetricsReport {
  std::vector<LevelMetrics> levels;  // level 1 first
  std::vector<LossPoint> losses;
  std::optional<double> detection_loss;   // evaluation-time L_D
  std::optional<double> completion_loss;  // evaluation-time L_T
  std::optional<NdsInputs> nds;

  const LevelMetrics& level(int i) const {
    for (const auto& l : levels)
      if (l.level == i) return l;
    throw std::out_of_range("MetricsReport: no level " + std::to_string(i));
  }
};

inline nlohmann::json report_to_json(const MetricsReport& r) {
  using nlohmann::json;
  json j;
  json lv = json::array();
  for (const auto& l : r.levels) {
    lv.push_back({{"level", l.level},
                  {"kept", l.kept},
                  {"labels", l.labels},
                  {"intersection", l.intersection},
                  {"precision", l.precision()},
                  {"recall", l.recall()},
                  {"iou", l.iou()}});
  }
  j["levels"] = lv;
  json curve = json::array();
  for (const auto& p : r.losses) {
    curve.push_back({{"step", p.step}, {"epoch", p.epoch}, {"L", p.total}, {"L_D", p.detection}, {"L_T", p.completion}});
  }
  j["losses"] = curve;
  if (r.detection_loss) j["L_D"] = *r.detection_loss;
  if (r.completion_loss) j["L_T"] = *r.completion_loss;
  if (r.nds) {
    const auto& n = *r.nds;
    j["nds"] = {{"mAP", n.map}, {"mATE", n.ate}, {"mASE", n.ase}, {"mAOE", n.aoe},
                {"mAVE", n.ave}, {"mAAE", n.aae}, {"NDS", n.score()}};
  }
  return j;
}

/// Structural check of a report document; returns an empty string when valid.
inline std::string validate_report_json(const nlohmann::json& j) {
  if (!j.is_object()) return "report is not an object";
  if (!j.contains("levels") || !j["levels"].is_array()) return "missing 'levels' array";
  if (!j.contains("losses") || !j["losses"].is_array()) return "missing 'losses' array";
  for (const auto& l : j["levels"]) {
    for (const char* k : {"level", "kept", "labels", "intersection"}) {
      if (!l.contains(k) || !l[k].is_number_integer()) return std::string("level entry lacks integer '") + k + "'";
    }
    for (const char* k : {"precision", "recall", "iou"}) {
      if (!l.contains(k) || !l[k].is_number()) return std::string("level entry lacks '") + k + "'";
      const double v = l[k].get<double>();
      if (!(v >= 0.0 && v <= 1.0)) return std::string("'") + k + "' outside [0,1]";
    }
  }
  for (const auto& p : j["losses"]) {
    for (const char* k : {"step", "L", "L_D", "L_T"}) {
      if (!p.contains(k) || !p[k].is_number()) return std::string("loss entry lacks '") + k + "'";
    }
  }
  return {};
}

}  // namespace tb::harness
