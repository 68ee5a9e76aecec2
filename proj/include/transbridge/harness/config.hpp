// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "transbridge/core/adam.hpp"
#include "transbridge/decoder/decoder.hpp"
#include "transbridge/dsrecon/densify.hpp"
#include "transbridge/dsrecon/dsrecon.hpp"
#include "transbridge/encoder/encoder.hpp"
#include "transbridge/sim/scene.hpp"
#include "transbridge/sim/sequence.hpp"
#include "transbridge/voxel/grid.hpp"

namespace tb::harness {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainOptions {
  int epochs = 4;
  int batch_size = 4;
  int checkpoint_every = 1;  // epochs
};

struct DataOptions {
  std::string dir;  // scene_NNNN.json files (and optional dense_NNNN.json)
  int scenes = 8;
  int key_frame = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  voxel::GridConfig grid;
  nn::EncoderConfig encoder;
  nn::DecoderConfig decoder;
  AdamOptions optimizer;
  TrainOptions train;
  DataOptions data;
  sim::GenSpec scene;
  sim::SensorSpec sensor;
  dsrecon::DensifyParams densify;
  dsrecon::DSReconOptions dsrecon;

  void validate() const {
    try {
      grid.validate();
      encoder.validate();
      decoder.validate();
      scene.validate();
      densify.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    if (encoder.strides != grid.strides) throw ConfigError("config: encoder strides must equal grid strides");
    if (encoder.levels() != grid.levels() || decoder.levels() != grid.levels()) {
      throw ConfigError("config: encoder and decoder need " + std::to_string(grid.levels()) +
                        " channel entries to match the grid");
    }
    if (!(optimizer.lr > 0.0) || !(optimizer.eps > 0.0)) throw ConfigError("config: optimizer lr and eps must be positive");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
      throw ConfigError("config: optimizer betas must lie in [0,1)");
    }
    if (train.epochs < 1 || train.batch_size < 1 || train.checkpoint_every < 1) {
      throw ConfigError("config: epochs, batch_size and checkpoint_every must be >= 1");
    }
    if (data.scenes < 1) throw ConfigError("config: data.scenes must be >= 1");
    if (data.key_frame < 1 || data.key_frame > scene.frames) {
      throw ConfigError("config: data.key_frame must lie in [1, scene.frames]");
    }
    if (sensor.rings < 1 || !(sensor.azimuth_step_deg > 0.0) || !(sensor.max_range > 0.0) ||
        !(sensor.elevation_max_deg >= sensor.elevation_min_deg) || !(sensor.frame_dt >= 0.0)) {
      throw ConfigError("config: bad sensor spec");
    }
  }
};

namespace detail {

// Strict reader: unknown keys and wrong types are errors carrying the key path.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: bad type for '" + where(key) + "'");
    }
  }

  void get(const char* key, Vec3& out) {
    std::array<double, 3> a{out.x, out.y, out.z};
    get(key, a);
    out = {a[0], a[1], a[2]};
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section sub(const char* key) {
    seen_.insert(key);
    static const nlohmann::json empty = nlohmann::json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, where(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + where(k.c_str()) + "'");
    }
  }

 private:
  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Grid section alone; fields not given keep their defaults.
inline voxel::GridConfig grid_from_json(const nlohmann::json& j, const std::string& path = "grid") {
  voxel::GridConfig g;
  detail::Section s(j, path);
  s.get("voxel_size", g.voxel_size);
  s.get("origin", g.origin);
  s.get("extent", g.extent);
  s.get("strides", g.strides);
  s.finish();
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return g;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::Section root(j, "");
  root.get("seed", c.seed);
  root.get("alpha", c.decoder.alpha);
  root.get("beta", c.decoder.beta);
  if (root.has("grid")) c.grid = grid_from_json(j.at("grid"));
  root.sub("grid");
  {
    // kernels follow the grid strides unless given explicitly
    c.encoder = nn::EncoderConfig::matching(c.grid);
    auto s = root.sub("encoder");
    s.get("in_channels", c.encoder.in_channels);
    s.get("channels", c.encoder.channels);
    s.get("down_kernels", c.encoder.down_kernels);
    s.get("subm_kernel", c.encoder.subm_kernel);
    s.get("subm_per_stage", c.encoder.subm_per_stage);
    s.finish();
  }
  {
    auto s = root.sub("decoder");
    s.get("channels", c.decoder.channels);
    s.get("empty_cap", c.decoder.empty_cap);
    s.finish();
  }
  {
    auto s = root.sub("optimizer");
    s.get("lr", c.optimizer.lr);
    s.get("beta1", c.optimizer.beta1);
    s.get("beta2", c.optimizer.beta2);
    s.get("eps", c.optimizer.eps);
    s.finish();
  }
  {
    auto s = root.sub("train");
    s.get("epochs", c.train.epochs);
    s.get("batch_size", c.train.batch_size);
    s.get("checkpoint_every", c.train.checkpoint_every);
    s.finish();
  }
  {
    auto s = root.sub("data");
    s.get("dir", c.data.dir);
    s.get("scenes", c.data.scenes);
    s.get("key_frame", c.data.key_frame);
    s.finish();
  }
  {
    auto s = root.sub("scene");
    auto& g = c.scene;
    s.get("frames", g.frames);
    s.get("moving_objects", g.moving_objects);
    s.get("static_objects", g.static_objects);
    s.get("speed_min", g.speed_min);
    s.get("speed_max", g.speed_max);
    s.get("extent_min", g.extent_min);
    s.get("extent_max", g.extent_max);
    s.get("walls", g.walls);
    s.get("poles", g.poles);
    s.get("area_half", g.area_half);
    s.get("ego_speed", g.ego_speed);
    s.get("clearance", g.clearance);
    s.get("max_retries", g.max_retries);
    s.finish();
  }
  {
    auto s = root.sub("sensor");
    auto& v = c.sensor;
    s.get("rings", v.rings);
    s.get("elevation_min_deg", v.elevation_min_deg);
    s.get("elevation_max_deg", v.elevation_max_deg);
    s.get("azimuth_step_deg", v.azimuth_step_deg);
    s.get("max_range", v.max_range);
    s.get("height", v.height);
    s.get("frame_dt", v.frame_dt);
    s.finish();
  }
  {
    auto s = root.sub("dsrecon");
    s.get("radius", c.densify.radius);
    s.get("rounds", c.densify.rounds);
    s.get("spacing", c.densify.spacing);
    s.get("min_points", c.densify.min_points);
    s.get("crop_radius", c.dsrecon.crop_radius);
    s.finish();
  }
  root.finish();
  c.encoder.strides = c.grid.strides;
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  using nlohmann::json;
  json j;
  j["seed"] = c.seed;
  j["alpha"] = c.decoder.alpha;
  j["beta"] = c.decoder.beta;
  j["grid"] = {{"voxel_size", c.grid.voxel_size},
               {"origin", c.grid.origin},
               {"extent", c.grid.extent},
               {"strides", c.grid.strides}};
  j["encoder"] = {{"in_channels", c.encoder.in_channels},
                  {"channels", c.encoder.channels},
                  {"down_kernels", c.encoder.down_kernels},
                  {"subm_kernel", c.encoder.subm_kernel},
                  {"subm_per_stage", c.encoder.subm_per_stage}};
  j["decoder"] = {{"channels", c.decoder.channels}, {"empty_cap", c.decoder.empty_cap}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"checkpoint_every", c.train.checkpoint_every}};
  j["data"] = {{"dir", c.data.dir}, {"scenes", c.data.scenes}, {"key_frame", c.data.key_frame}};
  j["scene"] = sim::gen_spec_to_json(c.scene);
  j["sensor"] = sim::sensor_to_json(c.sensor);
  j["dsrecon"] = {{"radius", c.densify.radius},
                  {"rounds", c.densify.rounds},
                  {"spacing", c.densify.spacing},
                  {"min_points", c.densify.min_points},
                  {"crop_radius", c.dsrecon.crop_radius}};
  return j;
}

/// Reads and validates a config file. Missing or unreadable files raise
/// std::ios_base::failure; content problems raise ConfigError.
inline RunConfig load_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = sim::read_json_file(path);
  } catch (const std::ios_base::failure&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return config_from_json(j);
}

}  // namespace tb::harness
