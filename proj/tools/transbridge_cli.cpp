// SPDX-License-Identifier: Apache-2.0
// transbridge: scene generation, DSRecon labels, training, evaluation and
// completion export from the command line.
//
// exit codes: 0 ok, 1 usage or validation error, 2 I/O error

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "transbridge/harness/config.hpp"
#include "transbridge/harness/dataset.hpp"
#include "transbridge/harness/metrics.hpp"
#include "transbridge/harness/train.hpp"

namespace {

using namespace tb;
using namespace tb::harness;

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kIo = 2;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg;
  if (!g.config.empty()) cfg = load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

std::string need_out(const Globals& g, const char* cmd) {
  if (g.out.empty()) throw ConfigError(std::string(cmd) + ": --out is required");
  return g.out;
}

int cmd_gen(const Globals& g) {
  const RunConfig cfg = resolve_config(g);
  const std::string out = need_out(g, "gen");
  write_scenes(cfg, out);
  std::printf("wrote %d scenes to %s\n", cfg.data.scenes, out.c_str());
  return kOk;
}

int cmd_dsrecon(const Globals& g, const std::string& in, const std::string& grid_path) {
  // only the grid, densifier and key frame matter here
  RunConfig cfg = resolve_config(g);
  if (!grid_path.empty()) cfg.grid = grid_from_json(sim::read_json_file(grid_path), grid_path);
  const int n = write_dsrecon(cfg, in, need_out(g, "dsrecon"));
  std::printf("processed %d scenes\n", n);
  return kOk;
}

int cmd_train(const Globals& g, std::string data) {
  RunConfig cfg = resolve_config(g);
  const std::string out = need_out(g, "train");
  if (data.empty()) data = cfg.data.dir;
  if (data.empty()) throw ConfigError("train: no data directory (use --data or data.dir)");
  const auto samples = load_dataset(cfg, data);
  auto result = train(cfg, samples, out);
  sim::write_json_file(out + "/config.json", config_to_json(cfg));
  write_report(out + "/metrics.json", result.report);
  const auto& last = result.report.losses.back();
  std::printf("trained %zu scenes, %d steps, final L=%.6g L_D=%.6g L_T=%.6g\n", samples.size(), last.step, last.total,
              last.detection, last.completion);
  return kOk;
}

int cmd_eval(const Globals& g, std::string checkpoint, std::string data, const std::vector<double>& nds) {
  if (!nds.empty()) {
    if (nds.size() != 6) throw ConfigError("eval: --nds takes mAP mATE mASE mAOE mAVE mAAE");
    MetricsReport r;
    r.nds = NdsInputs{nds[0], nds[1], nds[2], nds[3], nds[4], nds[5]};
    const double score = r.nds->score();
    if (!g.out.empty()) {
      std::filesystem::create_directories(g.out);
      write_report(g.out + "/metrics.json", r);
    }
    std::printf("%.6f\n", score);
    return kOk;
  }
  const RunConfig cfg = resolve_config(g);
  if (checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
  if (data.empty()) data = cfg.data.dir;
  if (data.empty()) throw ConfigError("eval: no data directory (use --data or data.dir)");
  ParamStore store = load_model(cfg, checkpoint);
  const auto samples = load_dataset(cfg, data);
  const MetricsReport r = evaluate(store, cfg, samples);
  const nlohmann::json j = report_to_json(r);
  if (!g.out.empty()) {
    std::filesystem::create_directories(g.out);
    sim::write_json_file(g.out + "/metrics.json", j);
  }
  std::cout << j.dump(2) << '\n';
  return kOk;
}

int cmd_complete(const Globals& g, const std::string& checkpoint, const std::string& in, int frame,
                 std::optional<double> beta) {
  const RunConfig cfg = resolve_config(g);
  if (checkpoint.empty()) throw ConfigError("complete: --checkpoint is required");
  if (in.empty()) throw ConfigError("complete: --in is required");
  const std::string out = need_out(g, "complete");
  ParamStore store = load_model(cfg, checkpoint);
  const auto seq = sim::read_sequence(in);
  const int t = frame > 0 ? frame : cfg.data.key_frame;
  if (t > seq.frame_count()) throw ConfigError("complete: frame " + std::to_string(t) + " not in " + in);
  const Completion c = complete_frame(store, cfg, encode_frame(seq.frame(t), cfg), beta.value_or(cfg.decoder.beta));
  const std::size_t n = export_completion(c, out);
  std::printf("exported %zu points to %s\n", n, out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint sparse 3D detection and scene completion toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "run configuration (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "override the configured seed");
  app.add_option("--out", g.out, "output directory");

  auto* gen = app.add_subcommand("gen", "generate synthetic scene sequences");

  std::string ds_in, ds_grid;
  auto* ds = app.add_subcommand("dsrecon", "dense labels for every scene in a directory");
  ds->add_option("--in", ds_in, "directory of scene_NNNN.json")->required();
  ds->add_option("--grid", ds_grid, "grid JSON overriding the config grid");

  std::string tr_data;
  auto* tr = app.add_subcommand("train", "train on a scene directory");
  tr->add_option("--data", tr_data, "scene directory (defaults to data.dir)");

  std::string ev_ckpt, ev_data;
  std::vector<double> ev_nds;
  auto* ev = app.add_subcommand("eval", "per-level existence metrics of a checkpoint");
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file");
  ev->add_option("--data", ev_data, "scene directory (defaults to data.dir)");
  ev->add_option("--nds", ev_nds, "print the detection score of mAP mATE mASE mAOE mAVE mAAE")->expected(6);

  std::string cp_ckpt, cp_in;
  int cp_frame = 0;
  double cp_beta = 0.0;
  auto* cp = app.add_subcommand("complete", "export the completed level-1 cloud of one frame");
  cp->add_option("--checkpoint", cp_ckpt, "checkpoint file");
  cp->add_option("--in", cp_in, "scene sequence JSON");
  cp->add_option("--frame", cp_frame, "1-based frame (defaults to the key frame)");
  auto* beta_opt = cp->add_option("--beta", cp_beta, "existence threshold in (0,1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << '\n' << app.help();
    return kValidation;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*gen) return cmd_gen(g);
    if (*ds) return cmd_dsrecon(g, ds_in, ds_grid);
    if (*tr) return cmd_train(g, tr_data);
    if (*ev) return cmd_eval(g, ev_ckpt, ev_data, ev_nds);
    if (*cp) return cmd_complete(g, cp_ckpt, cp_in, cp_frame, *beta_opt ? std::optional<double>(cp_beta) : std::nullopt);
  } catch (const std::ios_base::failure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  }
  return kValidation;
}
