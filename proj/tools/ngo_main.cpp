// Command-line entry point: data generation, the two training stages,
// evaluation reports, figure rendering, and the gradient conformance suites.
// Exit codes: 0 success, 1 usage/validation error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "ngo/config.hpp"
#include "ngo/eval.hpp"
#include "ngo/gradcheck_suite.hpp"
#include "ngo/io.hpp"
#include "ngo/pipeline.hpp"
#include "ngo/report.hpp"
#include "ngo/svg.hpp"
#include "ngo/training.hpp"
#include "ngo/worldgen.hpp"

namespace fs = std::filesystem;

namespace {

struct FlagValue {
  CLI::Option* opt = nullptr;
  std::string value;
};

// Builds the effective config: defaults < config file < explicit flags.
class ConfigBuilder {
 public:
  explicit ConfigBuilder(CLI::App* cmd) : cmd_(cmd) {
    cmd->add_option("--config", config_file_, "key=value config file");
  }

  void flag(const std::string& name, const std::string& key, const std::string& help) {
    auto slot = std::make_shared<std::string>();
    auto* opt = cmd_->add_option(name, *slot, help);
    bindings_.push_back({opt, key, slot});
  }

  ngo::Config resolve() const {
    ngo::Config cfg;
    if (!config_file_.empty()) cfg.load_file(config_file_);
    for (const auto& b : bindings_)
      if (b.opt->count() > 0) cfg.set(b.key, *b.value);
    return cfg;
  }

 private:
  struct Binding {
    CLI::Option* opt;
    std::string key;
    std::shared_ptr<std::string> value;
  };
  CLI::App* cmd_;
  std::string config_file_;
  std::vector<Binding> bindings_;
};

void add_train_flags(ConfigBuilder& b) {
  b.flag("--out", "out", "output checkpoint path");
  b.flag("--metrics", "metrics", "metric log path");
  b.flag("--test-data", "test_data", "frozen test dataset (NGOD)");
  b.flag("--resume", "resume", "checkpoint to continue from");
  b.flag("--epochs", "epochs", "training epochs");
  b.flag("--datapoints", "datapoints_per_epoch", "datapoints per epoch");
  b.flag("--batch-size", "batch_size", "optimizer batch size");
  b.flag("--lr", "lr", "Adam learning rate");
  b.flag("--lambda-rot", "lambda_rot", "rotation loss weight");
  b.flag("--seed", "seed", "base RNG seed");
  b.flag("--workers", "workers", "data generator workers");
  b.flag("--deterministic", "deterministic", "single worker, strict order (0/1)");
  b.flag("--maze-min", "maze_min", "minimum maze side");
  b.flag("--maze-max", "maze_max", "maximum maze side");
  b.flag("--maze-pool", "maze_pool", "training maze pool size");
  b.flag("--maze-algo", "maze_algo", "prim|kruskal|mixed");
  b.flag("--traj-len", "traj_len", "trajectory length T0 (global stage)");
  b.flag("--local-traj-len", "local_traj_len", "source trajectory length (local stage)");
  b.flag("--halvings", "halvings", "aggregation halvings H");
  b.flag("--iterations", "iterations", "optimizer iterations M");
  b.flag("--attention", "attention", "softmax|linear");
  b.flag("--use-action", "use_action", "feed one-hot actions to the local net (0/1)");
  b.flag("--final-only-loss", "final_only_loss", "supervise only the final iterate (0/1)");
  b.flag("--feat-dim", "feat_dim", "optimizer feature channels D_f");
  b.flag("--hidden", "hidden", "optimizer conv width");
  b.flag("--layers", "layers", "optimizer conv depth");
}

int cmd_gen_data(const std::string& out, int n_traj, int traj_len, int maze_min, int maze_max,
                 int maze_pool, const std::string& maze_algo, std::uint64_t seed, int workers,
                 const std::string& split) {
  if (split != "seen" && split != "unseen") throw ngo::ConfigError("--split must be seen|unseen");
  ngo::WorldConfig world;
  world.seed = seed;
  world.maze_min = maze_min;
  world.maze_max = maze_max;
  world.maze_pool = maze_pool;
  world.maze_algo = maze_algo;
  const bool unseen = split == "unseen";

  struct Slot {
    std::int64_t index;
    ngo::Trajectory traj;
  };
  std::vector<ngo::Trajectory> trajs(static_cast<std::size_t>(n_traj));
  ngo::Pipeline<Slot> pipe(workers, n_traj, 16, [&](int, std::int64_t i) {
    return Slot{i, ngo::make_trajectory(world, unseen, static_cast<std::uint64_t>(i), traj_len)};
  });
  Slot slot;
  while (pipe.next(slot)) trajs[static_cast<std::size_t>(slot.index)] = std::move(slot.traj);
  ngo::write_dataset(out, trajs);
  std::printf("wrote %d trajectories to %s (split=%s)\n", n_traj, out.c_str(), split.c_str());
  return 0;
}

ngo::LocalPoseNet<float> local_net_from_checkpoint(const ngo::Checkpoint& ckpt) {
  const std::string* stage = ckpt.find_meta("stage");
  if (!stage || *stage != "local")
    throw ngo::IoError("checkpoint does not hold a local-stage model");
  ngo::LocalNetConfig cfg;
  if (const std::string* s = ckpt.find_meta("cfg.feature_dim")) cfg.feature_dim = std::stoi(*s);
  if (const std::string* s = ckpt.find_meta("cfg.use_action")) cfg.use_action = *s == "1";
  ngo::Rng tmp(0);
  ngo::LocalPoseNet<float> net;
  net.init(cfg, tmp);
  ngo::ParamSet<float> params;
  net.register_params(params);
  ngo::load_params(ckpt, params);
  return net;
}

struct GlobalModel {
  ngo::PoseAggregator<float> agg;
  ngo::NeuralGraphOptimizer<float> graph_opt;
  int window = 4;
};

GlobalModel global_model_from_checkpoint(const ngo::Checkpoint& ckpt, int local_feature_dim) {
  const std::string* stage = ckpt.find_meta("stage");
  if (!stage || *stage != "global")
    throw ngo::IoError("checkpoint does not hold a global-stage model");
  auto meta_int = [&](const char* key, int fallback) {
    const std::string* s = ckpt.find_meta(key);
    return s ? std::stoi(*s) : fallback;
  };
  GlobalModel model;
  ngo::AggregatorConfig acfg;
  acfg.in_dim = local_feature_dim;
  acfg.feat_dim = meta_int("cfg.feat_dim", 128);
  acfg.halvings = meta_int("cfg.halvings", 2);
  ngo::NgoConfig ncfg;
  ncfg.feat_dim = acfg.feat_dim;
  ncfg.hidden = meta_int("cfg.hidden", 128);
  ncfg.layers = meta_int("cfg.layers", 9);
  if (const std::string* s = ckpt.find_meta("cfg.attention")) ncfg.softmax_attention = *s == "softmax";
  ngo::Rng tmp(0);
  model.agg.init(acfg, tmp);
  model.graph_opt.init(ncfg, tmp);
  model.window = 1 << acfg.halvings;
  ngo::ParamSet<float> params;
  model.agg.register_params(params);
  model.graph_opt.register_params(params);
  ngo::load_params(ckpt, params);
  return model;
}

std::vector<int> parse_iteration_list(const std::string& text) {
  std::vector<int> out;
  std::string cur;
  for (const char c : text + ",") {
    if (c == ',') {
      if (!cur.empty()) {
        out.push_back(std::stoi(cur));
        cur.clear();
      }
    } else {
      cur += c;
    }
  }
  if (out.empty()) throw ngo::ConfigError("--iterations needs at least one value");
  for (int m : out)
    if (m < 1) throw ngo::ConfigError("iteration counts must be >= 1");
  return out;
}

int cmd_eval(const std::string& local_ckpt_path, const std::string& global_ckpt_path,
             const std::vector<std::string>& data_paths, std::vector<std::string> labels,
             const std::string& iterations_text, const std::string& out_dir, bool accumulated,
             int overlays, int attention_dumps) {
  if (data_paths.empty()) throw ngo::ConfigError("--data is required");
  while (labels.size() < data_paths.size()) {
    const auto stem = fs::path(data_paths[labels.size()]).stem().string();
    labels.push_back(stem.empty() ? "split" + std::to_string(labels.size()) : stem);
  }
  if (!out_dir.empty()) fs::create_directories(out_dir);

  const ngo::Checkpoint lckpt = ngo::read_checkpoint(local_ckpt_path);
  ngo::LocalPoseNet<float> local = local_net_from_checkpoint(lckpt);

  std::optional<GlobalModel> global;
  if (!global_ckpt_path.empty())
    global.emplace(global_model_from_checkpoint(ngo::read_checkpoint(global_ckpt_path),
                                                local.cfg.feature_dim));

  ngo::EvalOptions opts;
  opts.iterations = parse_iteration_list(iterations_text);
  opts.accumulated_drift = accumulated;
  opts.overlay_count = overlays;
  opts.attention_count = attention_dumps;

  ngo::EvalReport report;
  for (std::size_t i = 0; i < data_paths.size(); ++i) {
    const auto trajs = ngo::read_dataset(data_paths[i]);
    ngo::run_split_eval(local, global ? &global->agg : nullptr,
                        global ? &global->graph_opt : nullptr, global ? global->window : 4, trajs,
                        labels[i], opts, report, out_dir);
  }
  if (!out_dir.empty()) ngo::write_report_csv((fs::path(out_dir) / "report.csv").string(), report);

  std::printf("%-12s %-8s %12s %12s %12s %12s\n", "model", "split", "rmse_pos", "rmse_rot",
              "pct_trans", "pct_rot");
  for (const auto& r : report.rows)
    std::printf("%-12s %-8s %12.6f %12.6f %12.6f %12.6f\n", r.model.c_str(), r.split.c_str(),
                r.agg.rmse_pos, r.agg.rmse_rot, r.agg.pct_trans, r.agg.pct_rot);
  return 0;
}

int cmd_plot(const std::string& in, const std::string& out, const std::string& mode,
             const std::string& title) {
  const ngo::CsvTable table = ngo::read_csv(in);
  std::vector<ngo::PlotSeries> series;
  if (mode == "series") {
    if (!table.header.empty()) {
      for (std::size_t c = 1; c < table.header.size(); ++c)
        series.push_back({table.header[c], table.columns[0], table.columns[c]});
    }
  } else if (mode == "traj") {
    auto polyline = [&](const std::string& label, const std::string& prefix) {
      const int xc = table.column(prefix + "_x");
      const int yc = table.column(prefix + "_y");
      if (xc < 0 || yc < 0) return;
      series.push_back({label, table.columns[static_cast<std::size_t>(xc)],
                        table.columns[static_cast<std::size_t>(yc)]});
    };
    polyline("gt", "gt");
    polyline("local", "local");
    for (const auto& h : table.header)
      if (h.size() > 2 && h.rfind("global_m", 0) == 0 && h.substr(h.size() - 2) == "_x")
        polyline(h.substr(0, h.size() - 2), h.substr(0, h.size() - 2));
    if (series.empty() && !table.header.empty())
      throw ngo::PlotError("trajectory mode expects gt_x/gt_y style columns in " + in);
  } else {
    throw ngo::ConfigError("--mode must be series|traj");
  }
  ngo::write_svg_plot(out, series, title);
  std::printf("wrote %s (%zu series)\n", out.c_str(), series.size());
  return 0;
}

int cmd_grad_check(const std::string& module, std::uint64_t seed) {
  ngo::GradSuiteResult result;
  if (module == "tensor") {
    result = ngo::run_tensor_grad_suite(seed);
  } else if (module == "nets") {
    result = ngo::run_nets_grad_suite(seed);
  } else if (module == "all") {
    result = ngo::run_tensor_grad_suite(seed);
    auto nets = ngo::run_nets_grad_suite(seed);
    result.ops.insert(result.ops.end(), nets.ops.begin(), nets.ops.end());
  } else {
    throw ngo::ConfigError("--module must be tensor|nets|all");
  }
  for (const auto& op : result.ops)
    std::printf("%-32s max_rel_err %.3e (gate %.0e) %s%s%s\n", op.op.c_str(), op.max_rel_err,
                op.gate, op.pass() ? "PASS" : "FAIL",
                op.worst_param.empty() ? "" : "  worst: ", op.worst_param.c_str());
  const auto& worst = result.worst();
  std::printf("worst offender: %s at %.3e\n", worst.op.c_str(), worst.max_rel_err);
  if (!result.all_pass()) {
    std::fprintf(stderr, "gradient check FAILED\n");
    return 2;
  }
  std::printf("gradient check passed\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trainable global pose estimation in 2D mazes"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a trajectory dataset");
  std::string gen_out, gen_split = "seen", gen_algo = "prim";
  int gen_n = 39, gen_len = 256, gen_min = 9, gen_max = 13, gen_pool = 64, gen_workers = 1;
  std::uint64_t gen_seed = 1;
  bool gen_det = false;
  gen->add_option("--out", gen_out, "output NGOD path")->required();
  gen->add_option("--n-traj", gen_n, "trajectory count");
  gen->add_option("--traj-len", gen_len, "max steps per trajectory");
  gen->add_option("--maze-min", gen_min, "minimum maze side");
  gen->add_option("--maze-max", gen_max, "maximum maze side");
  gen->add_option("--maze-pool", gen_pool, "seen-split maze pool size");
  gen->add_option("--maze-algo", gen_algo, "prim|kruskal|mixed");
  gen->add_option("--seed", gen_seed, "base seed");
  gen->add_option("--workers", gen_workers, "generator workers");
  gen->add_option("--split", gen_split, "seen|unseen");
  gen->add_flag("--deterministic", gen_det, "force one worker");

  // train-local / train-global
  auto* tl = app.add_subcommand("train-local", "pretrain the local pose net on frame pairs");
  ConfigBuilder tl_cfg(tl);
  add_train_flags(tl_cfg);
  auto* tg = app.add_subcommand("train-global", "train aggregation + graph optimizer, local frozen");
  ConfigBuilder tg_cfg(tg);
  add_train_flags(tg_cfg);
  std::string tg_local_ckpt;
  tg->add_option("--local-ckpt", tg_local_ckpt, "frozen local checkpoint")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate checkpoints over datasets");
  std::string ev_local, ev_global, ev_iters = "1,5", ev_outdir;
  std::vector<std::string> ev_data, ev_labels;
  bool ev_accumulated = false;
  int ev_overlays = 4, ev_attn = 1;
  ev->add_option("--local-ckpt", ev_local, "local checkpoint")->required();
  ev->add_option("--global-ckpt", ev_global, "global checkpoint (optional)");
  ev->add_option("--data", ev_data, "NGOD dataset (repeatable)")->required();
  ev->add_option("--label", ev_labels, "split label per dataset (default: file stem)");
  ev->add_option("--iterations", ev_iters, "comma-separated iteration counts");
  ev->add_option("--out-dir", ev_outdir, "directory for CSV artifacts");
  ev->add_flag("--accumulated", ev_accumulated, "per-step drift mode for % metrics");
  ev->add_option("--overlays", ev_overlays, "trajectory overlay dumps per split");
  ev->add_option("--attention-dumps", ev_attn, "trajectories with attention CSVs");

  // plot
  auto* pl = app.add_subcommand("plot", "render a CSV as an SVG figure");
  std::string pl_in, pl_out, pl_mode = "series", pl_title;
  pl->add_option("--in", pl_in, "input CSV")->required();
  pl->add_option("--out", pl_out, "output SVG")->required();
  pl->add_option("--mode", pl_mode, "series|traj");
  pl->add_option("--title", pl_title, "figure title");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference conformance suites");
  std::string gc_module = "all";
  std::uint64_t gc_seed = 1;
  gc->add_option("--module", gc_module, "tensor|nets|all");
  gc->add_option("--seed", gc_seed, "suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_out, gen_n, gen_len, gen_min, gen_max, gen_pool, gen_algo, gen_seed,
                          gen_det ? 1 : gen_workers, gen_split);
    if (tl->parsed()) {
      ngo::Config cfg = tl_cfg.resolve();
      cfg.set("stage", "local");
      const auto result = ngo::train_local(ngo::TrainConfig::from_config(cfg));
      std::printf("local stage done: %d epochs, %lld pairs, train loss %.6g\n", result.epochs_run,
                  static_cast<long long>(result.datapoints_consumed), result.final_train_loss);
      if (result.final_test_rmse >= 0)
        std::printf("test pair RMSE %.6g (zero-motion baseline %.6g)\n", result.final_test_rmse,
                    result.zero_predictor_rmse);
      return 0;
    }
    if (tg->parsed()) {
      ngo::Config cfg = tg_cfg.resolve();
      cfg.set("stage", "global");
      cfg.set("local_ckpt", tg_local_ckpt);
      const auto result = ngo::train_global(ngo::TrainConfig::from_config(cfg));
      std::printf("global stage done: %d epochs, %lld trajectories, train loss %.6g\n",
                  result.epochs_run, static_cast<long long>(result.trajectories_consumed),
                  result.final_train_loss);
      if (result.test_rmse_local >= 0)
        std::printf("test RMSE local %.6g vs global %.6g\n", result.test_rmse_local,
                    result.test_rmse_global);
      return 0;
    }
    if (ev->parsed())
      return cmd_eval(ev_local, ev_global, ev_data, ev_labels, ev_iters, ev_outdir, ev_accumulated,
                      ev_overlays, ev_attn);
    if (pl->parsed()) return cmd_plot(pl_in, pl_out, pl_mode, pl_title);
    if (gc->parsed()) return cmd_grad_check(gc_module, gc_seed);
  } catch (const ngo::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const CLI::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
