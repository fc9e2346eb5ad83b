#pragma once

// Losses and the two-stage training pipeline: pretrain the local pose net on
// frame pairs, then train the aggregator + graph optimizer on whole
// trajectories with the local weights frozen. Data comes from parallel
// single-use generator workers.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ngo/config.hpp"
#include "ngo/eval.hpp"
#include "ngo/io.hpp"
#include "ngo/nets.hpp"
#include "ngo/optim.hpp"
#include "ngo/pipeline.hpp"
#include "ngo/worldgen.hpp"

namespace ngo {

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Squared SE(2) error (dx^2 + dy^2 + lambda*wrap(dtheta)^2) averaged over the
// columns of [3,N] pred/target blocks.
template <class S>
Tensor<S> se2_squared_error(const Tensor<S>& pred, const Tensor<S>& target, double lambda_rot) {
  if (pred.shape() != target.shape() || pred.rank() != 2 || pred.dim(0) != 3)
    throw ShapeError("se2_squared_error: need matching [3,N] blocks, got " +
                     shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  auto d = sub(pred, target);
  auto ex = slice(d, 0, 0, 1);
  auto ey = slice(d, 0, 1, 2);
  auto er = wrap_angle(slice(d, 0, 2, 3));
  auto sq = add(add(mul(ex, ex), mul(ey, ey)), scale(mul(er, er), static_cast<S>(lambda_rot)));
  return mean(sq);
}

template <class S>
Tensor<S> local_loss(const Tensor<S>& pred, const Tensor<S>& target, double lambda_rot = 1.0) {
  return se2_squared_error(pred, target, lambda_rot);
}

// Deep supervision over the optimizer iterates: equal-weight sum of the pose
// losses at every iteration, or the final iterate alone.
template <class S>
Tensor<S> global_loss(const std::vector<Tensor<S>>& iterate_poses, const Tensor<S>& gt_poses,
                      double lambda_rot = 1.0, bool final_only = false) {
  if (iterate_poses.empty()) throw std::invalid_argument("global_loss: no iterates");
  if (final_only) return se2_squared_error(iterate_poses.back(), gt_poses, lambda_rot);
  Tensor<S> total = se2_squared_error(iterate_poses[0], gt_poses, lambda_rot);
  for (std::size_t i = 1; i < iterate_poses.size(); ++i)
    total = add(total, se2_squared_error(iterate_poses[i], gt_poses, lambda_rot));
  return total;
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::string stage = "local";  // local | global
  int epochs = 3;
  std::int64_t datapoints_per_epoch = 50000;  // pairs (local) / trajectories (global)
  int batch_size = 32;
  int traj_len = 256;        // T0 for the global stage
  int local_traj_len = 65;   // source trajectories for frame pairs
  int halvings = 2;          // H
  int iterations = 5;        // M
  AdamConfig adam;
  double lambda_rot = 1.0;
  bool softmax_attention = true;
  bool final_only_loss = false;
  bool use_action = true;
  int feature_dim = 256;
  int feat_dim = 128;   // D_f
  int hidden = 128;
  int layers = 9;
  int workers = 1;
  int queue_capacity = 64;
  bool deterministic = false;
  WorldConfig world;

  std::string out;         // checkpoint path
  std::string metrics;     // metric log path ("" disables)
  std::string test_data;   // NGOD path ("" disables evaluation)
  std::string resume;      // checkpoint to continue from
  std::string local_ckpt;  // frozen local net for the global stage

  static TrainConfig from_config(const Config& cfg) {
    TrainConfig tc;
    tc.stage = cfg.get_str("stage", tc.stage);
    tc.epochs = static_cast<int>(cfg.get_int("epochs", tc.epochs));
    tc.datapoints_per_epoch = cfg.get_int("datapoints_per_epoch", tc.stage == "global" ? 500 : 50000);
    tc.batch_size = static_cast<int>(cfg.get_int("batch_size", tc.stage == "global" ? 4 : 32));
    tc.traj_len = static_cast<int>(cfg.get_int("traj_len", tc.traj_len));
    tc.local_traj_len = static_cast<int>(cfg.get_int("local_traj_len", tc.local_traj_len));
    tc.halvings = static_cast<int>(cfg.get_int("halvings", tc.halvings));
    tc.iterations = static_cast<int>(cfg.get_int("iterations", tc.iterations));
    tc.adam.lr = cfg.get_double("lr", tc.adam.lr);
    tc.adam.beta1 = cfg.get_double("beta1", tc.adam.beta1);
    tc.adam.beta2 = cfg.get_double("beta2", tc.adam.beta2);
    tc.adam.eps = cfg.get_double("adam_eps", tc.adam.eps);
    tc.lambda_rot = cfg.get_double("lambda_rot", tc.lambda_rot);
    const std::string attn = cfg.get_str("attention", "softmax");
    if (attn != "softmax" && attn != "linear") throw ConfigError("attention must be softmax|linear");
    tc.softmax_attention = attn == "softmax";
    tc.final_only_loss = cfg.get_bool("final_only_loss", tc.final_only_loss);
    tc.use_action = cfg.get_bool("use_action", tc.use_action);
    tc.feature_dim = static_cast<int>(cfg.get_int("feature_dim", tc.feature_dim));
    tc.feat_dim = static_cast<int>(cfg.get_int("feat_dim", tc.feat_dim));
    tc.hidden = static_cast<int>(cfg.get_int("hidden", tc.hidden));
    tc.layers = static_cast<int>(cfg.get_int("layers", tc.layers));
    tc.workers = static_cast<int>(cfg.get_int("workers", tc.workers));
    tc.queue_capacity = static_cast<int>(cfg.get_int("queue_capacity", tc.queue_capacity));
    tc.deterministic = cfg.get_bool("deterministic", tc.deterministic);
    tc.world.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));
    tc.world.maze_min = static_cast<int>(cfg.get_int("maze_min", tc.world.maze_min));
    tc.world.maze_max = static_cast<int>(cfg.get_int("maze_max", tc.world.maze_max));
    tc.world.maze_pool = static_cast<int>(cfg.get_int("maze_pool", tc.world.maze_pool));
    tc.world.maze_algo = cfg.get_str("maze_algo", tc.world.maze_algo);
    tc.out = cfg.get_str("out", "");
    tc.metrics = cfg.get_str("metrics", "");
    tc.test_data = cfg.get_str("test_data", "");
    tc.resume = cfg.get_str("resume", "");
    tc.local_ckpt = cfg.get_str("local_ckpt", "");
    if (tc.epochs < 0) throw ConfigError("epochs must be >= 0");
    if (tc.batch_size < 1) throw ConfigError("batch_size must be positive");
    if (tc.datapoints_per_epoch < 1) throw ConfigError("datapoints_per_epoch must be positive");
    if (tc.workers < 1) throw ConfigError("workers must be >= 1");
    if (tc.deterministic) tc.workers = 1;
    return tc;
  }

  int window() const { return 1 << halvings; }

  // The semantic configuration: everything that shapes the result, none of
  // the file paths. Echoed into checkpoints and hashed.
  Config canonical() const {
    Config c;
    c.set("stage", stage);
    c.set("epochs", static_cast<std::int64_t>(epochs));
    c.set("datapoints_per_epoch", datapoints_per_epoch);
    c.set("batch_size", static_cast<std::int64_t>(batch_size));
    c.set("traj_len", static_cast<std::int64_t>(traj_len));
    c.set("local_traj_len", static_cast<std::int64_t>(local_traj_len));
    c.set("halvings", static_cast<std::int64_t>(halvings));
    c.set("iterations", static_cast<std::int64_t>(iterations));
    c.set("lr", adam.lr);
    c.set("beta1", adam.beta1);
    c.set("beta2", adam.beta2);
    c.set("adam_eps", adam.eps);
    c.set("lambda_rot", lambda_rot);
    c.set("attention", std::string(softmax_attention ? "softmax" : "linear"));
    c.set("final_only_loss", std::string(final_only_loss ? "1" : "0"));
    c.set("use_action", std::string(use_action ? "1" : "0"));
    c.set("feature_dim", static_cast<std::int64_t>(feature_dim));
    c.set("feat_dim", static_cast<std::int64_t>(feat_dim));
    c.set("hidden", static_cast<std::int64_t>(hidden));
    c.set("layers", static_cast<std::int64_t>(layers));
    c.set("seed", static_cast<std::int64_t>(world.seed));
    c.set("maze_min", static_cast<std::int64_t>(world.maze_min));
    c.set("maze_max", static_cast<std::int64_t>(world.maze_max));
    c.set("maze_pool", static_cast<std::int64_t>(world.maze_pool));
    c.set("maze_algo", world.maze_algo);
    c.set("deterministic", std::string(deterministic ? "1" : "0"));
    return c;
  }
};

// ---------------------------------------------------------------------------
// checkpoint plumbing
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
Checkpoint build_checkpoint(const TrainConfig& cfg, const ParamSet<S>& params,
                            const AdamState<S>* adam, int epoch) {
  Checkpoint ckpt;
  ckpt.metadata.emplace_back("format", "ngo-checkpoint");
  ckpt.metadata.emplace_back("stage", cfg.stage);
  ckpt.metadata.emplace_back("epoch", std::to_string(epoch));
  const Config canon = cfg.canonical();
  ckpt.metadata.emplace_back("config_hash", canon.hash());
  for (const auto& [k, v] : canon.values()) ckpt.metadata.emplace_back("cfg." + k, v);
  append_params(ckpt, params);
  if (adam) {
    ckpt.metadata.emplace_back("adam_t", std::to_string(adam->t));
    std::size_t pi = 0;
    for (const auto& [name, p] : params) {
      std::vector<float> m(adam->m[pi].size()), v(adam->v[pi].size());
      for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = static_cast<float>(adam->m[pi][i]);
        v[i] = static_cast<float>(adam->v[pi][i]);
      }
      ckpt.tensors.emplace_back("adam/m/" + name, Tensor<float>::from_data(p.shape(), std::move(m)));
      ckpt.tensors.emplace_back("adam/v/" + name, Tensor<float>::from_data(p.shape(), std::move(v)));
      ++pi;
    }
  }
  return ckpt;
}

template <class S>
void restore_adam(const Checkpoint& ckpt, const ParamSet<S>& params, AdamState<S>& adam) {
  const std::string* t = ckpt.find_meta("adam_t");
  if (!t) throw IoError("checkpoint has no optimizer state to resume from");
  adam.t = std::stoll(*t);
  std::size_t pi = 0;
  for (const auto& [name, p] : params) {
    const Tensor<float>* m = ckpt.find_tensor("adam/m/" + name);
    const Tensor<float>* v = ckpt.find_tensor("adam/v/" + name);
    if (!m || !v) throw IoError("checkpoint is missing optimizer state for '" + name + "'");
    for (std::size_t i = 0; i < adam.m[pi].size(); ++i) {
      adam.m[pi][i] = static_cast<S>(m->value()[i]);
      adam.v[pi][i] = static_cast<S>(v->value()[i]);
    }
    ++pi;
  }
}

inline std::string epoch_path(const std::string& out, int epoch) {
  return out + ".epoch" + std::to_string(epoch);
}

inline std::uint64_t item_seed(const WorldConfig& world, int worker, std::int64_t index) {
  return derive_seed(derive_seed(world.seed, seed_stream::kData, static_cast<std::uint64_t>(worker)),
                     1, static_cast<std::uint64_t>(index));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// local stage
// ---------------------------------------------------------------------------

struct TrainResult {
  int epochs_run = 0;
  std::int64_t datapoints_consumed = 0;
  double final_train_loss = 0.0;
  double final_test_rmse = -1.0;       // positional delta RMSE on test pairs
  double zero_predictor_rmse = -1.0;   // baseline: predict zero motion
};

namespace detail {

struct LocalBlock {
  int pairs = 0;
  std::vector<float> frames;   // [pairs, 8, rays]
  std::vector<float> actions;  // [pairs, 3]
  std::vector<float> labels;   // [3, pairs]
};

inline LocalBlock make_local_block(const TrainConfig& cfg, int worker, std::int64_t index) {
  const std::uint64_t seed = item_seed(cfg.world, worker, index);
  const Trajectory traj = make_trajectory(cfg.world, /*unseen=*/false, seed, cfg.local_traj_len);
  const int pairs = static_cast<int>(traj.gt_poses.size()) - 1;
  LocalBlock block;
  block.pairs = pairs;
  block.frames.resize(static_cast<std::size_t>(pairs) * kPairChannels * Observation::kRays);
  block.actions.assign(static_cast<std::size_t>(pairs) * 3, 0.f);
  block.labels.resize(static_cast<std::size_t>(3 * pairs));
  // per-item shuffle decorrelates batches drawn from one trajectory
  std::vector<int> order(static_cast<std::size_t>(pairs));
  for (int i = 0; i < pairs; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, 0x73687566));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  for (int slot = 0; slot < pairs; ++slot) {
    const int t = order[static_cast<std::size_t>(slot)];
    write_pair_channels(traj.observations[static_cast<std::size_t>(t)],
                        traj.observations[static_cast<std::size_t>(t + 1)],
                        block.frames.data() + static_cast<std::size_t>(slot) * kPairChannels * Observation::kRays);
    block.actions[static_cast<std::size_t>(slot * 3 + static_cast<int>(traj.actions[static_cast<std::size_t>(t)]))] = 1.f;
    const RelPose2 d = between(traj.gt_poses[static_cast<std::size_t>(t)], traj.gt_poses[static_cast<std::size_t>(t + 1)]);
    block.labels[static_cast<std::size_t>(slot)] = static_cast<float>(d.dx);
    block.labels[static_cast<std::size_t>(pairs + slot)] = static_cast<float>(d.dy);
    block.labels[static_cast<std::size_t>(2 * pairs + slot)] = static_cast<float>(d.dtheta);
  }
#ifndef NDEBUG
  // labels must recompose to the ground-truth poses
  {
    const auto back = r2g(g2r(traj.gt_poses));
    for (std::size_t i = 0; i < back.size(); ++i) {
      assert(std::abs(back[i].x - traj.gt_poses[i].x) < 1e-9);
      assert(std::abs(back[i].y - traj.gt_poses[i].y) < 1e-9);
    }
  }
#endif
  return block;
}

// Per-pair prediction RMSE (positional) over a test dataset, plus the
// zero-motion baseline.
inline std::pair<double, double> local_pair_rmse(const LocalPoseNet<float>& net,
                                                 const std::vector<Trajectory>& test) {
  NoGradGuard ng;
  double sq = 0.0, sq_zero = 0.0;
  std::int64_t n = 0;
  for (const auto& traj : test) {
    auto inf = run_local_inference(net, traj);
    const int pairs = inf.deltas.dim(1);
    for (int t = 0; t < pairs; ++t) {
      const RelPose2 gt = between(traj.gt_poses[static_cast<std::size_t>(t)], traj.gt_poses[static_cast<std::size_t>(t + 1)]);
      const double ex = inf.deltas.value()[static_cast<std::size_t>(t)] - gt.dx;
      const double ey = inf.deltas.value()[static_cast<std::size_t>(pairs + t)] - gt.dy;
      sq += ex * ex + ey * ey;
      sq_zero += gt.dx * gt.dx + gt.dy * gt.dy;
      ++n;
    }
  }
  return {std::sqrt(sq / static_cast<double>(n)), std::sqrt(sq_zero / static_cast<double>(n))};
}

}  // namespace detail

inline TrainResult train_local(const TrainConfig& cfg) {
  if (cfg.out.empty()) throw ConfigError("train_local: 'out' checkpoint path is required");
  Rng init_rng(derive_seed(cfg.world.seed, seed_stream::kInit));
  LocalPoseNet<float> net;
  net.init({cfg.feature_dim, cfg.use_action}, init_rng);
  ParamSet<float> params;
  net.register_params(params);
  AdamState<float> adam(params, cfg.adam);

  int start_epoch = 0;
  if (!cfg.resume.empty()) {
    const Checkpoint ckpt = read_checkpoint(cfg.resume);
    const std::string* stage = ckpt.find_meta("stage");
    if (!stage || *stage != "local") throw IoError("resume checkpoint is not a local-stage checkpoint");
    load_params(ckpt, params);
    detail::restore_adam(ckpt, params, adam);
    start_epoch = static_cast<int>(std::stoll(*ckpt.find_meta("epoch"))) + 1;
  }

  MetricLog log;
  if (!cfg.metrics.empty()) log.open(cfg.metrics, /*append=*/!cfg.resume.empty());
  std::vector<Trajectory> test;
  if (!cfg.test_data.empty()) test = read_dataset(cfg.test_data);

  const std::int64_t pairs_per_item = cfg.local_traj_len - 1;
  const std::int64_t items_per_epoch =
      (cfg.datapoints_per_epoch + pairs_per_item - 1) / pairs_per_item;

  TrainResult result;
  const int rays = Observation::kRays;
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    Pipeline<detail::LocalBlock> pipe(
        cfg.workers, items_per_epoch, static_cast<std::size_t>(cfg.queue_capacity),
        [&cfg](int w, std::int64_t i) { return detail::make_local_block(cfg, w, i); },
        /*first_index=*/static_cast<std::int64_t>(epoch) * items_per_epoch);

    std::vector<float> bframes, bactions, blabels_x, blabels_y, blabels_t;
    double epoch_loss = 0.0;
    std::int64_t epoch_batches = 0;
    auto flush = [&] {
      const int n = static_cast<int>(bactions.size() / 3);
      if (n == 0) return;
      std::vector<float> labels(static_cast<std::size_t>(3 * n));
      std::copy(blabels_x.begin(), blabels_x.end(), labels.begin());
      std::copy(blabels_y.begin(), blabels_y.end(), labels.begin() + n);
      std::copy(blabels_t.begin(), blabels_t.end(), labels.begin() + 2 * n);
      auto frames = Tensor<float>::from_data({n, kPairChannels, rays}, std::move(bframes));
      auto actions = Tensor<float>::from_data({n, 3}, std::move(bactions));
      auto target = Tensor<float>::from_data({3, n}, std::move(labels));
      auto out = net.forward(frames, cfg.use_action ? actions : Tensor<float>{});
      auto loss = local_loss(out.deltas, target, cfg.lambda_rot);
      zero_grad(params);
      backward(loss);
      adam_step(params, adam);
      epoch_loss += loss.item();
      ++epoch_batches;
      result.datapoints_consumed += n;
      bframes.clear();
      bactions.clear();
      blabels_x.clear();
      blabels_y.clear();
      blabels_t.clear();
    };

    detail::LocalBlock block;
    while (pipe.next(block)) {
      for (int p = 0; p < block.pairs; ++p) {
        const std::size_t fstride = static_cast<std::size_t>(kPairChannels) * rays;
        bframes.insert(bframes.end(), block.frames.begin() + static_cast<std::ptrdiff_t>(p * fstride),
                       block.frames.begin() + static_cast<std::ptrdiff_t>((p + 1) * fstride));
        bactions.insert(bactions.end(), block.actions.begin() + p * 3, block.actions.begin() + (p + 1) * 3);
        blabels_x.push_back(block.labels[static_cast<std::size_t>(p)]);
        blabels_y.push_back(block.labels[static_cast<std::size_t>(block.pairs + p)]);
        blabels_t.push_back(block.labels[static_cast<std::size_t>(2 * block.pairs + p)]);
        if (static_cast<int>(bactions.size() / 3) == cfg.batch_size) flush();
      }
    }
    flush();

    result.epochs_run = epoch + 1;
    result.final_train_loss = epoch_batches ? epoch_loss / static_cast<double>(epoch_batches) : 0.0;
    if (log.is_open()) log.log(result.datapoints_consumed, "train", "loss", result.final_train_loss);
    if (!test.empty()) {
      const auto [rmse, zero_rmse] = detail::local_pair_rmse(net, test);
      result.final_test_rmse = rmse;
      result.zero_predictor_rmse = zero_rmse;
      if (log.is_open()) {
        log.log(result.datapoints_consumed, "test", "pair_rmse", rmse);
        log.log(result.datapoints_consumed, "test", "pair_rmse_zero", zero_rmse);
      }
    }
    write_checkpoint(detail::epoch_path(cfg.out, epoch),
                     detail::build_checkpoint(cfg, params, &adam, epoch));
  }

  write_checkpoint(cfg.out, detail::build_checkpoint(cfg, params, &adam,
                                                     std::max(start_epoch, cfg.epochs) - 1));
  return result;
}

// ---------------------------------------------------------------------------
// global stage
// ---------------------------------------------------------------------------

struct GlobalTrainResult {
  int epochs_run = 0;
  std::int64_t trajectories_consumed = 0;
  double final_train_loss = 0.0;
  double test_rmse_local = -1.0;   // accumulated local estimate at meta steps
  double test_rmse_global = -1.0;  // optimizer output at cfg.iterations
};

namespace detail {

struct GlobalItem {
  int meta_count = 0;
  int trimmed = 0;
  std::vector<float> features;  // [D, trimmed]
  std::vector<float> deltas;    // [3, trimmed]
  std::vector<float> gt_meta;   // [3, meta_count]
};

inline GlobalItem make_global_item(const TrainConfig& cfg, const LocalPoseNet<float>& local,
                                   int worker, std::int64_t index) {
  NoGradGuard ng;
  const int window = cfg.window();
  for (std::uint64_t salt = 0;; ++salt) {
    const std::uint64_t seed = item_seed(cfg.world, worker, index) + salt;
    const Trajectory traj = make_trajectory(cfg.world, /*unseen=*/false, seed, cfg.traj_len);
    const int pairs = static_cast<int>(traj.gt_poses.size()) - 1;
    const int trimmed = (pairs / window) * window;
    if (trimmed < 2 * window) continue;  // route finished implausibly early
    auto inf = run_local_inference(local, traj);
    GlobalItem item;
    item.trimmed = trimmed;
    item.meta_count = trimmed / window;
    auto feats = trimmed == pairs ? inf.features : slice(inf.features, 1, 0, trimmed);
    auto deltas = trimmed == pairs ? inf.deltas : slice(inf.deltas, 1, 0, trimmed);
    item.features = feats.value();
    item.deltas = deltas.value();
    item.gt_meta.resize(static_cast<std::size_t>(3 * item.meta_count));
    for (int j = 0; j < item.meta_count; ++j) {
      const Pose2& p = traj.gt_poses[static_cast<std::size_t>((j + 1) * window)];
      item.gt_meta[static_cast<std::size_t>(j)] = static_cast<float>(p.x);
      item.gt_meta[static_cast<std::size_t>(item.meta_count + j)] = static_cast<float>(p.y);
      item.gt_meta[static_cast<std::size_t>(2 * item.meta_count + j)] = static_cast<float>(p.theta);
    }
    return item;
  }
}

// Mean positional RMSE at meta timestamps over a test set, for the local
// accumulation and for the optimizer at the given iteration count.
inline std::pair<double, double> meta_rmse(const LocalPoseNet<float>& local,
                                           const PoseAggregator<float>& agg,
                                           const NeuralGraphOptimizer<float>& graph_opt,
                                           const std::vector<Trajectory>& test, int iterations,
                                           int window) {
  SplitAggregates local_agg, global_agg;
  for (const auto& traj : test) {
    auto ev = evaluate_trajectory<float>(local, &agg, &graph_opt, traj, {iterations}, window);
    local_agg.accumulate(trajectory_metrics(ev.local_meta, ev.gt_meta));
    global_agg.accumulate(trajectory_metrics(ev.global_meta.at(iterations), ev.gt_meta));
  }
  local_agg.finalize();
  global_agg.finalize();
  return {local_agg.rmse_pos, global_agg.rmse_pos};
}

}  // namespace detail

inline GlobalTrainResult train_global(const TrainConfig& cfg) {
  if (cfg.out.empty()) throw ConfigError("train_global: 'out' checkpoint path is required");
  if (cfg.local_ckpt.empty()) throw ConfigError("train_global: 'local_ckpt' is required");

  // frozen local net
  const Checkpoint local_ckpt = read_checkpoint(cfg.local_ckpt);
  const std::string* lstage = local_ckpt.find_meta("stage");
  if (!lstage || *lstage != "local") throw IoError("local_ckpt is not a local-stage checkpoint");
  LocalPoseNet<float> local;
  {
    Rng tmp(0);
    const bool use_action = local_ckpt.find_meta("cfg.use_action")
                                ? *local_ckpt.find_meta("cfg.use_action") == "1"
                                : cfg.use_action;
    int fdim = cfg.feature_dim;
    if (const std::string* s = local_ckpt.find_meta("cfg.feature_dim")) fdim = std::stoi(*s);
    local.init({fdim, use_action}, tmp);
  }
  ParamSet<float> local_params;
  local.register_params(local_params);
  load_params(local_ckpt, local_params);
  local_params.set_requires_grad(false);

  Rng init_rng(derive_seed(cfg.world.seed, seed_stream::kInit ^ 0x676c6f62));
  PoseAggregator<float> agg;
  agg.init({local.cfg.feature_dim, cfg.feat_dim, cfg.halvings}, init_rng);
  NeuralGraphOptimizer<float> graph_opt;
  NgoConfig ncfg;
  ncfg.feat_dim = cfg.feat_dim;
  ncfg.hidden = cfg.hidden;
  ncfg.layers = cfg.layers;
  ncfg.softmax_attention = cfg.softmax_attention;
  graph_opt.init(ncfg, init_rng);

  ParamSet<float> params;
  agg.register_params(params);
  graph_opt.register_params(params);
  AdamState<float> adam(params, cfg.adam);

  int start_epoch = 0;
  if (!cfg.resume.empty()) {
    const Checkpoint ckpt = read_checkpoint(cfg.resume);
    const std::string* stage = ckpt.find_meta("stage");
    if (!stage || *stage != "global") throw IoError("resume checkpoint is not a global-stage checkpoint");
    load_params(ckpt, params);
    detail::restore_adam(ckpt, params, adam);
    start_epoch = static_cast<int>(std::stoll(*ckpt.find_meta("epoch"))) + 1;
  }

  MetricLog log;
  if (!cfg.metrics.empty()) log.open(cfg.metrics, /*append=*/!cfg.resume.empty());
  std::vector<Trajectory> test;
  if (!cfg.test_data.empty()) test = read_dataset(cfg.test_data);

  GlobalTrainResult result;
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    Pipeline<detail::GlobalItem> pipe(
        cfg.workers, cfg.datapoints_per_epoch, static_cast<std::size_t>(cfg.queue_capacity),
        [&cfg, &local](int w, std::int64_t i) { return detail::make_global_item(cfg, local, w, i); },
        /*first_index=*/static_cast<std::int64_t>(epoch) * cfg.datapoints_per_epoch);

    double epoch_loss = 0.0;
    std::int64_t epoch_steps = 0;
    std::vector<Tensor<float>> batch_losses;
    auto flush = [&] {
      if (batch_losses.empty()) return;
      Tensor<float> total = batch_losses[0];
      for (std::size_t i = 1; i < batch_losses.size(); ++i) total = add(total, batch_losses[i]);
      total = scale(total, 1.f / static_cast<float>(batch_losses.size()));
      zero_grad(params);
      backward(total);
      adam_step(params, adam);
      epoch_loss += total.item();
      ++epoch_steps;
      batch_losses.clear();
    };

    detail::GlobalItem item;
    while (pipe.next(item)) {
      auto feats = Tensor<float>::from_data({local.cfg.feature_dim, item.trimmed}, std::move(item.features));
      auto deltas = Tensor<float>::from_data({3, item.trimmed}, std::move(item.deltas));
      auto gt = Tensor<float>::from_data({3, item.meta_count}, std::move(item.gt_meta));
      auto meta = agg.forward(feats, deltas);
      auto out = graph_opt.forward(meta.meta_features, meta.meta_deltas, cfg.iterations);
      batch_losses.push_back(global_loss(out.iterate_poses, gt, cfg.lambda_rot, cfg.final_only_loss));
      ++result.trajectories_consumed;
      if (static_cast<int>(batch_losses.size()) == cfg.batch_size) flush();
    }
    flush();

    result.epochs_run = epoch + 1;
    result.final_train_loss = epoch_steps ? epoch_loss / static_cast<double>(epoch_steps) : 0.0;
    if (log.is_open()) log.log(result.trajectories_consumed, "train", "loss", result.final_train_loss);
    if (!test.empty()) {
      const auto [local_rmse, global_rmse] =
          detail::meta_rmse(local, agg, graph_opt, test, cfg.iterations, cfg.window());
      result.test_rmse_local = local_rmse;
      result.test_rmse_global = global_rmse;
      if (log.is_open()) {
        log.log(result.trajectories_consumed, "test", "rmse_local", local_rmse);
        log.log(result.trajectories_consumed, "test", "rmse_global_m" + std::to_string(cfg.iterations),
                global_rmse);
      }
    }
    write_checkpoint(detail::epoch_path(cfg.out, epoch),
                     detail::build_checkpoint(cfg, params, &adam, epoch));
  }

  write_checkpoint(cfg.out, detail::build_checkpoint(cfg, params, &adam,
                                                     std::max(start_epoch, cfg.epochs) - 1));
  return result;
}

}  // namespace ngo
