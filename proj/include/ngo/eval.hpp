#pragma once

// Inference-side evaluation: run the frozen nets over stored trajectories and
// produce meta-timestep pose estimates for the local-only and globally
// optimized variants, plus aggregate drift metrics.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ngo/geometry.hpp"
#include "ngo/mazeworld.hpp"
#include "ngo/nets.hpp"
#include "ngo/tensor.hpp"

namespace ngo {

template <class S>
std::vector<Pose2> poses_from_tensor(const Tensor<S>& t) {
  if (t.rank() != 2 || t.dim(0) != 3) throw ShapeError("poses_from_tensor: expected [3,T]");
  const int n = t.dim(1);
  std::vector<Pose2> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    out.emplace_back(static_cast<double>(t.value()[static_cast<std::size_t>(i)]),
                     static_cast<double>(t.value()[static_cast<std::size_t>(n + i)]),
                     static_cast<double>(t.value()[static_cast<std::size_t>(2 * n + i)]));
  return out;
}

template <class S>
struct LocalInference {
  Tensor<S> features;  // [D, P] over the P = T-1 frame pairs
  Tensor<S> deltas;    // [3, P]
};

// Frozen-weights inference over every consecutive frame pair of a trajectory.
template <class S>
LocalInference<S> run_local_inference(const LocalPoseNet<S>& net, const Trajectory& traj,
                                      int chunk = 128) {
  const int pairs = static_cast<int>(traj.gt_poses.size()) - 1;
  if (pairs < 1) throw std::invalid_argument("trajectory has no frame pairs");
  NoGradGuard ng;
  std::vector<Tensor<S>> feat_chunks, delta_chunks;
  for (int begin = 0; begin < pairs; begin += chunk) {
    const int n = std::min(chunk, pairs - begin);
    std::vector<S> frames(static_cast<std::size_t>(n) * kPairChannels * Observation::kRays);
    std::vector<S> actions(static_cast<std::size_t>(n) * 3, S(0));
    for (int i = 0; i < n; ++i) {
      write_pair_channels(traj.observations[static_cast<std::size_t>(begin + i)],
                          traj.observations[static_cast<std::size_t>(begin + i + 1)],
                          frames.data() + static_cast<std::size_t>(i) * kPairChannels * Observation::kRays);
      actions[static_cast<std::size_t>(i * 3 + static_cast<int>(traj.actions[static_cast<std::size_t>(begin + i)]))] = S(1);
    }
    auto out = net.forward(
        Tensor<S>::from_data({n, kPairChannels, Observation::kRays}, std::move(frames)),
        net.cfg.use_action ? Tensor<S>::from_data({n, 3}, std::move(actions)) : Tensor<S>{});
    feat_chunks.push_back(out.features);
    delta_chunks.push_back(out.deltas);
  }
  LocalInference<S> inf;
  inf.features = feat_chunks.size() == 1 ? feat_chunks[0] : concat<S>(feat_chunks, 1);
  inf.deltas = delta_chunks.size() == 1 ? delta_chunks[0] : concat<S>(delta_chunks, 1);
  return inf;
}

template <class S>
struct TrajEval {
  std::vector<int> meta_steps;              // indices into gt_poses (window ends)
  std::vector<Pose2> gt_meta;
  std::vector<Pose2> local_meta;            // accumulated local estimate
  std::map<int, std::vector<Pose2>> global_meta;  // keyed by iteration count
  std::vector<AttentionTrace<S>> traces;    // from the largest iteration count
};

// Evaluates one stored trajectory at meta timestamps. Pass a null optimizer
// to get the local-only estimate; iteration_counts selects the global
// variants (e.g. {1, 5}).
template <class S>
TrajEval<S> evaluate_trajectory(const LocalPoseNet<S>& local, const PoseAggregator<S>* agg,
                                const NeuralGraphOptimizer<S>* graph_opt, const Trajectory& traj,
                                const std::vector<int>& iteration_counts, int window) {
  NoGradGuard ng;
  auto inf = run_local_inference(local, traj);
  const int pairs = inf.deltas.dim(1);
  const int trimmed = (pairs / window) * window;
  if (trimmed < 2 * window)
    throw std::invalid_argument("trajectory too short for evaluation at this window");
  auto deltas = trimmed == pairs ? inf.deltas : slice(inf.deltas, 1, 0, trimmed);

  TrajEval<S> ev;
  const int meta_count = trimmed / window;
  for (int j = 1; j <= meta_count; ++j) {
    ev.meta_steps.push_back(j * window);
    ev.gt_meta.push_back(traj.gt_poses[static_cast<std::size_t>(j * window)]);
  }
  auto meta_deltas = PoseAggregator<S>::compose_windows(deltas, window);
  ev.local_meta = poses_from_tensor(r2g_tensor(meta_deltas));

  if (agg && graph_opt) {
    auto feats = trimmed == pairs ? inf.features : slice(inf.features, 1, 0, trimmed);
    auto meta = agg->forward(feats, deltas);
    int max_m = 0;
    for (int m : iteration_counts) max_m = std::max(max_m, m);
    for (int m : iteration_counts) {
      auto out = graph_opt->forward(meta.meta_features, meta.meta_deltas, m);
      ev.global_meta[m] = poses_from_tensor(out.global_poses);
      if (m == max_m) ev.traces = std::move(out.traces);
    }
  }
  return ev;
}

struct SplitAggregates {
  double rmse_pos = 0.0;
  double rmse_rot = 0.0;
  double pct_trans = 0.0;
  double pct_rot = 0.0;
  int count = 0;

  void accumulate(const TrajectoryMetrics& m) {
    rmse_pos += m.rmse_pos;
    rmse_rot += m.rmse_rot;
    pct_trans += m.pct_err_trans;
    pct_rot += m.pct_err_rot;
    ++count;
  }
  void finalize() {
    if (count == 0) return;
    rmse_pos /= count;
    rmse_rot /= count;
    pct_trans /= count;
    pct_rot /= count;
  }
};

}  // namespace ngo
