#pragma once

// The three learned components: frame-pair odometry (LocalPoseNet), temporal
// downsampling with pose window composition (PoseAggregator), and the
// iterative attention + convolution trajectory optimizer
// (NeuralGraphOptimizer).

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ngo/geometry.hpp"
#include "ngo/mazeworld.hpp"
#include "ngo/optim.hpp"
#include "ngo/tensor.hpp"

namespace ngo {

// ---------------------------------------------------------------------------
// layer building blocks
// ---------------------------------------------------------------------------

template <class S>
struct Conv1dLayer {
  Tensor<S> w;  // [Cout, Cin, K]
  Tensor<S> b;  // [Cout]
  int stride = 1;
  int padding = 0;

  void init(int cout, int cin, int k, int stride_, int padding_, Rng& rng) {
    stride = stride_;
    padding = padding_;
    const double std = std::sqrt(2.0 / (cin * k));
    w = init_normal<S>({cout, cin, k}, std, rng);
    b = Tensor<S>::zeros({cout}, true);
  }

  void register_params(ParamSet<S>& ps, const std::string& prefix) {
    ps.add(prefix + "/w", w);
    ps.add(prefix + "/b", b);
  }

  Tensor<S> forward(const Tensor<S>& x) const { return conv1d(x, w, b, stride, padding); }
};

template <class S>
struct LinearLayer {
  Tensor<S> w;  // [Din, Dout]
  Tensor<S> b;  // [Dout]

  void init(int din, int dout, Rng& rng, bool zero = false) {
    if (zero) {
      w = Tensor<S>::zeros({din, dout}, true);
    } else {
      w = init_normal<S>({din, dout}, std::sqrt(2.0 / din), rng);
    }
    b = Tensor<S>::zeros({dout}, true);
  }

  void register_params(ParamSet<S>& ps, const std::string& prefix) {
    ps.add(prefix + "/w", w);
    ps.add(prefix + "/b", b);
  }

  Tensor<S> forward(const Tensor<S>& x) const { return linear(x, w, b); }
};

// ---------------------------------------------------------------------------
// observation assembly
// ---------------------------------------------------------------------------

constexpr int kObsChannels = 4;   // r, g, b, depth
constexpr int kPairChannels = 2 * kObsChannels;

// Stacks two consecutive ray scans channels-first into one [8, rays] block.
template <class S>
void write_pair_channels(const Observation& a, const Observation& b, S* dst) {
  const int t = Observation::kRays;
  for (int i = 0; i < t; ++i) {
    dst[0 * t + i] = static_cast<S>(a.rays[static_cast<std::size_t>(i)].r);
    dst[1 * t + i] = static_cast<S>(a.rays[static_cast<std::size_t>(i)].g);
    dst[2 * t + i] = static_cast<S>(a.rays[static_cast<std::size_t>(i)].b);
    dst[3 * t + i] = static_cast<S>(a.rays[static_cast<std::size_t>(i)].depth);
    dst[4 * t + i] = static_cast<S>(b.rays[static_cast<std::size_t>(i)].r);
    dst[5 * t + i] = static_cast<S>(b.rays[static_cast<std::size_t>(i)].g);
    dst[6 * t + i] = static_cast<S>(b.rays[static_cast<std::size_t>(i)].b);
    dst[7 * t + i] = static_cast<S>(b.rays[static_cast<std::size_t>(i)].depth);
  }
}

// ---------------------------------------------------------------------------
// local pose estimation
// ---------------------------------------------------------------------------

struct LocalNetConfig {
  int feature_dim = 256;
  bool use_action = true;  // one-hot action appended before the output heads
};

// Frame-pair odometry: stacked scans through a strided 1D conv stack
// (8->32->64->96->128, k 7/5/5/3), flatten, shared FC feature, then separate
// translation and rotation heads. Heads are zero-initialized so the untrained
// net predicts exactly zero motion.
template <class S>
struct LocalPoseNet {
  LocalNetConfig cfg;
  Conv1dLayer<S> conv1, conv2, conv3, conv4;
  LinearLayer<S> fc;
  LinearLayer<S> head_trans, head_rot;
  int flat_dim = 0;

  void init(const LocalNetConfig& c, Rng& rng) {
    cfg = c;
    conv1.init(32, kPairChannels, 7, 2, 3, rng);
    conv2.init(64, 32, 5, 2, 2, rng);
    conv3.init(96, 64, 5, 2, 2, rng);
    conv4.init(128, 96, 3, 2, 1, rng);
    int t = Observation::kRays;
    for (int k : {7, 5, 5, 3}) t = (t + 2 * (k / 2) - k) / 2 + 1;
    flat_dim = 128 * t;
    fc.init(flat_dim, cfg.feature_dim, rng);
    const int head_in = cfg.feature_dim + (cfg.use_action ? 3 : 0);
    head_trans.init(head_in, 2, rng, /*zero=*/true);
    head_rot.init(head_in, 1, rng, /*zero=*/true);
  }

  void register_params(ParamSet<S>& ps, const std::string& prefix = "local") {
    conv1.register_params(ps, prefix + "/conv1");
    conv2.register_params(ps, prefix + "/conv2");
    conv3.register_params(ps, prefix + "/conv3");
    conv4.register_params(ps, prefix + "/conv4");
    fc.register_params(ps, prefix + "/fc");
    head_trans.register_params(ps, prefix + "/head_trans");
    head_rot.register_params(ps, prefix + "/head_rot");
  }

  struct Out {
    Tensor<S> deltas;    // [3, N]: rows dx, dy, dtheta
    Tensor<S> features;  // [D, N]
  };

  // frames: [N, 8, rays]; actions: [N, 3] one-hot (required when use_action)
  Out forward(const Tensor<S>& frames, const Tensor<S>& actions = {}) const {
    if (frames.rank() != 3 || frames.dim(1) != kPairChannels || frames.dim(2) != Observation::kRays)
      throw ShapeError("local net expects [N,8," + std::to_string(Observation::kRays) +
                       "] frames, got " + shape_str(frames.shape()));
    const int n = frames.dim(0);
    auto h = relu(conv1.forward(frames));
    h = relu(conv2.forward(h));
    h = relu(conv3.forward(h));
    h = relu(conv4.forward(h));
    auto feat = relu(fc.forward(reshape(h, {n, flat_dim})));  // [N, D]
    Tensor<S> head_in = feat;
    if (cfg.use_action) {
      if (!actions.defined() || actions.rank() != 2 || actions.dim(0) != n || actions.dim(1) != 3)
        throw ShapeError("local net with actions enabled needs [N,3] one-hot actions");
      head_in = concat<S>({feat, actions}, 1);  // [N, D+3]
    }
    auto trans = head_trans.forward(head_in);            // [N, 2]
    auto rot = wrap_angle(head_rot.forward(head_in));    // [N, 1]
    Out out;
    out.deltas = transpose(concat<S>({trans, rot}, 1));  // [3, N]
    out.features = transpose(feat);                      // [D, N]
    return out;
  }

  // single frame pair convenience wrapper
  Out forward_pair(const Observation& a, const Observation& b, int action = -1) const {
    std::vector<S> data(static_cast<std::size_t>(kPairChannels * Observation::kRays));
    write_pair_channels(a, b, data.data());
    auto frames = Tensor<S>::from_data({1, kPairChannels, Observation::kRays}, std::move(data));
    Tensor<S> actions;
    if (cfg.use_action) {
      if (action < 0 || action > 2) throw std::invalid_argument("forward_pair: action code required");
      std::vector<S> onehot(3, S(0));
      onehot[static_cast<std::size_t>(action)] = S(1);
      actions = Tensor<S>::from_data({1, 3}, std::move(onehot));
    }
    return forward(frames, actions);
  }
};

// ---------------------------------------------------------------------------
// pose aggregation
// ---------------------------------------------------------------------------

struct AggregatorConfig {
  int in_dim = 256;    // local feature dim D
  int feat_dim = 128;  // bottlenecked channel count D_f
  int halvings = 2;    // H; window = 2^H
};

// Temporal downsampling: a 1x1 bottleneck then H blocks of
// (conv k3 s1 p1 -> ReLU -> maxpool k2 s2). Local deltas compose within each
// window of 2^H steps through the differentiable SE(2) chain.
template <class S>
struct PoseAggregator {
  AggregatorConfig cfg;
  Conv1dLayer<S> bottleneck;
  std::vector<Conv1dLayer<S>> blocks;

  void init(const AggregatorConfig& c, Rng& rng) {
    cfg = c;
    bottleneck.init(cfg.feat_dim, cfg.in_dim, 1, 1, 0, rng);
    blocks.resize(static_cast<std::size_t>(cfg.halvings));
    for (auto& blk : blocks) blk.init(cfg.feat_dim, cfg.feat_dim, 3, 1, 1, rng);
  }

  void register_params(ParamSet<S>& ps, const std::string& prefix = "agg") {
    bottleneck.register_params(ps, prefix + "/bottleneck");
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].register_params(ps, prefix + "/block" + std::to_string(i));
  }

  int window() const { return 1 << cfg.halvings; }

  struct Out {
    Tensor<S> meta_features;  // [D_f, T]
    Tensor<S> meta_deltas;    // [3, T]
  };

  Out forward(const Tensor<S>& features, const Tensor<S>& deltas) const {
    if (features.rank() != 2 || features.dim(0) != cfg.in_dim)
      throw ShapeError("aggregate: features must be [" + std::to_string(cfg.in_dim) + ",T], got " +
                       shape_str(features.shape()));
    if (deltas.rank() != 2 || deltas.dim(0) != 3 || deltas.dim(1) != features.dim(1))
      throw ShapeError("aggregate: deltas must be [3,T] aligned with features");
    const int t0 = features.dim(1);
    const int w = window();
    if (t0 % w != 0)
      throw ShapeError("aggregate: length " + std::to_string(t0) + " not divisible by window " +
                       std::to_string(w) + "; trim the tail first");

    auto h = relu(bottleneck.forward(features));
    for (const auto& blk : blocks) h = maxpool1d(relu(blk.forward(h)));

    Out out;
    out.meta_features = h;
    out.meta_deltas = compose_windows(deltas, w);
    return out;
  }

  // Folds each window of `w` consecutive relative poses into one; headings
  // add, translations rotate into the window start frame.
  static Tensor<S> compose_windows(const Tensor<S>& deltas, int w) {
    const int t0 = deltas.dim(1);
    const int t = t0 / w;
    auto dx = reshape(slice(deltas, 0, 0, 1), {t0});
    auto dy = reshape(slice(deltas, 0, 1, 2), {t0});
    auto dth = reshape(slice(deltas, 0, 2, 3), {t0});
    auto mdx = Tensor<S>::zeros({t});
    auto mdy = Tensor<S>::zeros({t});
    auto phi = Tensor<S>::zeros({t});
    for (int i = 0; i < w; ++i) {
      auto dxi = downsample(dx, i, w);
      auto dyi = downsample(dy, i, w);
      auto dthi = downsample(dth, i, w);
      auto c = cos(phi);
      auto s = sin(phi);
      mdx = add(mdx, sub(mul(dxi, c), mul(dyi, s)));
      mdy = add(mdy, add(mul(dxi, s), mul(dyi, c)));
      phi = add(phi, dthi);
    }
    return concat<S>({reshape(mdx, {1, t}), reshape(mdy, {1, t}), reshape(wrap_angle(phi), {1, t})}, 0);
  }
};

// ---------------------------------------------------------------------------
// neural graph optimizer
// ---------------------------------------------------------------------------

struct NgoConfig {
  int feat_dim = 128;  // D_f; the query projection maps D_f -> D_f
  int hidden = 128;    // width of the optimization conv stack
  int layers = 9;      // conv stack depth, filter size 3
  bool softmax_attention = true;  // false: linear normalization with uniform fallback
};

// Per-iteration attention matrices kept for diagnostics (row-major T x T).
template <class S>
struct AttentionTrace {
  int t = 0;
  std::vector<S> scores;  // C
  std::vector<S> alpha;
};

// Iterative trajectory optimizer. Each iteration attends over the whole
// sequence, concatenates [f; a; delta] and runs the conv stack, whose output
// splits into next features, a pose adjustment field, and a step-size gate:
// delta' = delta + beta * grad_p. Weights are shared across iterations.
template <class S>
struct NeuralGraphOptimizer {
  NgoConfig cfg;
  Conv1dLayer<S> query;  // 1x1 conv == per-step fully-connected projection
  std::vector<Conv1dLayer<S>> stack;

  void init(const NgoConfig& c, Rng& rng) {
    cfg = c;
    query.init(cfg.feat_dim, cfg.feat_dim, 1, 1, 0, rng);
    stack.resize(static_cast<std::size_t>(cfg.layers));
    const int in_ch = 2 * cfg.feat_dim + 3;
    const int out_ch = cfg.feat_dim + 4;
    for (int l = 0; l < cfg.layers; ++l) {
      const int ci = l == 0 ? in_ch : cfg.hidden;
      const int co = l == cfg.layers - 1 ? out_ch : cfg.hidden;
      stack[static_cast<std::size_t>(l)].init(co, ci, 3, 1, 1, rng);
    }
    // the update heads start silent: gradient field and gate rows of the last
    // layer are zeroed so iteration 0 reproduces the aggregated estimate
    auto& last = stack.back();
    const int ci = cfg.layers == 1 ? in_ch : cfg.hidden;
    for (int row = cfg.feat_dim; row < out_ch; ++row)
      for (int i = 0; i < ci * 3; ++i)
        last.w.value()[static_cast<std::size_t>(row * ci * 3 + i)] = S(0);
  }

  void register_params(ParamSet<S>& ps, const std::string& prefix = "ngo") {
    query.register_params(ps, prefix + "/query");
    for (std::size_t i = 0; i < stack.size(); ++i)
      stack[i].register_params(ps, prefix + "/opt" + std::to_string(i));
  }

  // Soft attention over the trajectory: scores C_tu = <q_t, f_u>, rows
  // normalized (scaled softmax by default), attended vectors a_t = sum_u
  // alpha_tu f_u.
  std::pair<Tensor<S>, AttentionTrace<S>> attention(const Tensor<S>& feats) const {
    if (feats.rank() != 2 || feats.dim(0) != cfg.feat_dim)
      throw ShapeError("attention: features must be [" + std::to_string(cfg.feat_dim) + ",T]");
    auto q = query.forward(feats);                      // [D_f, T]
    auto scores = matmul(transpose(q), feats);          // [T, T]
    Tensor<S> alpha;
    if (cfg.softmax_attention) {
      alpha = softmax_rows(scale(scores, static_cast<S>(1.0 / std::sqrt(static_cast<double>(cfg.feat_dim)))));
    } else {
      alpha = row_normalize_linear(scores);
    }
    auto attended = matmul(feats, transpose(alpha));    // [D_f, T]
    AttentionTrace<S> trace;
    trace.t = feats.dim(1);
    trace.scores = scores.value();
    trace.alpha = alpha.value();
    return {attended, std::move(trace)};
  }

  struct Iterate {
    Tensor<S> features;  // [D_f, T]
    Tensor<S> deltas;    // [3, T]
    Tensor<S> grad_p;    // [3, T]
    Tensor<S> beta;      // [1, T]
    AttentionTrace<S> trace;
  };

  Iterate iterate(const Tensor<S>& feats, const Tensor<S>& deltas) const {
    auto [attended, trace] = attention(feats);
    auto h = concat<S>({feats, attended, deltas}, 0);  // [2*D_f+3, T]
    for (std::size_t l = 0; l < stack.size(); ++l) {
      h = stack[l].forward(h);
      if (l + 1 < stack.size()) h = relu(h);
    }
    Iterate it;
    it.features = slice(h, 0, 0, cfg.feat_dim);
    it.grad_p = slice(h, 0, cfg.feat_dim, cfg.feat_dim + 3);
    it.beta = sigmoid(slice(h, 0, cfg.feat_dim + 3, cfg.feat_dim + 4));
    auto beta3 = concat<S>({it.beta, it.beta, it.beta}, 0);
    auto updated = add(deltas, mul(it.grad_p, beta3));
    auto dxy = slice(updated, 0, 0, 2);
    auto dth = wrap_angle(slice(updated, 0, 2, 3));
    it.deltas = concat<S>({dxy, dth}, 0);
    it.trace = std::move(trace);
    return it;
  }

  struct Forward {
    Tensor<S> global_poses;                  // [3, T] from the final iterate
    std::vector<Tensor<S>> iterate_poses;    // r2g of every iterate, for deep supervision
    std::vector<Tensor<S>> iterate_deltas;
    std::vector<AttentionTrace<S>> traces;
  };

  Forward forward(const Tensor<S>& meta_features, const Tensor<S>& meta_deltas, int iterations) const {
    if (iterations < 1) throw std::invalid_argument("ngo_forward: need at least one iteration");
    Forward out;
    Tensor<S> feats = meta_features;
    Tensor<S> deltas = meta_deltas;
    for (int m = 0; m < iterations; ++m) {
      auto it = iterate(feats, deltas);
      feats = it.features;
      deltas = it.deltas;
      out.iterate_deltas.push_back(deltas);
      out.iterate_poses.push_back(r2g_tensor(deltas));
      out.traces.push_back(std::move(it.trace));
    }
    out.global_poses = out.iterate_poses.back();
    return out;
  }

  // Test/diagnostic hook: silences the update path entirely so forward()
  // degenerates to r2g of its input for any iteration count.
  void zero_update_heads() {
    auto& last = stack.back();
    const int ci = last.w.dim(1);
    const int out_ch = cfg.feat_dim + 4;
    for (int row = cfg.feat_dim; row < out_ch; ++row) {
      for (int i = 0; i < ci * 3; ++i) last.w.value()[static_cast<std::size_t>(row * ci * 3 + i)] = S(0);
      last.b.value()[static_cast<std::size_t>(row)] = S(0);
    }
  }
};

}  // namespace ngo
