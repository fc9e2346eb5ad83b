#pragma once

// Finite-difference conformance suites run by the grad-check command and the
// acceptance tests. Float checks use inputs conditioned away from kinks so
// 32-bit loss rounding stays below the gate; double checks use fully random
// signed inputs.

#include <functional>
#include <string>
#include <vector>

#include "ngo/nets.hpp"
#include "ngo/optim.hpp"

namespace ngo {

struct OpCheckResult {
  std::string op;
  double max_rel_err = 0.0;
  double gate = 0.0;
  std::string worst_param;

  bool pass() const { return max_rel_err < gate; }
};

struct GradSuiteResult {
  std::vector<OpCheckResult> ops;
  bool all_pass() const {
    for (const auto& o : ops)
      if (!o.pass()) return false;
    return true;
  }
  const OpCheckResult& worst() const {
    std::size_t wi = 0;
    for (std::size_t i = 1; i < ops.size(); ++i)
      if (ops[i].max_rel_err / ops[i].gate > ops[wi].max_rel_err / ops[wi].gate) wi = i;
    return ops[wi];
  }
};

namespace detail {

template <class S>
Tensor<S> rand_t(Shape shape, Rng& rng, double lo, double hi, bool rg = false) {
  std::vector<S> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = static_cast<S>(rng.uniform(lo, hi));
  return Tensor<S>::from_data(std::move(shape), std::move(data), rg);
}

inline void run_case(GradSuiteResult& out, const std::string& name, double gate,
                     const std::function<GradCheckReport()>& body) {
  OpCheckResult r;
  r.op = name;
  r.gate = gate;
  const GradCheckReport rep = body();
  r.max_rel_err = rep.max_rel_err;
  r.worst_param = rep.worst_param;
  out.ops.push_back(std::move(r));
}

}  // namespace detail

// Per-op sweep: every differentiable op at the 32-bit gate (1e-3) plus the
// same ops on random signed doubles at 1e-6.
inline GradSuiteResult run_tensor_grad_suite(std::uint64_t seed, int trials = 40) {
  GradSuiteResult out;
  using detail::rand_t;

  {
    Rng rng(derive_seed(seed, 0xf1));
    const char* names[] = {"relu",  "sigmoid", "tanh",    "sin",        "cos",  "softmax",
                           "cumsum", "shift",   "wrap",    "add+mean",   "mul"};
    for (int op = 0; op < 11; ++op) {
      double worst = 0;
      std::string worst_param;
      for (int trial = 0; trial < trials; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_int(5));
        const int m = 2 + static_cast<int>(rng.uniform_int(5));
        ParamSet<float> params;
        auto x = params.add("x", rand_t<float>({n, m}, rng, 0.2, 1.2, true));
        auto v = params.add("v", rand_t<float>({n * m}, rng, 0.4, 1.2, true));
        auto v6 = params.add("v6", rand_t<float>({6}, rng, 0.4, 1.2, true));
        auto pm = rand_t<float>({n, m}, rng, 0.5, 1.5);
        auto pv = rand_t<float>({n * m}, rng, 0.5, 1.5);
        auto p6 = rand_t<float>({6}, rng, 0.5, 1.5);
        std::vector<float> alt(static_cast<std::size_t>(n * m));
        for (std::size_t i = 0; i < alt.size(); ++i)
          alt[i] = (i % 2 ? -1.f : 1.f) * static_cast<float>(rng.uniform(0.8, 1.2));
        auto palt = Tensor<float>::from_data({n * m}, alt);
        auto builder = [&]() -> Tensor<float> {
          switch (op) {
            case 0: return sum(mul(relu(x), pm));
            case 1: return sum(mul(sigmoid(x), pm));
            case 2: return sum(mul(tanh(x), pm));
            case 3: return dot(sin(v), pv);
            case 4: return dot(cos(v), pv);
            case 5: return dot(softmax(scale(v, 0.5f)), palt);
            case 6: return dot(cumsum(v6), p6);
            case 7: return dot(shift_right(v), pv);
            case 8: return sum(mul(wrap_angle(x), pm));
            case 9: return mean(mul(add(x, x), pm));
            default: return sum(mul(mul(x, x), pm));
          }
        };
        auto rep = grad_check<float>(builder, params, 1e-2);
        if (rep.max_rel_err > worst) {
          worst = rep.max_rel_err;
          worst_param = rep.worst_param;
        }
      }
      OpCheckResult r;
      r.op = std::string(names[op]) + " (f32)";
      r.gate = 1e-3;
      r.max_rel_err = worst;
      r.worst_param = worst_param;
      out.ops.push_back(std::move(r));
    }
  }

  // structural ops, conditioned float
  {
    Rng rng(derive_seed(seed, 0xf2));
    double worst_conv = 0, worst_lin = 0, worst_pool = 0;
    for (int trial = 0; trial < trials / 2; ++trial) {
      {
        ParamSet<float> params;
        const int cin = 2 + static_cast<int>(rng.uniform_int(3));
        const int t = 8 + 2 * static_cast<int>(rng.uniform_int(4));
        params.add("x", rand_t<float>({cin, t}, rng, 0.2, 1.2, true));
        params.add("w", rand_t<float>({3, cin, 3}, rng, 0.1, 0.6, true));
        params.add("b", rand_t<float>({3}, rng, 0.1, 0.5, true));
        auto probe = rand_t<float>({3, t}, rng, 0.5, 1.5);
        auto rep = grad_check<float>(
            [&] {
              return sum(mul(relu(conv1d(params.get("x"), params.get("w"), params.get("b"), 1, 1)), probe));
            },
            params, 1e-2);
        worst_conv = std::max(worst_conv, rep.max_rel_err);
      }
      {
        ParamSet<float> params;
        const int n = 2 + static_cast<int>(rng.uniform_int(3));
        params.add("x", rand_t<float>({n, 4}, rng, 0.2, 1.2, true));
        params.add("w", rand_t<float>({4, 3}, rng, 0.1, 0.6, true));
        params.add("b", rand_t<float>({3}, rng, 0.1, 0.5, true));
        auto probe = rand_t<float>({n, 3}, rng, 0.5, 1.5);
        auto rep = grad_check<float>(
            [&] { return sum(mul(linear(params.get("x"), params.get("w"), params.get("b")), probe)); },
            params, 1e-2);
        worst_lin = std::max(worst_lin, rep.max_rel_err);
      }
      {
        ParamSet<float> params;
        const int c = 2, t = 12;
        auto xv = rand_t<float>({c, t}, rng, 0.2, 1.2, true);
        for (int ci = 0; ci < c; ++ci)
          for (int to = 0; to < t / 2; ++to) {
            float& a = xv.value()[static_cast<std::size_t>(ci * t + 2 * to)];
            float& b = xv.value()[static_cast<std::size_t>(ci * t + 2 * to + 1)];
            if (std::abs(a - b) < 0.05f) a += 0.1f;
          }
        params.add("x", xv);
        auto probe = rand_t<float>({c, t / 2}, rng, 0.5, 1.5);
        auto rep = grad_check<float>([&] { return sum(mul(maxpool1d(params.get("x")), probe)); },
                                     params, 1e-2);
        worst_pool = std::max(worst_pool, rep.max_rel_err);
      }
    }
    out.ops.push_back({"conv1d+relu (f32)", worst_conv, 1e-3, ""});
    out.ops.push_back({"linear (f32)", worst_lin, 1e-3, ""});
    out.ops.push_back({"maxpool1d (f32)", worst_pool, 1e-3, ""});
  }

  // random-sign double sweep at the tight gate
  {
    Rng rng(derive_seed(seed, 0xf3));
    double worst = 0;
    std::string worst_param;
    for (int trial = 0; trial < trials; ++trial) {
      ParamSet<double> params;
      const int cin = 2 + static_cast<int>(rng.uniform_int(3));
      const int t = 8 + 2 * static_cast<int>(rng.uniform_int(5));
      const int stride = 1 + static_cast<int>(rng.uniform_int(2));
      const int padding = static_cast<int>(rng.uniform_int(3));
      params.add("x", rand_t<double>({cin, t}, rng, -1, 1, true));
      params.add("w", rand_t<double>({3, cin, 3}, rng, -1, 1, true));
      params.add("b", rand_t<double>({3}, rng, -1, 1, true));
      const int tout = (t + 2 * padding - 3) / stride + 1;
      auto probe = rand_t<double>({3, tout}, rng, -1, 1);
      auto rep = grad_check<double>(
          [&] {
            auto h = tanh(conv1d(params.get("x"), params.get("w"), params.get("b"), stride, padding));
            return sum(mul(h, probe));
          },
          params, 1e-5);
      if (rep.max_rel_err > worst) {
        worst = rep.max_rel_err;
        worst_param = rep.worst_param;
      }
    }
    out.ops.push_back({"conv1d+tanh (f64)", worst, 1e-6, worst_param});
  }
  return out;
}

// End-to-end checks through the three networks in the 64-bit test mode.
inline GradSuiteResult run_nets_grad_suite(std::uint64_t seed) {
  GradSuiteResult out;
  using detail::rand_t;

  {
    Rng rng(derive_seed(seed, 0xa1));
    LocalPoseNet<double> net;
    net.init({}, rng);
    for (auto& v : net.head_trans.w.value()) v = rng.uniform(-0.05, 0.05);
    for (auto& v : net.head_rot.w.value()) v = rng.uniform(-0.05, 0.05);
    ParamSet<double> params;
    net.register_params(params);
    std::vector<double> data(static_cast<std::size_t>(kPairChannels * Observation::kRays));
    for (auto& v : data) v = rng.uniform(0.0, 1.0);
    auto frames = Tensor<double>::from_data({1, kPairChannels, Observation::kRays}, std::move(data));
    auto actions = Tensor<double>::from_data({1, 3}, {0, 1, 0});
    auto probe = rand_t<double>({3, 1}, rng, -1, 1);
    detail::run_case(out, "local net end-to-end", 5e-3, [&] {
      return grad_check<double>(
          [&] { return sum(mul(net.forward(frames, actions).deltas, probe)); }, params, 1e-5, 25);
    });
  }

  {
    Rng rng(derive_seed(seed, 0xa2));
    PoseAggregator<double> agg;
    agg.init({10, 6, 2}, rng);
    ParamSet<double> params;
    agg.register_params(params);
    auto feats = rand_t<double>({10, 16}, rng, -1, 1);
    auto deltas = rand_t<double>({3, 16}, rng, -0.4, 0.4);
    auto fp = rand_t<double>({6, 4}, rng, -1, 1);
    auto dp = rand_t<double>({3, 4}, rng, -1, 1);
    detail::run_case(out, "aggregator end-to-end", 5e-3, [&] {
      return grad_check<double>(
          [&] {
            auto o = agg.forward(feats, deltas);
            return add(sum(mul(o.meta_features, fp)), sum(mul(o.meta_deltas, dp)));
          },
          params, 1e-5);
    });
  }

  {
    Rng rng(derive_seed(seed, 0xa3));
    NeuralGraphOptimizer<double> net;
    NgoConfig cfg;
    cfg.feat_dim = 6;
    cfg.hidden = 8;
    net.init(cfg, rng);
    for (auto& v : net.stack.back().w.value()) v = rng.uniform(-0.2, 0.2);
    ParamSet<double> params;
    net.register_params(params);
    auto feats = rand_t<double>({6, 8}, rng, -1, 1);
    auto deltas = rand_t<double>({3, 8}, rng, -0.4, 0.4);
    auto probe = rand_t<double>({3, 8}, rng, -1, 1);
    detail::run_case(out, "graph optimizer M=2 end-to-end", 5e-3, [&] {
      return grad_check<double>(
          [&] {
            auto o = net.forward(feats, deltas, 2);
            auto loss = sum(mul(o.iterate_poses[0], probe));
            return add(loss, sum(mul(o.iterate_poses[1], probe)));
          },
          params, 1e-5);
    });
  }
  return out;
}

}  // namespace ngo
