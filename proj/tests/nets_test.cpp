#include "ngo/nets.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "ngo/geometry.hpp"
#include "test_util.hpp"

using ngo::AggregatorConfig;
using ngo::kPi;
using ngo::LocalNetConfig;
using ngo::NgoConfig;
using ngo::Observation;
using ngo::Shape;
using ngo::Tensor;
using testutil::random_tensor;

namespace {

Observation constant_obs(float v) {
  Observation o;
  for (auto& r : o.rays) r = {v, v * 0.5f, v * 0.25f, 0.5f};
  return o;
}

TEST(LocalNet, ZeroInitHeadsPredictZeroMotion) {
  ngo::Rng rng(1);
  ngo::LocalPoseNet<float> net;
  net.init({}, rng);
  const auto out = net.forward_pair(constant_obs(0.3f), constant_obs(0.7f), 0);
  ASSERT_EQ(out.deltas.shape(), (Shape{3, 1}));
  EXPECT_FLOAT_EQ(out.deltas.value()[0], 0.f);
  EXPECT_FLOAT_EQ(out.deltas.value()[1], 0.f);
  EXPECT_FLOAT_EQ(out.deltas.value()[2], 0.f);
  ASSERT_EQ(out.features.shape(), (Shape{256, 1}));
}

TEST(LocalNet, MalformedInputRejected) {
  ngo::Rng rng(2);
  ngo::LocalPoseNet<float> net;
  net.init({}, rng);
  EXPECT_THROW(net.forward(Tensor<float>::zeros({1, 8, 100})), ngo::ShapeError);
  EXPECT_THROW(net.forward(Tensor<float>::zeros({1, 4, 241})), ngo::ShapeError);
  // use_action on but no action tensor
  EXPECT_THROW(net.forward(Tensor<float>::zeros({1, 8, 241})), ngo::ShapeError);
}

TEST(LocalNet, BatchMatchesSinglePair) {
  ngo::Rng rng(3);
  ngo::LocalPoseNet<float> net;
  net.init({}, rng);
  // give the heads some weights so outputs are nonzero
  for (auto& v : net.head_trans.w.value()) v = static_cast<float>(rng.uniform(-0.01, 0.01));
  for (auto& v : net.head_rot.w.value()) v = static_cast<float>(rng.uniform(-0.01, 0.01));

  const auto a = constant_obs(0.2f);
  const auto b = constant_obs(0.9f);
  const auto c = constant_obs(0.5f);
  std::vector<float> data(static_cast<std::size_t>(2 * 8 * Observation::kRays));
  ngo::write_pair_channels(a, b, data.data());
  ngo::write_pair_channels(b, c, data.data() + 8 * Observation::kRays);
  auto frames = Tensor<float>::from_data({2, 8, Observation::kRays}, std::move(data));
  auto actions = Tensor<float>::from_data({2, 3}, {1, 0, 0, 0, 1, 0});
  const auto batch = net.forward(frames, actions);
  const auto s0 = net.forward_pair(a, b, 0);
  const auto s1 = net.forward_pair(b, c, 1);
  for (int r = 0; r < 3; ++r) {
    EXPECT_NEAR(batch.deltas.value()[static_cast<std::size_t>(r * 2 + 0)], s0.deltas.value()[static_cast<std::size_t>(r)], 1e-6);
    EXPECT_NEAR(batch.deltas.value()[static_cast<std::size_t>(r * 2 + 1)], s1.deltas.value()[static_cast<std::size_t>(r)], 1e-6);
  }
}

TEST(LocalNet, GradCheckThroughConvStack) {
  ngo::Rng rng(4);
  ngo::LocalPoseNet<double> net;
  net.init({}, rng);
  // nonzero heads so the loss sees every path
  for (auto& v : net.head_trans.w.value()) v = rng.uniform(-0.05, 0.05);
  for (auto& v : net.head_rot.w.value()) v = rng.uniform(-0.05, 0.05);
  ngo::ParamSet<double> params;
  net.register_params(params);

  std::vector<double> data(static_cast<std::size_t>(8 * Observation::kRays));
  for (auto& v : data) v = rng.uniform(0.0, 1.0);
  auto frames = Tensor<double>::from_data({1, 8, Observation::kRays}, std::move(data));
  auto actions = Tensor<double>::from_data({1, 3}, {0, 1, 0});
  auto probe = random_tensor<double>({3, 1}, rng);
  auto rep = ngo::grad_check<double>(
      [&] { return ngo::sum(ngo::mul(net.forward(frames, actions).deltas, probe)); }, params, 1e-5,
      /*max_elems_per_param=*/40);
  EXPECT_LT(rep.max_rel_err, 5e-3) << rep.worst_param;
}

TEST(Aggregator, IdentityWhenNoHalvings) {
  ngo::Rng rng(5);
  ngo::PoseAggregator<float> agg;
  AggregatorConfig cfg;
  cfg.halvings = 0;
  agg.init(cfg, rng);
  auto feats = random_tensor<float>({256, 6}, rng);
  auto deltas = random_tensor<float>({3, 6}, rng, -0.5, 0.5);
  const auto out = agg.forward(feats, deltas);
  ASSERT_EQ(out.meta_deltas.shape(), deltas.shape());
  for (std::size_t i = 0; i < deltas.value().size(); ++i)
    EXPECT_NEAR(out.meta_deltas.value()[i], deltas.value()[i], 1e-7);
  EXPECT_EQ(out.meta_features.shape(), (Shape{128, 6}));
}

TEST(Aggregator, ZeroDeltasStayZero) {
  ngo::Rng rng(6);
  ngo::PoseAggregator<float> agg;
  agg.init({}, rng);
  auto feats = random_tensor<float>({256, 8}, rng);
  const auto out = agg.forward(feats, Tensor<float>::zeros({3, 8}));
  for (float v : out.meta_deltas.value()) EXPECT_FLOAT_EQ(v, 0.f);
}

TEST(Aggregator, StraightWindowComposes) {
  ngo::Rng rng(7);
  ngo::PoseAggregator<float> agg;
  agg.init({}, rng);  // H=2, window 4
  std::vector<float> d(3 * 8, 0.f);
  for (int i = 0; i < 8; ++i) d[static_cast<std::size_t>(i)] = 1.f;  // dx row
  const auto out = agg.forward(random_tensor<float>({256, 8}, rng), Tensor<float>::from_data({3, 8}, d));
  ASSERT_EQ(out.meta_deltas.shape(), (Shape{3, 2}));
  EXPECT_NEAR(out.meta_deltas.value()[0], 4.f, 1e-6);
  EXPECT_NEAR(out.meta_deltas.value()[1], 4.f, 1e-6);
  EXPECT_NEAR(out.meta_deltas.value()[2], 0.f, 1e-6);  // dy
  EXPECT_NEAR(out.meta_deltas.value()[4], 0.f, 1e-6);  // dtheta
}

// Window composition must agree with folding ngo::compose over each window.
TEST(Aggregator, WindowComposeMatchesGeometryOracle) {
  ngo::Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int t0 = 16;
    std::vector<double> flat(static_cast<std::size_t>(3 * t0));
    std::vector<ngo::RelPose2> deltas;
    for (int i = 0; i < t0; ++i) {
      deltas.emplace_back(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.4, 0.4));
      flat[static_cast<std::size_t>(i)] = deltas.back().dx;
      flat[static_cast<std::size_t>(t0 + i)] = deltas.back().dy;
      flat[static_cast<std::size_t>(2 * t0 + i)] = deltas.back().dtheta;
    }
    const int w = 4;
    auto got = ngo::PoseAggregator<double>::compose_windows(Tensor<double>::from_data({3, t0}, flat), w);
    for (int j = 0; j < t0 / w; ++j) {
      ngo::Pose2 p;
      for (int i = 0; i < w; ++i) p = ngo::compose(p, deltas[static_cast<std::size_t>(j * w + i)]);
      EXPECT_NEAR(got.value()[static_cast<std::size_t>(j)], p.x, 1e-9);
      EXPECT_NEAR(got.value()[static_cast<std::size_t>(t0 / w + j)], p.y, 1e-9);
      EXPECT_NEAR(ngo::wrap_angle(got.value()[static_cast<std::size_t>(2 * t0 / w + j)] - p.theta), 0.0, 1e-9);
    }
  }
}

TEST(Aggregator, NonDivisibleLengthRejected) {
  ngo::Rng rng(9);
  ngo::PoseAggregator<float> agg;
  agg.init({}, rng);
  EXPECT_THROW(agg.forward(Tensor<float>::zeros({256, 6}), Tensor<float>::zeros({3, 6})), ngo::ShapeError);
}

ngo::NeuralGraphOptimizer<double> toy_ngo(ngo::Rng& rng, int feat_dim = 6, int hidden = 8) {
  ngo::NeuralGraphOptimizer<double> ngo_net;
  NgoConfig cfg;
  cfg.feat_dim = feat_dim;
  cfg.hidden = hidden;
  ngo_net.init(cfg, rng);
  return ngo_net;
}

TEST(Attention, SingleStepIsIdentity) {
  ngo::Rng rng(10);
  auto net = toy_ngo(rng);
  auto f = random_tensor<double>({6, 1}, rng);
  for (bool softmax : {true, false}) {
    net.cfg.softmax_attention = softmax;
    const auto [a, trace] = net.attention(f);
    ASSERT_EQ(trace.alpha.size(), 1u);
    EXPECT_NEAR(trace.alpha[0], 1.0, 1e-12);
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(a.value()[static_cast<std::size_t>(i)], f.value()[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(Attention, IdenticalFeaturesAttendToThemselves) {
  ngo::Rng rng(11);
  auto net = toy_ngo(rng);
  std::vector<double> col(6);
  for (auto& v : col) v = rng.uniform(-1, 1);
  std::vector<double> flat(6 * 5);
  for (int d = 0; d < 6; ++d)
    for (int t = 0; t < 5; ++t) flat[static_cast<std::size_t>(d * 5 + t)] = col[static_cast<std::size_t>(d)];
  const auto [a, trace] = net.attention(Tensor<double>::from_data({6, 5}, flat));
  for (int d = 0; d < 6; ++d)
    for (int t = 0; t < 5; ++t)
      EXPECT_NEAR(a.value()[static_cast<std::size_t>(d * 5 + t)], col[static_cast<std::size_t>(d)], 1e-9);
}

// Direct double-loop recomputation of queries, scores, softmax and the
// attended vectors.
TEST(Attention, MatchesNestedLoopOracle) {
  ngo::Rng rng(12);
  auto net = toy_ngo(rng, 8);
  const int t = 5, d = 8;
  auto f = random_tensor<double>({d, t}, rng);
  const auto [a, trace] = net.attention(f);

  const auto& wq = net.query.w.value();  // [d, d, 1]
  const auto& bq = net.query.b.value();
  std::vector<double> q(static_cast<std::size_t>(d * t));
  for (int i = 0; i < d; ++i)
    for (int u = 0; u < t; ++u) {
      double acc = bq[static_cast<std::size_t>(i)];
      for (int j = 0; j < d; ++j)
        acc += wq[static_cast<std::size_t>(i * d + j)] * f.value()[static_cast<std::size_t>(j * t + u)];
      q[static_cast<std::size_t>(i * t + u)] = acc;
    }
  for (int tt = 0; tt < t; ++tt) {
    std::vector<double> c(static_cast<std::size_t>(t));
    for (int u = 0; u < t; ++u) {
      double acc = 0;
      for (int i = 0; i < d; ++i)
        acc += q[static_cast<std::size_t>(i * t + tt)] * f.value()[static_cast<std::size_t>(i * t + u)];
      c[static_cast<std::size_t>(u)] = acc;
      EXPECT_NEAR(trace.scores[static_cast<std::size_t>(tt * t + u)], acc, 1e-9);
    }
    double mx = c[0], z = 0;
    for (double v : c) mx = std::max(mx, v / std::sqrt(8.0));
    std::vector<double> alpha(static_cast<std::size_t>(t));
    for (int u = 0; u < t; ++u) {
      alpha[static_cast<std::size_t>(u)] = std::exp(c[static_cast<std::size_t>(u)] / std::sqrt(8.0) - mx);
      z += alpha[static_cast<std::size_t>(u)];
    }
    for (int u = 0; u < t; ++u) alpha[static_cast<std::size_t>(u)] /= z;
    for (int i = 0; i < d; ++i) {
      double acc = 0;
      for (int u = 0; u < t; ++u) acc += alpha[static_cast<std::size_t>(u)] * f.value()[static_cast<std::size_t>(i * t + u)];
      EXPECT_NEAR(a.value()[static_cast<std::size_t>(i * t + tt)], acc, 1e-6);
    }
  }
}

TEST(Attention, RowsSumToOne) {
  ngo::Rng rng(13);
  auto net = toy_ngo(rng);
  auto f = random_tensor<double>({6, 9}, rng);
  for (bool softmax : {true, false}) {
    net.cfg.softmax_attention = softmax;
    const auto [a, trace] = net.attention(f);
    for (int r = 0; r < 9; ++r) {
      double s = 0;
      for (int u = 0; u < 9; ++u) s += trace.alpha[static_cast<std::size_t>(r * 9 + u)];
      EXPECT_NEAR(s, 1.0, 1e-6) << (softmax ? "softmax" : "linear") << " row " << r;
    }
  }
}

// Permuting the sequence and permuting the attention output commute.
TEST(Attention, PermutationEquivariant) {
  ngo::Rng rng(14);
  auto net = toy_ngo(rng);
  const int t = 7;
  auto f = random_tensor<double>({6, t}, rng);
  std::vector<int> perm{3, 0, 6, 1, 5, 2, 4};
  std::vector<double> pf(static_cast<std::size_t>(6 * t));
  for (int d = 0; d < 6; ++d)
    for (int u = 0; u < t; ++u)
      pf[static_cast<std::size_t>(d * t + u)] = f.value()[static_cast<std::size_t>(d * t + perm[static_cast<std::size_t>(u)])];
  const auto [a, t0] = net.attention(f);
  const auto [pa, t1] = net.attention(Tensor<double>::from_data({6, t}, pf));
  for (int d = 0; d < 6; ++d)
    for (int u = 0; u < t; ++u)
      EXPECT_NEAR(pa.value()[static_cast<std::size_t>(d * t + u)],
                  a.value()[static_cast<std::size_t>(d * t + perm[static_cast<std::size_t>(u)])], 1e-9);
}

TEST(Ngo, ShapePreservedThroughLayers) {
  ngo::Rng rng(15);
  auto net = toy_ngo(rng);
  for (int t : {1, 3, 8, 17}) {
    auto out = net.forward(random_tensor<double>({6, t}, rng), random_tensor<double>({3, t}, rng, -0.3, 0.3), 2);
    EXPECT_EQ(out.global_poses.shape(), (Shape{3, t}));
    for (const auto& d : out.iterate_deltas) EXPECT_EQ(d.shape(), (Shape{3, t}));
  }
}

TEST(Ngo, ZeroUpdateHeadsAreExactFixedPoint) {
  ngo::Rng rng(16);
  auto net = toy_ngo(rng);
  net.zero_update_heads();
  auto deltas = random_tensor<double>({3, 9}, rng, -0.5, 0.5);
  auto feats = random_tensor<double>({6, 9}, rng);
  const auto want = ngo::r2g_tensor(deltas);
  for (int m : {1, 5}) {
    const auto out = net.forward(feats, deltas, m);
    ASSERT_EQ(out.global_poses.numel(), want.numel());
    for (std::int64_t i = 0; i < want.numel(); ++i)
      ASSERT_EQ(out.global_poses.value()[static_cast<std::size_t>(i)], want.value()[static_cast<std::size_t>(i)])
          << "M=" << m << " i=" << i;
  }
}

TEST(Ngo, SaturatedBetaFreezesDeltas) {
  ngo::Rng rng(17);
  auto net = toy_ngo(rng);
  // random update field but a strongly negative gate pre-activation
  auto& last = net.stack.back();
  const int ci = last.w.dim(1);
  for (int row = net.cfg.feat_dim; row < net.cfg.feat_dim + 3; ++row)
    for (int i = 0; i < ci * 3; ++i)
      last.w.value()[static_cast<std::size_t>(row * ci * 3 + i)] = rng.uniform(-0.5, 0.5);
  last.b.value()[static_cast<std::size_t>(net.cfg.feat_dim + 3)] = -20.0;

  auto deltas = random_tensor<double>({3, 6}, rng, -0.5, 0.5);
  const auto out = net.forward(random_tensor<double>({6, 6}, rng), deltas, 1);
  for (std::int64_t i = 0; i < deltas.numel(); ++i)
    EXPECT_NEAR(out.iterate_deltas[0].value()[static_cast<std::size_t>(i)], deltas.value()[static_cast<std::size_t>(i)], 1e-4);
}

TEST(Ngo, IterateGradCheck) {
  ngo::Rng rng(18);
  auto net = toy_ngo(rng);
  // exercise the update path with nonzero head weights
  auto& last = net.stack.back();
  for (auto& v : last.w.value()) v = rng.uniform(-0.2, 0.2);
  ngo::ParamSet<double> params;
  net.register_params(params);
  auto feats = random_tensor<double>({6, 8}, rng);
  auto deltas = random_tensor<double>({3, 8}, rng, -0.4, 0.4);
  auto probe = random_tensor<double>({3, 8}, rng);
  auto rep = ngo::grad_check<double>(
      [&] {
        auto it = net.iterate(feats, deltas);
        return ngo::sum(ngo::mul(ngo::r2g_tensor(it.deltas), probe));
      },
      params, 1e-5);
  EXPECT_LT(rep.max_rel_err, 5e-3) << rep.worst_param;
}

TEST(Ngo, EndToEndGradCheck) {
  ngo::Rng rng(19);
  auto net = toy_ngo(rng);
  auto& last = net.stack.back();
  for (auto& v : last.w.value()) v = rng.uniform(-0.2, 0.2);
  ngo::ParamSet<double> params;
  net.register_params(params);
  auto feats = random_tensor<double>({6, 8}, rng);
  auto deltas = random_tensor<double>({3, 8}, rng, -0.4, 0.4);
  auto probe = random_tensor<double>({3, 8}, rng);
  auto rep = ngo::grad_check<double>(
      [&] {
        auto out = net.forward(feats, deltas, 2);
        auto loss = ngo::sum(ngo::mul(out.iterate_poses[0], probe));
        return ngo::add(loss, ngo::sum(ngo::mul(out.iterate_poses[1], probe)));
      },
      params, 1e-5);
  EXPECT_LT(rep.max_rel_err, 5e-3) << rep.worst_param;
}

TEST(Ngo, AggregatorGradCheck) {
  ngo::Rng rng(20);
  ngo::PoseAggregator<double> agg;
  AggregatorConfig cfg;
  cfg.in_dim = 10;
  cfg.feat_dim = 6;
  cfg.halvings = 1;
  agg.init(cfg, rng);
  ngo::ParamSet<double> params;
  agg.register_params(params);
  auto feats = random_tensor<double>({10, 8}, rng);
  auto deltas = random_tensor<double>({3, 8}, rng, -0.4, 0.4);
  auto fprobe = random_tensor<double>({6, 4}, rng);
  auto dprobe = random_tensor<double>({3, 4}, rng);
  auto rep = ngo::grad_check<double>(
      [&] {
        auto out = agg.forward(feats, deltas);
        return ngo::add(ngo::sum(ngo::mul(out.meta_features, fprobe)),
                        ngo::sum(ngo::mul(out.meta_deltas, dprobe)));
      },
      params, 1e-5);
  EXPECT_LT(rep.max_rel_err, 5e-3) << rep.worst_param;
}

}  // namespace
