#include "ngo/geometry.hpp"

#include <gtest/gtest.h>

#include <array>
#include <chrono>
#include <cmath>

#include "ngo/optim.hpp"
#include "ngo/rng.hpp"
#include "test_util.hpp"

using ngo::kPi;
using ngo::Pose2;
using ngo::RelPose2;

namespace {

// 3x3 homogeneous-matrix oracle for SE(2) composition.
using Mat3 = std::array<double, 9>;

Mat3 pose_to_mat(double x, double y, double th) {
  const double c = std::cos(th), s = std::sin(th);
  return {c, -s, x, s, c, y, 0, 0, 1};
}

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0;
      for (int k = 0; k < 3; ++k) acc += a[static_cast<std::size_t>(i * 3 + k)] * b[static_cast<std::size_t>(k * 3 + j)];
      r[static_cast<std::size_t>(i * 3 + j)] = acc;
    }
  return r;
}

Pose2 mat_to_pose(const Mat3& m) { return Pose2(m[2], m[5], std::atan2(m[3], m[0])); }

TEST(WrapAngle, Basics) {
  EXPECT_DOUBLE_EQ(ngo::wrap_angle(0.0), 0.0);
  EXPECT_DOUBLE_EQ(ngo::wrap_angle(kPi), kPi);
  EXPECT_DOUBLE_EQ(ngo::wrap_angle(-kPi), kPi);  // half-open convention
  EXPECT_NEAR(ngo::wrap_angle(3.0 * kPi), kPi, 1e-12);
}

TEST(WrapAngle, RangeAndIdempotence) {
  ngo::Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double a = rng.uniform(-50.0, 50.0);
    const double w = ngo::wrap_angle(a);
    EXPECT_GT(w, -kPi);
    EXPECT_LE(w, kPi);
    EXPECT_DOUBLE_EQ(ngo::wrap_angle(w), w);
    // result is congruent mod 2pi
    EXPECT_NEAR(std::remainder(a - w, 2.0 * kPi), 0.0, 1e-9);
  }
}

TEST(Compose, IdentityFrame) {
  const auto p = ngo::compose(Pose2(), RelPose2(0.3, -0.2, 0.7));
  EXPECT_DOUBLE_EQ(p.x, 0.3);
  EXPECT_DOUBLE_EQ(p.y, -0.2);
  EXPECT_DOUBLE_EQ(p.theta, 0.7);
}

TEST(Compose, IdentityTransform) {
  const Pose2 p(1.5, -2.5, 0.4);
  const auto q = ngo::compose(p, RelPose2());
  EXPECT_DOUBLE_EQ(q.x, p.x);
  EXPECT_DOUBLE_EQ(q.y, p.y);
  EXPECT_DOUBLE_EQ(q.theta, p.theta);
}

TEST(Compose, QuarterTurnCase) {
  const auto p = ngo::compose(Pose2(1, 0, kPi / 2), RelPose2(1, 0, 0));
  EXPECT_NEAR(p.x, 1.0, 1e-12);
  EXPECT_NEAR(p.y, 1.0, 1e-12);
  EXPECT_NEAR(p.theta, kPi / 2, 1e-12);
}

TEST(Compose, MatchesHomogeneousMatrixOracle) {
  ngo::Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Pose2 p(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-8, 8));
    const RelPose2 d(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-8, 8));
    const auto got = ngo::compose(p, d);
    const auto want = mat_to_pose(mat_mul(pose_to_mat(p.x, p.y, p.theta), pose_to_mat(d.dx, d.dy, d.dtheta)));
    EXPECT_NEAR(got.x, want.x, 1e-9);
    EXPECT_NEAR(got.y, want.y, 1e-9);
    EXPECT_NEAR(ngo::wrap_angle(got.theta - want.theta), 0.0, 1e-9);
  }
}

TEST(Between, SelfIsZero) {
  const Pose2 p(2, 3, -1);
  const auto d = ngo::between(p, p);
  EXPECT_DOUBLE_EQ(d.dx, 0.0);
  EXPECT_DOUBLE_EQ(d.dy, 0.0);
  EXPECT_DOUBLE_EQ(d.dtheta, 0.0);
}

TEST(Between, FromOrigin) {
  const auto d = ngo::between(Pose2(), Pose2(1, 2, 0.3));
  EXPECT_DOUBLE_EQ(d.dx, 1.0);
  EXPECT_DOUBLE_EQ(d.dy, 2.0);
  EXPECT_DOUBLE_EQ(d.dtheta, 0.3);
}

TEST(Between, RoundTripsThroughCompose) {
  ngo::Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Pose2 a(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-4, 4));
    const Pose2 b(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-4, 4));
    const auto back = ngo::compose(a, ngo::between(a, b));
    EXPECT_NEAR(back.x, b.x, 1e-9);
    EXPECT_NEAR(back.y, b.y, 1e-9);
    EXPECT_NEAR(ngo::wrap_angle(back.theta - b.theta), 0.0, 1e-9);
  }
}

TEST(R2G, ZeroDeltasStayAtOrigin) {
  const auto poses = ngo::r2g(std::vector<RelPose2>(5));
  for (const auto& p : poses) {
    EXPECT_DOUBLE_EQ(p.x, 0.0);
    EXPECT_DOUBLE_EQ(p.y, 0.0);
  }
}

TEST(R2G, StraightLine) {
  const auto poses = ngo::r2g(std::vector<RelPose2>(7, RelPose2(1, 0, 0)));
  for (std::size_t t = 0; t < poses.size(); ++t) EXPECT_DOUBLE_EQ(poses[t].x, static_cast<double>(t + 1));
}

TEST(R2G, ClosedSquareReturnsToOrigin) {
  const auto poses = ngo::r2g(std::vector<RelPose2>(4, RelPose2(1, 0, kPi / 2)));
  EXPECT_NEAR(poses.back().x, 0.0, 1e-9);
  EXPECT_NEAR(poses.back().y, 0.0, 1e-9);
  EXPECT_NEAR(ngo::wrap_angle(poses.back().theta), 0.0, 1e-9);
}

TEST(R2G, EmptyRejected) {
  EXPECT_THROW(ngo::r2g({}), std::invalid_argument);
  EXPECT_THROW(ngo::g2r({}), std::invalid_argument);
}

TEST(G2R, ConstantPoseSequence) {
  const std::vector<Pose2> poses(4, Pose2(1, 2, 0.5));
  const auto deltas = ngo::g2r(poses);
  EXPECT_DOUBLE_EQ(deltas[0].dx, 1.0);
  EXPECT_DOUBLE_EQ(deltas[0].dy, 2.0);
  EXPECT_DOUBLE_EQ(deltas[0].dtheta, 0.5);
  for (std::size_t t = 1; t < deltas.size(); ++t) {
    EXPECT_NEAR(deltas[t].dx, 0.0, 1e-12);
    EXPECT_NEAR(deltas[t].dy, 0.0, 1e-12);
    EXPECT_NEAR(deltas[t].dtheta, 0.0, 1e-12);
  }
}

// r2g(g2r(P)) == P and g2r(r2g(D)) == D on random sequences up to length 2000.
TEST(R2G, RoundTripLongSequences) {
  ngo::Rng rng(4);
  const auto start = std::chrono::steady_clock::now();
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t len = 2 + rng.uniform_int(1999);
    std::vector<Pose2> poses;
    poses.reserve(len);
    for (std::size_t i = 0; i < len; ++i)
      poses.emplace_back(rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-4, 4));
    const auto back = ngo::r2g(ngo::g2r(poses));
    double worst = 0;
    for (std::size_t i = 0; i < len; ++i) {
      worst = std::max(worst, std::abs(back[i].x - poses[i].x));
      worst = std::max(worst, std::abs(back[i].y - poses[i].y));
      worst = std::max(worst, std::abs(ngo::wrap_angle(back[i].theta - poses[i].theta)));
    }
    ASSERT_LT(worst, 1e-9) << "length " << len;

    std::vector<RelPose2> deltas;
    deltas.reserve(64);
    for (int i = 0; i < 64; ++i)
      deltas.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-4, 4));
    const auto d2 = ngo::g2r(ngo::r2g(deltas));
    for (std::size_t i = 0; i < deltas.size(); ++i) {
      ASSERT_NEAR(d2[i].dx, deltas[i].dx, 1e-9);
      ASSERT_NEAR(d2[i].dy, deltas[i].dy, 1e-9);
      ASSERT_NEAR(ngo::wrap_angle(d2[i].dtheta - deltas[i].dtheta), 0.0, 1e-9);
    }
  }
  const auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(secs, 10.0);
}

TEST(R2GTensor, MatchesScalarPath) {
  ngo::Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const int len = 2 + static_cast<int>(rng.uniform_int(1999));
    std::vector<RelPose2> deltas;
    std::vector<double> flat(static_cast<std::size_t>(3 * len));
    for (int i = 0; i < len; ++i) {
      deltas.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3));
      flat[static_cast<std::size_t>(i)] = deltas.back().dx;
      flat[static_cast<std::size_t>(len + i)] = deltas.back().dy;
      flat[static_cast<std::size_t>(2 * len + i)] = deltas.back().dtheta;
    }
    const auto want = ngo::r2g(deltas);
    auto got = ngo::r2g_tensor(ngo::Tensor<double>::from_data({3, len}, flat));
    for (int i = 0; i < len; ++i) {
      EXPECT_NEAR(got.value()[static_cast<std::size_t>(i)], want[static_cast<std::size_t>(i)].x, 1e-9);
      EXPECT_NEAR(got.value()[static_cast<std::size_t>(len + i)], want[static_cast<std::size_t>(i)].y, 1e-9);
      EXPECT_NEAR(ngo::wrap_angle(got.value()[static_cast<std::size_t>(2 * len + i)] -
                                  want[static_cast<std::size_t>(i)].theta),
                  0.0, 1e-9);
    }
  }
}

TEST(R2GTensor, GradientsPassFiniteDifferences) {
  ngo::Rng rng(6);
  ngo::ParamSet<double> params;
  auto d = params.add("d", testutil::random_tensor<double>({3, 12}, rng, -0.5, 0.5, true));
  auto probe = testutil::random_tensor<double>({3, 12}, rng);
  auto rep = ngo::grad_check<double>([&] { return ngo::sum(ngo::mul(ngo::r2g_tensor(d), probe)); },
                                     params, 1e-5);
  EXPECT_LT(rep.max_rel_err, 1e-6);
}

TEST(Metrics, PerfectPrediction) {
  std::vector<Pose2> gt{{0, 0, 0}, {1, 0, 0.1}, {2, 0, 0.2}};
  const auto m = ngo::trajectory_metrics(gt, gt);
  EXPECT_DOUBLE_EQ(m.rmse_pos, 0.0);
  EXPECT_DOUBLE_EQ(m.rmse_rot, 0.0);
  EXPECT_DOUBLE_EQ(m.pct_err_trans, 0.0);
  EXPECT_DOUBLE_EQ(m.pct_err_rot, 0.0);
  EXPECT_EQ(m.per_step_pos_err.size(), gt.size());
}

TEST(Metrics, ConstantOffsetOnStraightLine) {
  std::vector<Pose2> gt, pred;
  for (int t = 0; t <= 10; ++t) {
    gt.emplace_back(static_cast<double>(t), 0.0, 0.0);
    pred.emplace_back(static_cast<double>(t) + 1.0, 0.0, 0.0);
  }
  const auto m = ngo::trajectory_metrics(pred, gt);
  EXPECT_NEAR(m.rmse_pos, 1.0, 1e-12);
  EXPECT_NEAR(m.pct_err_trans, 10.0, 1e-12);  // 100 * 1 / 10
}

TEST(Metrics, MatchesIndependentRecomputation) {
  ngo::Rng rng(7);
  std::vector<Pose2> gt, pred;
  for (int t = 0; t < 50; ++t) {
    gt.emplace_back(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3));
    pred.emplace_back(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3));
  }
  const auto m = ngo::trajectory_metrics(pred, gt);
  double acc = 0;
  for (int t = 0; t < 50; ++t) {
    const double ex = pred[static_cast<std::size_t>(t)].x - gt[static_cast<std::size_t>(t)].x;
    const double ey = pred[static_cast<std::size_t>(t)].y - gt[static_cast<std::size_t>(t)].y;
    acc += ex * ex + ey * ey;
  }
  EXPECT_NEAR(m.rmse_pos, std::sqrt(acc / 50.0), 1e-12);
}

TEST(Metrics, ErrorCases) {
  std::vector<Pose2> a(3), b(2);
  EXPECT_THROW(ngo::trajectory_metrics(a, b), std::invalid_argument);
  std::vector<Pose2> same_spot(3, Pose2(1, 1, 0));
  EXPECT_THROW(ngo::trajectory_metrics(same_spot, same_spot), std::invalid_argument);  // L = 0
}

// Rigidly transforming both sequences leaves every metric unchanged.
TEST(Metrics, RigidTransformCovariance) {
  ngo::Rng rng(8);
  std::vector<Pose2> gt, pred;
  Pose2 p(0, 0, 0), q(0.1, -0.1, 0.05);
  for (int t = 0; t < 100; ++t) {
    p = ngo::compose(p, RelPose2(rng.uniform(0, 0.3), rng.uniform(-0.05, 0.05), rng.uniform(-0.2, 0.2)));
    q = ngo::compose(q, RelPose2(rng.uniform(0, 0.3), rng.uniform(-0.05, 0.05), rng.uniform(-0.2, 0.2)));
    gt.push_back(p);
    pred.push_back(q);
  }
  const auto m0 = ngo::trajectory_metrics(pred, gt);
  const Pose2 rigid(3.0, -2.0, 1.1);
  auto apply = [&](const std::vector<Pose2>& v) {
    std::vector<Pose2> out;
    for (const auto& e : v) out.push_back(ngo::compose(rigid, RelPose2(e.x, e.y, e.theta)));
    return out;
  };
  const auto m1 = ngo::trajectory_metrics(apply(pred), apply(gt));
  EXPECT_NEAR(m0.rmse_pos, m1.rmse_pos, 1e-9);
  EXPECT_NEAR(m0.rmse_rot, m1.rmse_rot, 1e-9);
  EXPECT_NEAR(m0.pct_err_trans, m1.pct_err_trans, 1e-9);
  EXPECT_NEAR(m0.pct_err_rot, m1.pct_err_rot, 1e-9);
}

}  // namespace
