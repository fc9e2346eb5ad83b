#pragma once

// Planar pose algebra. Absolute poses live in the world frame; relative poses
// are expressed in the predecessor's body frame. Angles are kept in (-pi, pi]
// with -pi mapping to pi.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ngo/tensor.hpp"

namespace ngo {

constexpr double kPi = 3.14159265358979323846;

inline double wrap_angle(double a) {
  if (a > -kPi && a <= kPi) return a;
  double w = std::remainder(a, 2.0 * kPi);
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Pose2() = default;
  Pose2(double x_, double y_, double theta_) : x(x_), y(y_), theta(wrap_angle(theta_)) {}
};

struct RelPose2 {
  double dx = 0.0;
  double dy = 0.0;
  double dtheta = 0.0;

  RelPose2() = default;
  RelPose2(double dx_, double dy_, double dtheta_) : dx(dx_), dy(dy_), dtheta(wrap_angle(dtheta_)) {}
};

inline Pose2 compose(const Pose2& p, const RelPose2& d) {
  const double c = std::cos(p.theta);
  const double s = std::sin(p.theta);
  return Pose2(p.x + d.dx * c - d.dy * s, p.y + d.dx * s + d.dy * c, p.theta + d.dtheta);
}

// Relative pose taking a to b, in a's frame; compose(a, between(a, b)) == b.
inline RelPose2 between(const Pose2& a, const Pose2& b) {
  const double c = std::cos(a.theta);
  const double s = std::sin(a.theta);
  const double ex = b.x - a.x;
  const double ey = b.y - a.y;
  return RelPose2(c * ex + s * ey, -s * ex + c * ey, b.theta - a.theta);
}

inline Pose2 inverse(const Pose2& p) {
  const double c = std::cos(p.theta);
  const double s = std::sin(p.theta);
  return Pose2(-c * p.x - s * p.y, s * p.x - c * p.y, -p.theta);
}

// Accumulates relative poses from the origin: p_1 = origin (+) d_1,
// p_t = p_{t-1} (+) d_t. Output length equals input length.
inline std::vector<Pose2> r2g(const std::vector<RelPose2>& deltas) {
  if (deltas.empty()) throw std::invalid_argument("r2g: empty sequence");
  std::vector<Pose2> poses;
  poses.reserve(deltas.size());
  Pose2 p;
  for (const auto& d : deltas) {
    p = compose(p, d);
    poses.push_back(p);
  }
  return poses;
}

inline std::vector<RelPose2> g2r(const std::vector<Pose2>& poses) {
  if (poses.empty()) throw std::invalid_argument("g2r: empty sequence");
  std::vector<RelPose2> deltas;
  deltas.reserve(poses.size());
  Pose2 prev;
  for (const auto& p : poses) {
    deltas.push_back(between(prev, p));
    prev = p;
  }
  return deltas;
}

// Differentiable r2g on a [3,T] delta tensor (rows dx, dy, dtheta). Heading
// accumulates additively in SE(2), so the whole chain vectorizes into
// cumulative sums; equivalent to folding compose() along the sequence.
template <class S>
Tensor<S> r2g_tensor(const Tensor<S>& deltas) {
  if (deltas.rank() != 2 || deltas.dim(0) != 3)
    throw ShapeError("r2g_tensor: expected [3,T] deltas, got " + shape_str(deltas.shape()));
  auto dx = reshape(slice(deltas, 0, 0, 1), {deltas.dim(1)});
  auto dy = reshape(slice(deltas, 0, 1, 2), {deltas.dim(1)});
  auto dth = reshape(slice(deltas, 0, 2, 3), {deltas.dim(1)});
  auto heading = cumsum(dth);
  auto prev = shift_right(heading);  // heading before each step
  auto c = cos(prev);
  auto s = sin(prev);
  auto wx = sub(mul(dx, c), mul(dy, s));
  auto wy = add(mul(dx, s), mul(dy, c));
  auto px = reshape(cumsum(wx), {1, deltas.dim(1)});
  auto py = reshape(cumsum(wy), {1, deltas.dim(1)});
  auto pth = reshape(wrap_angle(heading), {1, deltas.dim(1)});
  return concat<S>({px, py, pth}, 0);
}

struct TrajectoryMetrics {
  double rmse_pos = 0.0;   // world units
  double rmse_rot = 0.0;   // radians
  double pct_err_trans = 0.0;  // percent of distance traveled
  double pct_err_rot = 0.0;    // radians per unit distance
  std::vector<double> per_step_pos_err;
  std::vector<double> per_step_rot_err;
};

// Drift metrics between a predicted and ground-truth pose sequence. The
// percent errors use final-pose drift over total ground-truth path length by
// default; `accumulated` divides the mean per-step drift by the path length
// instead.
inline TrajectoryMetrics trajectory_metrics(const std::vector<Pose2>& pred,
                                            const std::vector<Pose2>& gt,
                                            bool accumulated = false) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("trajectory_metrics: length mismatch, " +
                                std::to_string(pred.size()) + " vs " + std::to_string(gt.size()));
  if (pred.size() < 2) throw std::invalid_argument("trajectory_metrics: need at least 2 poses");

  TrajectoryMetrics m;
  m.per_step_pos_err.reserve(pred.size());
  m.per_step_rot_err.reserve(pred.size());
  double sq_pos = 0.0;
  double sq_rot = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    const double ex = pred[t].x - gt[t].x;
    const double ey = pred[t].y - gt[t].y;
    const double er = wrap_angle(pred[t].theta - gt[t].theta);
    const double pe = std::sqrt(ex * ex + ey * ey);
    m.per_step_pos_err.push_back(pe);
    m.per_step_rot_err.push_back(std::abs(er));
    sq_pos += ex * ex + ey * ey;
    sq_rot += er * er;
  }
  const double n = static_cast<double>(pred.size());
  m.rmse_pos = std::sqrt(sq_pos / n);
  m.rmse_rot = std::sqrt(sq_rot / n);

  double length = 0.0;
  for (std::size_t t = 1; t < gt.size(); ++t)
    length += std::hypot(gt[t].x - gt[t - 1].x, gt[t].y - gt[t - 1].y);
  if (length <= 0.0)
    throw std::invalid_argument("trajectory_metrics: ground-truth path has zero length");

  if (accumulated) {
    double mean_pos = 0.0, mean_rot = 0.0;
    for (std::size_t t = 0; t < pred.size(); ++t) {
      mean_pos += m.per_step_pos_err[t];
      mean_rot += m.per_step_rot_err[t];
    }
    m.pct_err_trans = 100.0 * (mean_pos / n) / length;
    m.pct_err_rot = (mean_rot / n) / length;
  } else {
    m.pct_err_trans = 100.0 * m.per_step_pos_err.back() / length;
    m.pct_err_rot = m.per_step_rot_err.back() / length;
  }
  return m;
}

}  // namespace ngo
