#pragma once

// Self-contained 2D maze world: perfect-maze generation, ray-scan rendering,
// damped accelerative agent dynamics with disc collision, and corner-visiting
// trajectory generation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ngo/geometry.hpp"
#include "ngo/rng.hpp"

namespace ngo {

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell&) const = default;
};

// Grid of square cells with zero-thickness walls on the lattice edges. The
// outer boundary is always walled; interior passages form a spanning tree.
class MazeGrid {
 public:
  MazeGrid(int width, int height, double cell_size = 1.0)
      : width_(width), height_(height), cell_size_(cell_size) {
    if (width < 2 || height < 2) throw std::invalid_argument("maze must be at least 2x2 cells");
    // all walls closed until the generator carves passages
    vwalls_.assign(static_cast<std::size_t>((width + 1) * height), 1);
    hwalls_.assign(static_cast<std::size_t>(width * (height + 1)), 1);
    colors_.assign(static_cast<std::size_t>(width * height), {0.f, 0.f, 0.f});
  }

  int width() const { return width_; }
  int height() const { return height_; }
  double cell_size() const { return cell_size_; }
  double world_width() const { return width_ * cell_size_; }
  double world_height() const { return height_ * cell_size_; }
  double diagonal() const { return std::hypot(world_width(), world_height()); }

  bool in_bounds(const Cell& c) const {
    return c.x >= 0 && c.x < width_ && c.y >= 0 && c.y < height_;
  }

  // vertical wall on grid line x=k spanning cell row y (k in [0, width])
  bool vwall(int k, int y) const { return vwalls_[static_cast<std::size_t>(y * (width_ + 1) + k)] != 0; }
  // horizontal wall on grid line y=k spanning cell column x (k in [0, height])
  bool hwall(int x, int k) const { return hwalls_[static_cast<std::size_t>(k * width_ + x)] != 0; }

  // wall between two adjacent cells; symmetric by construction
  bool wall_between(const Cell& a, const Cell& b) const {
    if (a.x == b.x && std::abs(a.y - b.y) == 1) return hwall(a.x, std::max(a.y, b.y));
    if (a.y == b.y && std::abs(a.x - b.x) == 1) return vwall(std::max(a.x, b.x), a.y);
    throw std::invalid_argument("wall_between: cells are not adjacent");
  }

  void carve(const Cell& a, const Cell& b) {
    if (a.x == b.x && std::abs(a.y - b.y) == 1)
      hwalls_[static_cast<std::size_t>(std::max(a.y, b.y) * width_ + a.x)] = 0;
    else if (a.y == b.y && std::abs(a.x - b.x) == 1)
      vwalls_[static_cast<std::size_t>(a.y * (width_ + 1) + std::max(a.x, b.x))] = 0;
    else
      throw std::invalid_argument("carve: cells are not adjacent");
  }

  int passage_count() const {
    int open = 0;
    for (int y = 0; y < height_; ++y)
      for (int k = 1; k < width_; ++k)
        if (!vwall(k, y)) ++open;
    for (int k = 1; k < height_; ++k)
      for (int x = 0; x < width_; ++x)
        if (!hwall(x, k)) ++open;
    return open;
  }

  const std::array<float, 3>& cell_color(const Cell& c) const {
    return colors_[static_cast<std::size_t>(c.y * width_ + c.x)];
  }
  void set_cell_color(const Cell& c, std::array<float, 3> rgb) {
    colors_[static_cast<std::size_t>(c.y * width_ + c.x)] = rgb;
  }

  std::vector<Cell> open_neighbors(const Cell& c) const {
    std::vector<Cell> out;
    const std::array<Cell, 4> cand{Cell{c.x + 1, c.y}, Cell{c.x - 1, c.y}, Cell{c.x, c.y + 1},
                                   Cell{c.x, c.y - 1}};
    for (const auto& n : cand)
      if (in_bounds(n) && !wall_between(c, n)) out.push_back(n);
    return out;
  }

 private:
  int width_;
  int height_;
  double cell_size_;
  std::vector<std::uint8_t> vwalls_;
  std::vector<std::uint8_t> hwalls_;
  std::vector<std::array<float, 3>> colors_;
};

namespace detail {
inline void assign_colors(MazeGrid& maze, Rng& rng) {
  for (int y = 0; y < maze.height(); ++y)
    for (int x = 0; x < maze.width(); ++x)
      maze.set_cell_color({x, y}, {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                                   static_cast<float>(rng.uniform())});
}
}  // namespace detail

// Randomized Prim: grow a spanning tree from a random start cell by carving
// random frontier edges.
inline MazeGrid gen_maze_prim(int width, int height, std::uint64_t seed, double cell_size = 1.0) {
  MazeGrid maze(width, height, cell_size);
  Rng rng(derive_seed(seed, /*stream=*/0x6d617a65));
  std::vector<std::uint8_t> in_tree(static_cast<std::size_t>(width * height), 0);
  auto idx = [&](const Cell& c) { return static_cast<std::size_t>(c.y * width + c.x); };

  struct Edge {
    Cell a, b;
  };
  std::vector<Edge> frontier;
  auto push_edges = [&](const Cell& c) {
    const std::array<Cell, 4> cand{Cell{c.x + 1, c.y}, Cell{c.x - 1, c.y}, Cell{c.x, c.y + 1},
                                   Cell{c.x, c.y - 1}};
    for (const auto& n : cand)
      if (maze.in_bounds(n) && !in_tree[idx(n)]) frontier.push_back({c, n});
  };

  Cell start{static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(width))),
             static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(height)))};
  in_tree[idx(start)] = 1;
  push_edges(start);
  while (!frontier.empty()) {
    const std::size_t pick = rng.uniform_int(frontier.size());
    const Edge e = frontier[pick];
    frontier[pick] = frontier.back();
    frontier.pop_back();
    if (in_tree[idx(e.b)]) continue;
    maze.carve(e.a, e.b);
    in_tree[idx(e.b)] = 1;
    push_edges(e.b);
  }
  detail::assign_colors(maze, rng);
  return maze;
}

// Randomized Kruskal over the shuffled interior edge list with union-find.
inline MazeGrid gen_maze_kruskal(int width, int height, std::uint64_t seed, double cell_size = 1.0) {
  MazeGrid maze(width, height, cell_size);
  Rng rng(derive_seed(seed, /*stream=*/0x6b72736b));

  struct Edge {
    Cell a, b;
  };
  std::vector<Edge> edges;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (x + 1 < width) edges.push_back({{x, y}, {x + 1, y}});
      if (y + 1 < height) edges.push_back({{x, y}, {x, y + 1}});
    }
  for (std::size_t i = edges.size(); i > 1; --i) std::swap(edges[i - 1], edges[rng.uniform_int(i)]);

  std::vector<int> parent(static_cast<std::size_t>(width * height));
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int v) {
    while (parent[static_cast<std::size_t>(v)] != v) {
      parent[static_cast<std::size_t>(v)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(v)])];
      v = parent[static_cast<std::size_t>(v)];
    }
    return v;
  };
  auto idx = [&](const Cell& c) { return c.y * width + c.x; };
  for (const auto& e : edges) {
    const int ra = find(idx(e.a));
    const int rb = find(idx(e.b));
    if (ra == rb) continue;
    parent[static_cast<std::size_t>(ra)] = rb;
    maze.carve(e.a, e.b);
  }
  detail::assign_colors(maze, rng);
  return maze;
}

// ---------------------------------------------------------------------------
// raycasting
// ---------------------------------------------------------------------------

struct Ray {
  float r = 0.f, g = 0.f, b = 0.f;
  float depth = 0.f;  // world units from raycast(); normalized in trajectories
};

struct Observation {
  static constexpr int kRays = 241;
  static constexpr double kFovDeg = 300.0;
  std::array<Ray, kRays> rays;
};

// Casts one ray from (ox, oy) along (dx, dy) until the first closed wall edge
// (grid DDA); returns hit distance and the cell owning the hit face.
inline double cast_single_ray(const MazeGrid& maze, double ox, double oy, double dx, double dy,
                              Cell& hit_cell) {
  const double cs = maze.cell_size();
  double fx = ox / cs;  // grid coordinates
  double fy = oy / cs;
  int cx = std::clamp(static_cast<int>(std::floor(fx)), 0, maze.width() - 1);
  int cy = std::clamp(static_cast<int>(std::floor(fy)), 0, maze.height() - 1);

  const int step_x = dx > 0 ? 1 : -1;
  const int step_y = dy > 0 ? 1 : -1;
  const double inv_dx = dx != 0.0 ? 1.0 / dx : std::numeric_limits<double>::infinity();
  const double inv_dy = dy != 0.0 ? 1.0 / dy : std::numeric_limits<double>::infinity();
  // distance (in world units) to the next vertical / horizontal grid line
  double tx = dx != 0.0 ? ((dx > 0 ? (cx + 1) - fx : fx - cx) * cs) * std::abs(inv_dx)
                        : std::numeric_limits<double>::infinity();
  double ty = dy != 0.0 ? ((dy > 0 ? (cy + 1) - fy : fy - cy) * cs) * std::abs(inv_dy)
                        : std::numeric_limits<double>::infinity();
  const double dtx = dx != 0.0 ? cs * std::abs(inv_dx) : std::numeric_limits<double>::infinity();
  const double dty = dy != 0.0 ? cs * std::abs(inv_dy) : std::numeric_limits<double>::infinity();

  const int max_steps = 2 * (maze.width() + maze.height()) + 8;
  for (int i = 0; i < max_steps; ++i) {
    if (tx <= ty) {
      // crossing a vertical grid line
      const int line = dx > 0 ? cx + 1 : cx;
      if (maze.vwall(line, cy)) {
        hit_cell = {cx, cy};
        return tx;
      }
      cx += step_x;
      tx += dtx;
    } else {
      const int line = dy > 0 ? cy + 1 : cy;
      if (maze.hwall(cx, line)) {
        hit_cell = {cx, cy};
        return ty;
      }
      cy += step_y;
      ty += dty;
    }
  }
  throw std::logic_error("cast_single_ray: no wall hit; maze boundary is not closed");
}

// 241 rays spread uniformly over 300 degrees centered on the heading; each
// returns the color of the cell on the agent's side of the hit face and the
// Euclidean hit distance in world units.
inline Observation raycast(const MazeGrid& maze, const Pose2& pose) {
  if (pose.x < 0.0 || pose.x > maze.world_width() || pose.y < 0.0 || pose.y > maze.world_height())
    throw std::invalid_argument("raycast: pose outside maze free space (" + std::to_string(pose.x) +
                                ", " + std::to_string(pose.y) + ")");
  Observation obs;
  const double fov = Observation::kFovDeg * kPi / 180.0;
  for (int i = 0; i < Observation::kRays; ++i) {
    const double ang = pose.theta - fov / 2.0 + fov * static_cast<double>(i) / (Observation::kRays - 1);
    Cell hit;
    const double depth = cast_single_ray(maze, pose.x, pose.y, std::cos(ang), std::sin(ang), hit);
    const auto& c = maze.cell_color(hit);
    obs.rays[static_cast<std::size_t>(i)] = {c[0], c[1], c[2], static_cast<float>(depth)};
  }
  return obs;
}

// ---------------------------------------------------------------------------
// dynamics
// ---------------------------------------------------------------------------

enum class Action : std::uint8_t { kForward = 0, kTurnLeft = 1, kTurnRight = 2 };

struct DynamicsParams {
  double lin_accel = 0.02;   // cell/step^2
  double ang_accel = 0.02;   // rad/step^2
  double damping = 0.9;      // velocity retained per step
  double lin_cap = 0.2;      // cell/step
  double ang_cap = 0.1;      // rad/step
  double radius = 0.15;      // agent disc, cells
};

struct AgentState {
  Pose2 pose;
  double lin_vel = 0.0;
  double ang_vel = 0.0;
};

namespace detail {

constexpr double kContactMargin = 1e-6;

// Clamps a single-axis move so the disc center stays outside every wall's
// expanded box; walls orthogonal to the motion block, parallel walls whose
// band contains the fixed coordinate block too (their box has finite extent
// along the motion axis).
inline double clamp_axis_move(const MazeGrid& maze, bool move_x, double fixed, double from,
                              double want, double radius) {
  if (want == from) return want;
  const double cs = maze.cell_size();
  const double r = radius;
  const bool pos = want > from;
  double lim = want;
  const double lo = std::min(from, want) - r - cs;
  const double hi = std::max(from, want) + r + cs;

  // walls perpendicular to the motion: for an x-move these are vertical walls
  for (int line = static_cast<int>(std::floor(lo / cs)); line <= static_cast<int>(std::ceil(hi / cs)); ++line) {
    const int nlines = (move_x ? maze.width() : maze.height()) + 1;
    if (line < 0 || line >= nlines) continue;
    const int ncells = move_x ? maze.height() : maze.width();
    for (int cell = 0; cell < ncells; ++cell) {
      const bool walled = move_x ? maze.vwall(line, cell) : maze.hwall(cell, line);
      if (!walled) continue;
      // wall segment spans [cell, cell+1] along the fixed axis
      if (fixed <= cell * cs - r || fixed >= (cell + 1) * cs + r) continue;
      const double wall = line * cs;
      if (pos && from <= wall - r + kContactMargin && want > wall - r - kContactMargin)
        lim = std::min(lim, wall - r - kContactMargin);
      else if (!pos && from >= wall + r - kContactMargin && want < wall + r + kContactMargin)
        lim = std::max(lim, wall + r + kContactMargin);
    }
  }
  // walls parallel to the motion whose band contains the fixed coordinate
  for (int line = 0; line <= (move_x ? maze.height() : maze.width()); ++line) {
    const double wall = line * cs;
    if (std::abs(fixed - wall) >= r) continue;
    const int ncells = move_x ? maze.width() : maze.height();
    for (int cell = std::max(0, static_cast<int>(std::floor(lo / cs)) - 1);
         cell < std::min(ncells, static_cast<int>(std::ceil(hi / cs)) + 1); ++cell) {
      const bool walled = move_x ? maze.hwall(cell, line) : maze.vwall(line, cell);
      if (!walled) continue;
      // expanded box along the motion axis: (cell - r, cell + 1 + r)
      const double blo = cell * cs - r;
      const double bhi = (cell + 1) * cs + r;
      if (pos && from <= blo + kContactMargin && want > blo - kContactMargin)
        lim = std::min(lim, blo - kContactMargin);
      else if (!pos && from >= bhi - kContactMargin && want < bhi + kContactMargin)
        lim = std::max(lim, bhi + kContactMargin);
    }
  }
  return lim;
}

}  // namespace detail

// One dynamics step: acceleration from the action, damping, caps, heading
// update, then per-axis translation with wall sliding. The disc of radius
// `radius` never penetrates a wall.
inline AgentState step_dynamics(const AgentState& state, Action action, const MazeGrid& maze,
                                const DynamicsParams& params = {}) {
  AgentState next = state;
  double lin_in = 0.0, ang_in = 0.0;
  switch (action) {
    case Action::kForward: lin_in = params.lin_accel; break;
    case Action::kTurnLeft: ang_in = params.ang_accel; break;
    case Action::kTurnRight: ang_in = -params.ang_accel; break;
  }
  next.lin_vel = std::clamp(params.damping * (state.lin_vel + lin_in), 0.0, params.lin_cap);
  next.ang_vel = std::clamp(params.damping * (state.ang_vel + ang_in), -params.ang_cap, params.ang_cap);

  const double heading = wrap_angle(state.pose.theta + next.ang_vel);
  const double wx = next.lin_vel * std::cos(heading);
  const double wy = next.lin_vel * std::sin(heading);

  double x = state.pose.x;
  double y = state.pose.y;
  x = detail::clamp_axis_move(maze, /*move_x=*/true, y, x, x + wx, params.radius * maze.cell_size());
  y = detail::clamp_axis_move(maze, /*move_x=*/false, x, y, y + wy, params.radius * maze.cell_size());
  next.pose = Pose2(x, y, heading);
  return next;
}

// ---------------------------------------------------------------------------
// path planning and trajectory generation
// ---------------------------------------------------------------------------

// Shortest cell path through the passage graph with unit edge weights; unique
// in a perfect maze.
inline std::vector<Cell> dijkstra_path(const MazeGrid& maze, const Cell& start, const Cell& goal) {
  if (!maze.in_bounds(start) || !maze.in_bounds(goal))
    throw std::invalid_argument("dijkstra_path: cell out of bounds");
  const int n = maze.width() * maze.height();
  auto idx = [&](const Cell& c) { return c.y * maze.width() + c.x; };
  std::vector<int> dist(static_cast<std::size_t>(n), std::numeric_limits<int>::max());
  std::vector<int> prev(static_cast<std::size_t>(n), -1);
  using Item = std::pair<int, int>;  // (distance, cell index)
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[static_cast<std::size_t>(idx(start))] = 0;
  pq.emplace(0, idx(start));
  while (!pq.empty()) {
    const auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[static_cast<std::size_t>(u)]) continue;
    if (u == idx(goal)) break;
    const Cell c{u % maze.width(), u / maze.width()};
    for (const auto& nb : maze.open_neighbors(c)) {
      const int v = idx(nb);
      if (d + 1 < dist[static_cast<std::size_t>(v)]) {
        dist[static_cast<std::size_t>(v)] = d + 1;
        prev[static_cast<std::size_t>(v)] = u;
        pq.emplace(d + 1, v);
      }
    }
  }
  std::vector<Cell> path;
  for (int v = idx(goal); v != -1; v = prev[static_cast<std::size_t>(v)])
    path.push_back({v % maze.width(), v / maze.width()});
  std::reverse(path.begin(), path.end());
  return path;
}

struct Trajectory {
  std::uint64_t maze_seed = 0;
  std::vector<Observation> observations;  // T, depth normalized to [0,1]
  std::vector<Action> actions;            // T-1
  std::vector<Pose2> gt_poses;            // T, canonicalized so gt_poses[0] is the origin
};

struct TrajectoryConfig {
  int max_steps = 256;
  DynamicsParams dynamics;
  double waypoint_radius = 0.45;    // cells
  double heading_threshold = 0.25;  // radians of predicted error before turning
};

// Waypoint controller: visit the four corner cells in seeded random order
// along Dijkstra cell chains. Turns predictively (accounts for angular
// momentum), otherwise drives forward. Observations are recorded before each
// action; depth is normalized by the maze diagonal.
inline Trajectory gen_trajectory(const MazeGrid& maze, std::uint64_t maze_seed,
                                 std::uint64_t traj_seed, const TrajectoryConfig& cfg = {}) {
  if (cfg.max_steps < 2) throw std::invalid_argument("gen_trajectory: max_steps must be >= 2");
  Rng rng(derive_seed(traj_seed, /*stream=*/0x74726a));
  const double cs = maze.cell_size();
  auto center = [&](const Cell& c) {
    return std::pair<double, double>{(c.x + 0.5) * cs, (c.y + 0.5) * cs};
  };

  // corner visit order, seeded per trajectory
  std::array<Cell, 4> corners{Cell{0, 0}, Cell{maze.width() - 1, 0}, Cell{0, maze.height() - 1},
                              Cell{maze.width() - 1, maze.height() - 1}};
  for (std::size_t i = corners.size(); i > 1; --i) std::swap(corners[i - 1], corners[rng.uniform_int(i)]);

  Cell start{static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(maze.width()))),
             static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(maze.height())))};

  // chain the corner-to-corner shortest paths into one waypoint list
  std::vector<Cell> route;
  Cell at = start;
  route.push_back(at);
  for (const auto& corner : corners) {
    auto leg = dijkstra_path(maze, at, corner);
    for (std::size_t i = 1; i < leg.size(); ++i) route.push_back(leg[i]);
    at = corner;
  }

  AgentState state;
  {
    auto [sx, sy] = center(start);
    state.pose = Pose2(sx, sy, rng.uniform(-kPi, kPi));
  }

  const double inv_range = 1.0 / maze.diagonal();
  auto record_obs = [&](std::vector<Observation>& out) {
    Observation o = raycast(maze, state.pose);
    for (auto& ray : o.rays) ray.depth = static_cast<float>(ray.depth * inv_range);
    out.push_back(o);
  };

  Trajectory traj;
  traj.maze_seed = maze_seed;
  std::vector<Pose2> world_poses;
  std::size_t wp = 1;  // route[0] is the start cell
  const double momentum = cfg.dynamics.damping / (1.0 - cfg.dynamics.damping);
  for (int step = 0; step < cfg.max_steps - 1; ++step) {
    if (wp >= route.size()) break;
    record_obs(traj.observations);
    world_poses.push_back(state.pose);

    auto [tx, ty] = center(route[wp]);
    const double err = wrap_angle(std::atan2(ty - state.pose.y, tx - state.pose.x) - state.pose.theta);
    const double predicted = wrap_angle(err - state.ang_vel * momentum);
    Action a = Action::kForward;
    if (std::abs(predicted) > cfg.heading_threshold)
      a = predicted > 0 ? Action::kTurnLeft : Action::kTurnRight;
    traj.actions.push_back(a);
    state = step_dynamics(state, a, maze, cfg.dynamics);

    if (std::hypot(state.pose.x - tx, state.pose.y - ty) < cfg.waypoint_radius * cs) ++wp;
  }
  record_obs(traj.observations);
  world_poses.push_back(state.pose);

  // canonicalize: first pose becomes the origin
  const Pose2 origin = world_poses.front();
  traj.gt_poses.reserve(world_poses.size());
  for (const auto& p : world_poses) {
    const RelPose2 rel = between(origin, p);
    traj.gt_poses.emplace_back(rel.dx, rel.dy, rel.dtheta);
  }
  return traj;
}

}  // namespace ngo
