#pragma once

// Canonical mapping from (base seed, split, index) to mazes and trajectories.
// Training and the seen test split draw maze seeds from a finite pool so test
// mazes are geometries the model saw; the unseen split uses fresh seeds from
// a disjoint stream.

#include <cstdint>
#include <stdexcept>
#include <string>

#include "ngo/mazeworld.hpp"
#include "ngo/rng.hpp"

namespace ngo {

namespace seed_stream {
constexpr std::uint64_t kMazePool = 0x706f6f6c;    // seen/train maze pool
constexpr std::uint64_t kMazeUnseen = 0x756e7365;  // unseen maze stream
constexpr std::uint64_t kTrajectory = 0x74726171;
constexpr std::uint64_t kInit = 0x696e6974;
constexpr std::uint64_t kData = 0x64617461;
}  // namespace seed_stream

struct WorldConfig {
  std::uint64_t seed = 1;
  int maze_min = 9;
  int maze_max = 13;
  int maze_pool = 64;          // distinct training maze geometries
  std::string maze_algo = "prim";  // prim | kruskal | mixed
  TrajectoryConfig traj;
};

inline std::uint64_t maze_seed_for(const WorldConfig& w, bool unseen, std::uint64_t index) {
  if (unseen) return derive_seed(w.seed, seed_stream::kMazeUnseen, index);
  return derive_seed(w.seed, seed_stream::kMazePool,
                     splitmix64(index) % static_cast<std::uint64_t>(w.maze_pool));
}

// The maze seed fully determines the maze: size and layout derive from it.
inline MazeGrid maze_for_seed(const WorldConfig& w, std::uint64_t maze_seed) {
  const int span = w.maze_max - w.maze_min + 1;
  const int width = w.maze_min + static_cast<int>(splitmix64(maze_seed ^ 0x5749) % static_cast<std::uint64_t>(span));
  const int height = w.maze_min + static_cast<int>(splitmix64(maze_seed ^ 0x4845) % static_cast<std::uint64_t>(span));
  if (w.maze_algo == "prim") return gen_maze_prim(width, height, maze_seed);
  if (w.maze_algo == "kruskal") return gen_maze_kruskal(width, height, maze_seed);
  if (w.maze_algo == "mixed")
    return (splitmix64(maze_seed ^ 0x414c) & 1) ? gen_maze_kruskal(width, height, maze_seed)
                                                : gen_maze_prim(width, height, maze_seed);
  throw std::invalid_argument("unknown maze_algo: " + w.maze_algo);
}

inline Trajectory make_trajectory(const WorldConfig& w, bool unseen, std::uint64_t index,
                                  int max_steps) {
  const std::uint64_t maze_seed = maze_seed_for(w, unseen, index);
  const MazeGrid maze = maze_for_seed(w, maze_seed);
  TrajectoryConfig cfg = w.traj;
  cfg.max_steps = max_steps;
  return gen_trajectory(maze, maze_seed, derive_seed(w.seed, seed_stream::kTrajectory, index), cfg);
}

}  // namespace ngo
