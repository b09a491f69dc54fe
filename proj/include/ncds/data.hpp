#pragma once

#include "ncds/trajectory.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ncds {

// CSV with header `t,<name1>,...,<nameD>` and one row per sample. Throws
// ConfigError on ragged rows, unparsable numbers, non-increasing t, or a
// sampling period that varies by more than 1e-6 relative; the message names
// the offending row.
Trajectory load_trajectory_csv(const std::string& path);
// Writes t = k * dt. Numbers use the shortest decimal form that parses back to
// the same double. Default column names are x1..xD.
void save_trajectory_csv(const Trajectory& traj, const std::string& path,
                         const std::vector<std::string>& columns = {});

// CSV with header t,x,y,z,r11,...,r33 (rotation matrix row by row). Returns
// 6-D states [x, y, z, rx, ry, rz] via the SO(3) log map.
Trajectory load_pose_rotation_csv(const std::string& path);

// A directory with manifest.json ({files, dt, dim}) or, failing that, every
// *.csv in name order. Throws ConfigError when dimensions disagree.
Dataset load_trajectories(const std::string& dir);
// Writes demo_000.csv, ... plus manifest.json.
void save_dataset(const Dataset& demos, const std::string& dir,
                  const std::vector<std::string>& columns = {});

// Forward differences, last row zero.
Eigen::MatrixXd forward_difference_velocities(const Eigen::MatrixXd& states, double dt);

// Shifts every demo so its final state is the mean final state, drops the
// first k_trim points and recomputes velocities. Throws ConfigError for demos
// shorter than k_trim + 2 and when a state other than the last one has
// (numerically) zero velocity.
Dataset preprocess(const Dataset& demos, int k_trim = 3);

enum class ShapeKind { sine, angle, line, jshape };
std::string to_string(ShapeKind kind);
ShapeKind shape_from_string(const std::string& name);

struct ShapeSettings {
  int n_demos = 7;
  int n_points = 200;
  double noise_sd = 1.0;
  double dt = 0.02;
  std::uint64_t seed = 0;
};

// Planar demonstrations of roughly 40 units across that end exactly at the
// origin. Each demo follows the base curve with an ease-out time profile and
// its own Gaussian jitter on the start point and two waypoints, fading to zero
// at the target.
Dataset synth_shape(ShapeKind kind, const ShapeSettings& settings);

// Column-wise concatenation of demo sets with equal demo counts. Demos are
// resampled by linear interpolation to the shortest length if needed.
Dataset concat_datasets(const std::vector<Dataset>& sets);

// Resamples to n points over the same duration.
Trajectory resample(const Trajectory& traj, Eigen::Index n);

// 6-D pose demos [x, y, 0, rx, ry, rz]. The orientation comes from a second
// planar shape mapped to (u, v, (u + v) / 2) and scaled so every row has norm
// at most pi - 0.2; without an orientation shape it is the identity (r = 0).
Dataset synth_pose_dataset(ShapeKind position, std::optional<ShapeKind> orientation,
                           const ShapeSettings& settings);

}  // namespace ncds
