#pragma once

#include <Eigen/Dense>

#include <vector>

namespace ncds {

// Uniformly sampled trajectory. Row k of `states` is the state at time k*dt;
// `velocities` is either empty or the same shape as `states`.
struct Trajectory {
  double dt = 1.0;
  Eigen::MatrixXd states;
  Eigen::MatrixXd velocities;

  Eigen::Index size() const { return states.rows(); }
  Eigen::Index dim() const { return states.cols(); }
  bool has_velocities() const { return velocities.size() != 0; }

  // Throws std::invalid_argument on an empty trajectory, dt <= 0, a velocity
  // block of the wrong shape, or a non-finite entry.
  void validate() const;
};

using Dataset = std::vector<Trajectory>;

}  // namespace ncds
