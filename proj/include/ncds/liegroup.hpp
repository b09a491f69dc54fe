#pragma once

#include "ncds/autodiff.hpp"

#include <Eigen/Dense>

namespace ncds {

// [r]_x, the cross-product matrix of r.
Eigen::Matrix3d skew(const Eigen::Vector3d& r);
// Inverse of skew. Throws std::invalid_argument if ||S + S^T|| > 1e-9.
Eigen::Vector3d vee(const Eigen::Matrix3d& s);

// True if R^T R = I and det R = 1 within tol.
bool is_rotation(const Eigen::Matrix3d& r, double tol = 1e-9);

// Rodrigues formula with angle ||r||.
Eigen::Matrix3d exp_map(const Eigen::Vector3d& r);
// Axis-angle coefficients with norm in [0, pi). Throws NumericError when
// trace(R) <= -1 + 1e-9 (angle at pi, outside the first cover) and
// std::invalid_argument when R is not a rotation (tolerance 1e-6).
Eigen::Vector3d log_map(const Eigen::Matrix3d& r);

// b(x) = (||x||_inf / ||x||_2) x, mapping the unit box onto the unit ball.
Eigen::VectorXd box_to_ball(const Eigen::VectorXd& x);
Eigen::VectorXd ball_to_box(const Eigen::VectorXd& y);

// Tanh saturates at 1 in floating point, so the box coordinates are shrunk by
// this factor to keep the squashed output strictly inside the pi-ball.
inline constexpr double kSquashShrink = 1.0 - 1e-12;

// pi * b(kSquashShrink * tanh(y)).
Eigen::Vector3d first_cover_squash(const Eigen::Vector3d& y);
Eigen::Vector3d first_cover_unsquash(const Eigen::Vector3d& r);

// Tape version for a 3 x B block (one orientation per column).
ad::Var first_cover_squash(const ad::Var& y);

}  // namespace ncds
