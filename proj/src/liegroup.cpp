#include "ncds/liegroup.hpp"

#include "ncds/error.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ncds {

Eigen::Matrix3d skew(const Eigen::Vector3d& r) {
  Eigen::Matrix3d s;
  s << 0, -r.z(), r.y(),
       r.z(), 0, -r.x(),
       -r.y(), r.x(), 0;
  return s;
}

Eigen::Vector3d vee(const Eigen::Matrix3d& s) {
  if ((s + s.transpose()).norm() > 1e-9) throw std::invalid_argument("vee: matrix is not skew-symmetric");
  return {s(2, 1), s(0, 2), s(1, 0)};
}

bool is_rotation(const Eigen::Matrix3d& r, double tol) {
  return (r.transpose() * r - Eigen::Matrix3d::Identity()).norm() <= tol &&
         std::abs(r.determinant() - 1) <= tol;
}

Eigen::Matrix3d exp_map(const Eigen::Vector3d& r) {
  const double zeta = r.norm();
  const double z2 = zeta * zeta;
  double a, b;
  if (zeta < 1e-6) {
    a = 1 - z2 / 6;
    b = 0.5 - z2 / 24;
  } else {
    a = std::sin(zeta) / zeta;
    b = (1 - std::cos(zeta)) / z2;
  }
  const Eigen::Matrix3d k = skew(r);
  return Eigen::Matrix3d::Identity() + a * k + b * k * k;
}

Eigen::Vector3d log_map(const Eigen::Matrix3d& r) {
  if (!is_rotation(r, 1e-6)) throw std::invalid_argument("log_map: not a rotation matrix");
  const double tr = r.trace();
  if (tr <= -1 + 1e-9) throw NumericError("log_map: rotation angle is at pi, outside the first cover");
  const Eigen::Matrix3d a = r - r.transpose();
  const Eigen::Vector3d w(a(2, 1), a(0, 2), a(1, 0));  // 2 sin(zeta) * axis
  // atan2 form of arccos((tr - 1) / 2); accurate for small angles too.
  const double zeta = std::atan2(0.5 * w.norm(), 0.5 * (tr - 1));
  const double scale = zeta < 1e-6 ? 0.5 * (1 + zeta * zeta / 6) : zeta / (2 * std::sin(zeta));
  return scale * w;
}

Eigen::VectorXd box_to_ball(const Eigen::VectorXd& x) {
  const double n2 = x.norm();
  if (n2 == 0) return x;
  return (x.cwiseAbs().maxCoeff() / n2) * x;
}

Eigen::VectorXd ball_to_box(const Eigen::VectorXd& y) {
  const double ninf = y.cwiseAbs().maxCoeff();
  if (ninf == 0) return y;
  return (y.norm() / ninf) * y;
}

Eigen::Vector3d first_cover_squash(const Eigen::Vector3d& y) {
  const Eigen::VectorXd t = kSquashShrink * y.array().tanh();
  return std::numbers::pi * box_to_ball(t);
}

Eigen::Vector3d first_cover_unsquash(const Eigen::Vector3d& r) {
  const Eigen::VectorXd t = ball_to_box(r / std::numbers::pi) / kSquashShrink;
  if ((t.array().abs() >= 1).any()) throw std::invalid_argument("first_cover_unsquash: outside the pi-ball");
  return t.array().atanh();
}

ad::Var first_cover_squash(const ad::Var& y) {
  if (y.rows() != 3) throw std::invalid_argument("first_cover_squash expects 3 rows");
  ad::Var t = ad::tanh(y) * kSquashShrink;
  ad::Var a = ad::abs(t);
  ad::Var ninf = -ad::min_rows(-a, {0, 1, 2});
  ad::Var n2 = ad::sqrt(ad::sum_rows(ad::square(t)) + 1e-300);
  return t * (ninf / n2) * std::numbers::pi;
}

}  // namespace ncds
