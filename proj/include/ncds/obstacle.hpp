#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <optional>

namespace ncds {

// Ellipsoidal obstacle with Gamma(x) = sum_i ((x_i - c_i) / a_i)^2.
struct Obstacle {
  Eigen::VectorXd center;
  Eigen::VectorXd semi_axes;
  Eigen::VectorXd reference;  // defaults to center when empty
  double rho = 1.0;

  Eigen::Index dim() const { return center.size(); }
  const Eigen::VectorXd& reference_point() const { return reference.size() ? reference : center; }
  void validate() const;
};

void to_json(nlohmann::json& j, const Obstacle& ob);
void from_json(const nlohmann::json& j, Obstacle& ob);
Obstacle load_obstacle(const std::string& path);

// Throws NumericError at the reference point, std::invalid_argument on a
// dimension mismatch.
double gamma(const Obstacle& ob, const Eigen::VectorXd& x);
Eigen::VectorXd gamma_gradient(const Obstacle& ob, const Eigen::VectorXd& x);

double lambda_r(double gamma, double rho);  // 1 - Gamma^(-1/rho)
double lambda_e(double gamma, double rho);  // 1 + Gamma^(-1/rho)

// Columns 2..D of the Householder reflector that maps e1 to +-n: an
// orthonormal basis of the complement of the unit vector n.
Eigen::MatrixXd tangent_basis(const Eigen::VectorXd& n);

// G(x) = E D E^-1 with E = [r(x), tangent basis of grad Gamma] and
// D = diag(lambda_r, lambda_e, ..., lambda_e). Throws NumericError inside the
// obstacle (Gamma < 1) or when E is singular.
Eigen::MatrixXd modulation_matrix(const Obstacle& ob, const Eigen::VectorXd& x);

// G(x) xdot, or xdot unchanged without an obstacle.
Eigen::VectorXd modulated_velocity(const std::optional<Obstacle>& ob, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& xdot);

}  // namespace ncds
