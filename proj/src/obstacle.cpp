#include "ncds/obstacle.hpp"

#include "ncds/error.hpp"
#include "ncds/json_eigen.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace ncds {

namespace {

void check_dim(const Obstacle& ob, const Eigen::VectorXd& x) {
  if (x.size() != ob.dim()) {
    throw std::invalid_argument("state has dimension " + std::to_string(x.size()) +
                                ", obstacle has " + std::to_string(ob.dim()));
  }
}

}  // namespace

void Obstacle::validate() const {
  if (center.size() == 0) throw ConfigError("obstacle center is empty");
  if (semi_axes.size() != center.size()) throw ConfigError("obstacle semi_axes must match center");
  if (reference.size() != 0 && reference.size() != center.size()) {
    throw ConfigError("obstacle reference must match center");
  }
  if ((semi_axes.array() <= 0).any()) throw ConfigError("obstacle semi_axes must be positive");
  if (!(rho > 0)) throw ConfigError("obstacle rho must be positive");
  if (!center.allFinite() || !semi_axes.allFinite()) throw ConfigError("obstacle has non-finite entries");
}

void to_json(nlohmann::json& j, const Obstacle& ob) {
  j = {{"center", to_json_array(ob.center)}, {"semi_axes", to_json_array(ob.semi_axes)}, {"rho", ob.rho}};
  if (ob.reference.size()) j["reference"] = to_json_array(ob.reference);
}

void from_json(const nlohmann::json& j, Obstacle& ob) {
  try {
    ob.center = vector_from_json(j.at("center"));
    ob.semi_axes = vector_from_json(j.at("semi_axes"));
    ob.rho = j.value("rho", 1.0);
    ob.reference = j.contains("reference") ? vector_from_json(j.at("reference")) : Eigen::VectorXd();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("obstacle config: ") + e.what());
  }
  ob.validate();
}

Obstacle load_obstacle(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open obstacle file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("obstacle file " + path + ": " + e.what());
  }
  return j.get<Obstacle>();
}

double gamma(const Obstacle& ob, const Eigen::VectorXd& x) {
  check_dim(ob, x);
  if (x == ob.reference_point()) throw NumericError("gamma: state coincides with the obstacle reference point");
  return ((x - ob.center).array() / ob.semi_axes.array()).square().sum();
}

Eigen::VectorXd gamma_gradient(const Obstacle& ob, const Eigen::VectorXd& x) {
  check_dim(ob, x);
  return 2 * (x - ob.center).array() / ob.semi_axes.array().square();
}

double lambda_r(double g, double rho) { return 1 - std::pow(1 / g, 1 / rho); }
double lambda_e(double g, double rho) { return 1 + std::pow(1 / g, 1 / rho); }

Eigen::MatrixXd tangent_basis(const Eigen::VectorXd& n) {
  const Eigen::Index d = n.size();
  // Reflect e1 onto -n when n1 > 0 and onto n otherwise, so u never cancels.
  Eigen::VectorXd u = n;
  if (n[0] > 0) {
    u[0] += 1;
  } else {
    u = -u;
    u[0] += 1;
  }
  const Eigen::MatrixXd h = Eigen::MatrixXd::Identity(d, d) - 2 * u * u.transpose() / u.squaredNorm();
  return h.rightCols(d - 1);
}

Eigen::MatrixXd modulation_matrix(const Obstacle& ob, const Eigen::VectorXd& x) {
  const double g = gamma(ob, x);
  if (g < 1) throw NumericError("modulation_matrix: state is inside the obstacle (Gamma = " + std::to_string(g) + ")");
  const Eigen::Index d = x.size();
  const Eigen::VectorXd grad = gamma_gradient(ob, x);
  const Eigen::VectorXd r = (x - ob.reference_point()).normalized();
  Eigen::MatrixXd e(d, d);
  e.col(0) = r;
  e.rightCols(d - 1) = tangent_basis(grad.normalized());
  Eigen::VectorXd diag = Eigen::VectorXd::Constant(d, lambda_e(g, ob.rho));
  diag[0] = lambda_r(g, ob.rho);
  // G = E D E^-1, i.e. G^T solves E^T G^T = (E D)^T.
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(e.transpose());
  if (std::abs(lu.determinant()) < 1e-12) throw NumericError("modulation_matrix: degenerate basis");
  const Eigen::MatrixXd ed = e * diag.asDiagonal();
  return lu.solve(ed.transpose()).transpose();
}

Eigen::VectorXd modulated_velocity(const std::optional<Obstacle>& ob, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& xdot) {
  if (!ob) return xdot;
  return modulation_matrix(*ob, x) * xdot;
}

}  // namespace ncds
