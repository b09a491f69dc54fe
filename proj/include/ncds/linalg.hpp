#pragma once

#include <Eigen/Dense>

namespace ncds {

struct SymmetricEigen {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // column i pairs with values[i]
  int sweeps = 0;
};

// Cyclic Jacobi rotations on a symmetric matrix. Stops once the off-diagonal
// Frobenius norm falls below tol * ||A||_F. Throws NumericError if that takes
// more than max_sweeps sweeps, std::invalid_argument if A is not square.
SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& a, double tol = 1e-12, int max_sweeps = 100);

}  // namespace ncds
