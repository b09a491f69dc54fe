#pragma once

#include <Eigen/Dense>

#include <functional>

namespace ncds {

using OdeRhs = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& y)>;

Eigen::VectorXd euler_step(const OdeRhs& f, double t, const Eigen::VectorXd& y, double h);
Eigen::VectorXd rk4_step(const OdeRhs& f, double t, const Eigen::VectorXd& y, double h);

struct Dopri5Settings {
  double rtol = 1e-4;
  double atol = 1e-4;
  long max_steps = 100000;
  double initial_step = 0;  // 0 picks a step from the usual starting heuristic
};

struct Dopri5Stats {
  long accepted = 0;
  long rejected = 0;
  long evaluations = 0;
};

// Dormand-Prince 5(4) with PI step-size control. Integrates y' = f(t, y) from
// t0 to t1 (t1 > t0) and returns y(t1). Throws NumericError if the step budget
// runs out or the step size underflows; the message carries the time reached.
Eigen::VectorXd dopri5(const OdeRhs& f, double t0, double t1, Eigen::VectorXd y0,
                       const Dopri5Settings& settings, Dopri5Stats* stats = nullptr);

// Same scheme specialised to a quadrature, y' = g(t). Because the stages do
// not depend on y, all stage nodes of a step are requested in one call: g gets
// a row of times and returns one column per time. Returns the integral of g
// over [t0, t1].
using BatchIntegrand = std::function<Eigen::MatrixXd(const Eigen::RowVectorXd& t)>;
Eigen::VectorXd dopri5_quadrature(const BatchIntegrand& g, Eigen::Index dim, double t0, double t1,
                                  const Dopri5Settings& settings, Dopri5Stats* stats = nullptr);

}  // namespace ncds
