#include "ncds/ode.hpp"

#include "ncds/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace ncds {

namespace {

// Dormand-Prince tableau.
constexpr std::array<double, 7> kC = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
constexpr std::array<double, 7> kB = {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784,
                                      11.0 / 84, 0.0};
// Fifth-order minus embedded fourth-order weights.
constexpr std::array<double, 7> kE = {71.0 / 57600,  0.0,         -71.0 / 16695, 71.0 / 1920,
                                      -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 10.0;
constexpr double kBeta = 0.04;  // PI term
constexpr double kAlpha = 0.2 - 0.75 * kBeta;

double error_norm(const Eigen::VectorXd& err, const Eigen::VectorXd& y0, const Eigen::VectorXd& y1,
                  const Dopri5Settings& s) {
  if (err.size() == 0) return 0;
  double acc = 0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const double sc = s.atol + s.rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    acc += (err[i] / sc) * (err[i] / sc);
  }
  return std::sqrt(acc / static_cast<double>(err.size()));
}

double initial_step(const Eigen::VectorXd& y0, const Eigen::VectorXd& f0, double span,
                    const Dopri5Settings& s) {
  if (s.initial_step > 0) return std::min(s.initial_step, span);
  double d0 = 0, d1 = 0;
  for (Eigen::Index i = 0; i < y0.size(); ++i) {
    const double sc = s.atol + s.rtol * std::abs(y0[i]);
    d0 += (y0[i] / sc) * (y0[i] / sc);
    d1 += (f0[i] / sc) * (f0[i] / sc);
  }
  const double n = std::max<double>(1, static_cast<double>(y0.size()));
  d0 = std::sqrt(d0 / n);
  d1 = std::sqrt(d1 / n);
  const double h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  return std::min(span, h);
}

void validate(const Dopri5Settings& s, double t0, double t1) {
  if (!(s.rtol > 0) || !(s.atol > 0)) throw ConfigError("dopri5 tolerances must be positive");
  if (s.max_steps < 1) throw ConfigError("dopri5 max_steps must be at least 1");
  if (!(t1 > t0)) throw std::invalid_argument("dopri5 needs t1 > t0");
}

[[noreturn]] void fail(const std::string& why, double t, double t1, long steps) {
  std::ostringstream msg;
  msg << "dopri5: " << why << " at t=" << t << " of " << t1 << " after " << steps << " steps";
  throw NumericError(msg.str());
}

// Shared step-control loop. `stages(t, h, y, k)` fills k[1..6] given k[0] and
// returns the fifth-order solution; k[6] is the derivative at the new point.
template <typename Stages>
Eigen::VectorXd run(Stages&& stages, Eigen::VectorXd k0, double t0, double t1, Eigen::VectorXd y,
                    const Dopri5Settings& s, Dopri5Stats* stats) {
  std::array<Eigen::VectorXd, 7> k;
  k[0] = std::move(k0);
  double t = t0;
  double h = initial_step(y, k[0], t1 - t0, s);
  double prev_err = 1e-4;
  Dopri5Stats local;
  bool rejected_last = false;
  while (t < t1) {
    if (local.accepted + local.rejected >= s.max_steps) fail("step budget exhausted", t, t1, s.max_steps);
    if (t + h > t1) h = t1 - t;
    if (h <= std::abs(t) * 1e-15 || h <= 0) fail("step size underflow", t, t1, local.accepted);
    Eigen::VectorXd y_new = stages(t, h, y, k);
    local.evaluations += 6;
    Eigen::VectorXd err = Eigen::VectorXd::Zero(y.size());
    for (int i = 0; i < 7; ++i) {
      if (kE[i] != 0) err += h * kE[i] * k[i];
    }
    const double en = error_norm(err, y, y_new, s);
    if (!std::isfinite(en)) fail("non-finite state", t, t1, local.accepted);
    if (en <= 1) {
      double factor = en == 0 ? kMaxFactor
                              : kSafety * std::pow(en, -kAlpha) * std::pow(prev_err, kBeta);
      factor = std::clamp(factor, kMinFactor, kMaxFactor);
      if (rejected_last) factor = std::min(factor, 1.0);
      t += h;
      y = std::move(y_new);
      k[0] = k[6];
      h *= factor;
      prev_err = std::max(en, 1e-4);
      rejected_last = false;
      ++local.accepted;
    } else {
      h *= std::max(kMinFactor, kSafety * std::pow(en, -kAlpha));
      rejected_last = true;
      ++local.rejected;
    }
  }
  if (stats) *stats = local;
  return y;
}

}  // namespace

Eigen::VectorXd euler_step(const OdeRhs& f, double t, const Eigen::VectorXd& y, double h) {
  return y + h * f(t, y);
}

Eigen::VectorXd rk4_step(const OdeRhs& f, double t, const Eigen::VectorXd& y, double h) {
  const Eigen::VectorXd k1 = f(t, y);
  const Eigen::VectorXd k2 = f(t + h / 2, y + h / 2 * k1);
  const Eigen::VectorXd k3 = f(t + h / 2, y + h / 2 * k2);
  const Eigen::VectorXd k4 = f(t + h, y + h * k3);
  return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
}

Eigen::VectorXd dopri5(const OdeRhs& f, double t0, double t1, Eigen::VectorXd y0,
                       const Dopri5Settings& settings, Dopri5Stats* stats) {
  validate(settings, t0, t1);
  auto stages = [&](double t, double h, const Eigen::VectorXd& y, std::array<Eigen::VectorXd, 7>& k) {
    Eigen::VectorXd y_stage;
    for (int i = 1; i < 7; ++i) {
      y_stage = y;
      for (int j = 0; j < i; ++j) {
        if (kA[i][j] != 0) y_stage += h * kA[i][j] * k[j];
      }
      k[i] = f(t + kC[i] * h, y_stage);
    }
    return y_stage;  // the seventh stage point is the fifth-order solution (FSAL)
  };
  Eigen::VectorXd k0 = f(t0, y0);
  Eigen::VectorXd y = run(stages, std::move(k0), t0, t1, std::move(y0), settings, stats);
  if (stats) stats->evaluations += 1;
  return y;
}

Eigen::VectorXd dopri5_quadrature(const BatchIntegrand& g, Eigen::Index dim, double t0, double t1,
                                  const Dopri5Settings& settings, Dopri5Stats* stats) {
  validate(settings, t0, t1);
  // Starting from y = 0 the usual heuristic is uninformative; try the whole
  // interval and let the error control cut it down.
  Dopri5Settings s = settings;
  if (s.initial_step <= 0) s.initial_step = t1 - t0;
  auto stages = [&](double t, double h, const Eigen::VectorXd& y, std::array<Eigen::VectorXd, 7>& k) {
    Eigen::RowVectorXd times(6);
    for (int i = 1; i < 7; ++i) times[i - 1] = t + kC[i] * h;
    const Eigen::MatrixXd values = g(times);
    for (int i = 1; i < 7; ++i) k[i] = values.col(i - 1);
    Eigen::VectorXd y_new = y;
    for (int i = 0; i < 6; ++i) {
      if (kB[i] != 0) y_new += h * kB[i] * k[i];
    }
    return y_new;
  };
  Eigen::RowVectorXd start(1);
  start[0] = t0;
  Eigen::VectorXd k0 = g(start).col(0);
  Eigen::VectorXd y = run(stages, std::move(k0), t0, t1, Eigen::VectorXd::Zero(dim), s, stats);
  if (stats) stats->evaluations += 1;
  return y;
}

}  // namespace ncds
