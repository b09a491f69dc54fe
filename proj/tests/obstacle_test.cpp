#include "ncds/contraction.hpp"
#include "ncds/error.hpp"
#include "ncds/obstacle.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <random>

namespace ncds {
namespace {

Obstacle disc(Eigen::Vector2d c, double radius, double rho = 1.0) {
  Obstacle ob;
  ob.center = c;
  ob.semi_axes = Eigen::Vector2d::Constant(radius);
  ob.rho = rho;
  return ob;
}

TEST(Gamma, Examples) {
  const Obstacle unit = disc({0, 0}, 1);
  EXPECT_DOUBLE_EQ(gamma(unit, Eigen::Vector2d(std::sqrt(0.5), std::sqrt(0.5))), 1.0);
  EXPECT_DOUBLE_EQ(gamma(unit, Eigen::Vector2d(2, 0)), 4.0);
  Obstacle ellipse = unit;
  ellipse.semi_axes = Eigen::Vector2d(2, 1);
  EXPECT_DOUBLE_EQ(gamma(ellipse, Eigen::Vector2d(2, 0)), 1.0);
}

TEST(Gamma, ErrorsAtReferenceAndOnDimensionMismatch) {
  const Obstacle unit = disc({1, 1}, 1);
  EXPECT_THROW(gamma(unit, Eigen::Vector2d(1, 1)), NumericError);
  EXPECT_THROW(gamma(unit, Eigen::Vector3d(1, 1, 1)), std::invalid_argument);
}

TEST(Lambda, Examples) {
  EXPECT_DOUBLE_EQ(lambda_r(2, 1), 0.5);
  EXPECT_DOUBLE_EQ(lambda_e(2, 1), 1.5);
  for (double rho : {0.3, 1.0, 4.0}) {
    EXPECT_DOUBLE_EQ(lambda_r(1, rho), 0.0);
    EXPECT_DOUBLE_EQ(lambda_e(1, rho), 2.0);
    double prev_r = 0, prev_e = 2;
    for (double g = 1.5; g < 1e4; g *= 3) {
      EXPECT_GT(lambda_r(g, rho), prev_r);
      EXPECT_LT(lambda_e(g, rho), prev_e);
      prev_r = lambda_r(g, rho);
      prev_e = lambda_e(g, rho);
    }
    EXPECT_NEAR(prev_r, 1, std::pow(1e3, -1 / rho));
  }
}

TEST(Modulation, FarFieldApproachesIdentity) {
  // Gamma = 1e6 at distance 1000 from a unit disc. The deviation from I is
  // Gamma^(-1/rho): 1e-12 for rho = 0.5 and 1e-6 for rho = 1.
  const Eigen::Vector2d x(600, 800);
  EXPECT_LT((modulation_matrix(disc({0, 0}, 1, 0.5), x) - Eigen::Matrix2d::Identity()).norm(), 1e-9);
  EXPECT_LT((modulation_matrix(disc({0, 0}, 1, 1.0), x) - Eigen::Matrix2d::Identity()).norm(), 2e-6);
}

TEST(Modulation, BoundaryKillsRadialComponent) {
  const Obstacle unit = disc({0, 0}, 1);
  const double a = 0.7;
  const Eigen::Vector2d x(std::cos(a), std::sin(a));
  const Eigen::Matrix2d g = modulation_matrix(unit, x);
  EXPECT_LT((g * x).norm(), 1e-15);  // r(x) = x here
  // Dense eigendecomposition oracle: spectrum {0, 2}.
  Eigen::EigenSolver<Eigen::MatrixXd> es(g);
  std::vector<double> ev{es.eigenvalues()[0].real(), es.eigenvalues()[1].real()};
  std::sort(ev.begin(), ev.end());
  EXPECT_NEAR(ev[0], 0, 1e-14);
  EXPECT_NEAR(ev[1], 2, 1e-14);
  // Radially inward velocity is stopped.
  const Eigen::VectorXd out = modulated_velocity(unit, x, -3 * x);
  EXPECT_LE(out.dot(x), 1e-14);
  EXPECT_NEAR(out.dot(x), 0, 1e-14);
}

TEST(Modulation, EigenvaluesAreLambdas) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int dim : {2, 3, 4}) {
    for (int k = 0; k < 100; ++k) {
      Obstacle ob;
      ob.center = Eigen::VectorXd::Random(dim);
      ob.semi_axes = (Eigen::VectorXd::Random(dim).array() + 1.5).matrix();
      ob.reference = ob.center + 0.3 * ob.semi_axes.cwiseProduct(Eigen::VectorXd::Random(dim)) / std::sqrt(dim);
      ob.rho = 0.5 + (k % 4);
      Eigen::VectorXd dir(dim);
      for (int i = 0; i < dim; ++i) dir[i] = u(rng);
      Eigen::VectorXd x = ob.center + ob.semi_axes.cwiseProduct(dir.normalized()) * (1.0 + 1e-9 + 2 * (k % 7) / 7.0);
      const double g = gamma(ob, x);
      const Eigen::MatrixXd m = modulation_matrix(ob, x);
      Eigen::EigenSolver<Eigen::MatrixXd> es(m);
      std::vector<double> ev;
      for (int i = 0; i < dim; ++i) {
        EXPECT_NEAR(es.eigenvalues()[i].imag(), 0, 1e-9);
        ev.push_back(es.eigenvalues()[i].real());
      }
      std::sort(ev.begin(), ev.end());
      EXPECT_NEAR(ev.front(), lambda_r(g, ob.rho), 1e-9);
      for (int i = 1; i < dim; ++i) EXPECT_NEAR(ev[i], lambda_e(g, ob.rho), 1e-9);
      EXPECT_GE(ev.front(), -1e-12);
    }
  }
}

TEST(Modulation, SphereWithCentralReferenceIsSymmetricPsd) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  Obstacle ob;
  ob.center = Eigen::Vector3d(1, -2, 0.5);
  ob.semi_axes = Eigen::Vector3d::Constant(1.3);
  for (int k = 0; k < 100; ++k) {
    const Eigen::Vector3d dir = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
    const Eigen::Vector3d x = ob.center + 1.3 * (1 + 0.1 * k) * dir;
    const Eigen::Matrix3d g = modulation_matrix(ob, x);
    EXPECT_LT((g - g.transpose()).norm(), 1e-12);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(g).eigenvalues().minCoeff(), -1e-12);
  }
}

TEST(Modulation, InsideIsAnError) {
  EXPECT_THROW(modulation_matrix(disc({0, 0}, 1), Eigen::Vector2d(0.5, 0)), NumericError);
}

TEST(Modulation, NoObstaclePassesThrough) {
  const Eigen::Vector2d v(0.3, -7);
  EXPECT_EQ(modulated_velocity(std::nullopt, Eigen::Vector2d(0, 0), v), Eigen::VectorXd(v));
}

TEST(TangentBasis, OrthonormalComplement) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  for (int dim : {1, 2, 3, 6}) {
    std::vector<Eigen::VectorXd> normals;
    normals.push_back(Eigen::VectorXd::Unit(dim, 0));
    normals.push_back(-Eigen::VectorXd::Unit(dim, 0));
    for (int k = 0; k < 50; ++k) {
      Eigen::VectorXd v(dim);
      for (int i = 0; i < dim; ++i) v[i] = n(rng);
      normals.push_back(v.normalized());
    }
    for (const auto& nv : normals) {
      const Eigen::MatrixXd t = tangent_basis(nv);
      ASSERT_EQ(t.cols(), dim - 1);
      if (dim == 1) continue;
      EXPECT_LT((t.transpose() * t - Eigen::MatrixXd::Identity(dim - 1, dim - 1)).norm(), 1e-14);
      EXPECT_LT((t.transpose() * nv).norm(), 1e-14);
    }
  }
}

TEST(Modulation, RolloutAroundBlockingDiscStaysOutside) {
  // Linear attractor to the origin with a disc sitting on the straight path.
  const Obstacle ob = disc({-5, 0.2}, 2);
  const VelocityFn f = [&](const Eigen::VectorXd& x) {
    return modulated_velocity(ob, x, Eigen::VectorXd(-x));
  };
  RolloutSettings s;
  s.dt = 0.01;
  s.horizon = 1500;
  const auto r = rollout(f, Eigen::Vector2d(-10, 0), s,
                         [&](const Eigen::VectorXd& x) { return gamma(ob, x) >= 1; });
  ASSERT_TRUE(r.ok) << r.error;
  double min_gamma = 1e300;
  for (Eigen::Index k = 0; k < r.trajectory.size(); ++k) {
    min_gamma = std::min(min_gamma, gamma(ob, r.trajectory.states.row(k).transpose()));
  }
  EXPECT_GE(min_gamma, 1 - 1e-6);
  EXPECT_LT(min_gamma, 1.5);  // it did have to go around
  EXPECT_LT(r.trajectory.states.bottomRows(1).norm(), 0.1);
}

TEST(Obstacle, JsonRoundTripAndValidation) {
  Obstacle ob = disc({1, 2}, 3, 2);
  ob.reference = Eigen::Vector2d(1.5, 2);
  const auto back = nlohmann::json(ob).get<Obstacle>();
  EXPECT_EQ(back.center, ob.center);
  EXPECT_EQ(back.semi_axes, ob.semi_axes);
  EXPECT_EQ(back.reference, ob.reference);
  EXPECT_EQ(back.rho, ob.rho);
  auto j = nlohmann::json(ob);
  j["semi_axes"] = {1.0, -1.0};
  EXPECT_THROW(j.get<Obstacle>(), ConfigError);
  j = nlohmann::json(ob);
  j.erase("center");
  EXPECT_THROW(j.get<Obstacle>(), ConfigError);
  EXPECT_THROW(load_obstacle("/nonexistent/obstacle.json"), ConfigError);
}

}  // namespace
}  // namespace ncds
