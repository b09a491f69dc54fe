#include "ncds/contraction.hpp"
#include "ncds/error.hpp"
#include "ncds/linalg.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace ncds {
namespace {

using ::ncds::testing::fd_gradient;
using ::ncds::testing::fd_jacobian;
using ::ncds::testing::relative_error;
using ::ncds::testing::tolerance_ratio;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

ContractiveField random_field(int dim, std::uint64_t seed, std::vector<int> hidden = {16, 16},
                              double eps = 1e-2) {
  std::mt19937_64 rng(seed);
  auto f = ContractiveField::create(dim, hidden, Activation::tanh, eps, rng);
  f.x0 = Eigen::VectorXd::Random(dim);
  f.xdot0 = Eigen::VectorXd::Random(dim);
  f.jac_net.params += 0.3 * Eigen::VectorXd::Random(f.jac_net.params.size());
  return f;
}

// Output layer zeroed, bias set to vec(J): the net is the constant J.
ContractiveField constant_field(const Eigen::MatrixXd& j, double eps) {
  std::mt19937_64 rng(0);
  auto f = ContractiveField::create(static_cast<int>(j.rows()), {4}, Activation::tanh, eps, rng);
  f.jac_net.zero_output_layer();
  const RowMajor rm = j;
  f.jac_net.params.tail(j.size()) = Eigen::Map<const Eigen::VectorXd>(rm.data(), rm.size());
  return f;
}

TEST(NegdefJacobian, ZeroNet) {
  auto f = constant_field(Eigen::MatrixXd::Zero(2, 2), 0.01);
  EXPECT_LT((negdef_jacobian(f, Eigen::Vector2d(3, -1)) + 0.01 * Eigen::Matrix2d::Identity()).norm(),
            1e-15);
}

TEST(NegdefJacobian, IdentityNet) {
  auto f = constant_field(Eigen::MatrixXd::Identity(2, 2), 0.1);
  EXPECT_LT((negdef_jacobian(f, Eigen::Vector2d(0.5, 2)) + 1.1 * Eigen::Matrix2d::Identity()).norm(),
            1e-15);
}

TEST(NegdefJacobian, SymmetricPartBoundedByEpsOnRandomNets) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    auto f = random_field(3, trial, {8, 8}, 0.05);
    Eigen::Vector3d x(n(rng), n(rng), n(rng));
    const Eigen::MatrixXd j = negdef_jacobian(f, x);
    const auto e = jacobi_eigen(0.5 * (j + j.transpose()));
    EXPECT_LE(e.values.maxCoeff(), -f.eps + 1e-10);
  }
}

// Property over 1000 (params, state) pairs in several dimensions.
TEST(NegdefJacobian, NegativeDefinitenessProperty) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0, 5);
  int checked = 0;
  for (int dim : {1, 2, 4, 6}) {
    for (int trial = 0; trial < 250; ++trial) {
      auto f = random_field(dim, 1000 * dim + trial, {6}, 1e-4);
      f.jac_net.params *= 1 + 3 * (trial % 4);
      Eigen::VectorXd x(dim);
      for (int i = 0; i < dim; ++i) x[i] = n(rng);
      const Eigen::MatrixXd j = negdef_jacobian(f, x);
      ASSERT_LE(jacobi_eigen(0.5 * (j + j.transpose())).values.maxCoeff(), -f.eps + 1e-8);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 1000);
}

TEST(NegdefJacobian, NonFiniteOutputIsAnError) {
  auto f = random_field(2, 1);
  f.jac_net.params[0] = std::nan("");
  EXPECT_THROW(negdef_jacobian(f, Eigen::Vector2d(1, 1)), NumericError);
}

TEST(Velocity, BasePointGivesXdot0Exactly) {
  auto f = random_field(3, 2);
  for (const auto& q : {QuadratureSettings::fixed(1), QuadratureSettings::fixed(8),
                        QuadratureSettings::adaptive(1e-4, 1e-4)}) {
    const Eigen::VectorXd v = velocity(f, f.x0, q);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(v[i], f.xdot0[i]);
  }
}

TEST(Velocity, ConstantJacobianClosedForm) {
  Eigen::Matrix2d jt;
  jt << 0.7, -0.2, 1.1, 0.4;
  auto f = constant_field(jt, 0.01);
  f.x0 = Eigen::Vector2d(0.3, -0.4);
  f.xdot0 = Eigen::Vector2d(1.5, 2.5);
  const Eigen::Matrix2d a = -(jt.transpose() * jt + 0.01 * Eigen::Matrix2d::Identity());
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 4);
  for (int k = 0; k < 20; ++k) {
    const Eigen::Vector2d x(n(rng), n(rng));
    const Eigen::Vector2d expected = f.xdot0 + a * (x - f.x0);
    EXPECT_LT((velocity(f, x, QuadratureSettings::fixed(1)) - expected).norm(), 1e-12);
    EXPECT_LT((velocity(f, x, QuadratureSettings::adaptive(1e-6, 1e-8)) - expected).norm(), 1e-10);
  }
}

TEST(Velocity, BatchMatchesSingle) {
  auto f = random_field(2, 4);
  const Eigen::MatrixXd x = 3 * Eigen::MatrixXd::Random(2, 700);  // spans more than one chunk
  const Eigen::MatrixXd vb = velocity_batch(f, x, QuadratureSettings::fixed(8));
  for (Eigen::Index c = 0; c < x.cols(); c += 37) {
    EXPECT_LT((vb.col(c) - velocity(f, x.col(c), QuadratureSettings::fixed(8))).norm(), 1e-13);
  }
}

TEST(Velocity, FixedAndAdaptiveQuadratureAgree) {
  auto f = random_field(3, 5);
  for (int k = 0; k < 10; ++k) {
    const Eigen::VectorXd x = 2 * Eigen::VectorXd::Random(3);
    const Eigen::VectorXd a = velocity(f, x, QuadratureSettings::fixed(64));
    const Eigen::VectorXd b = velocity(f, x, QuadratureSettings::adaptive(1e-10, 1e-10));
    EXPECT_LT((a - b).norm(), 1e-8 * (1 + a.norm()));
  }
}

// In one dimension the line integral is the fundamental theorem of calculus,
// so f' = Jhat exactly (up to quadrature error).
TEST(Velocity, OneDimensionalDerivativeIsJhat) {
  auto f = random_field(1, 6);
  const auto q = QuadratureSettings::fixed(32);
  for (int k = 0; k < 20; ++k) {
    const Eigen::VectorXd x = 3 * Eigen::VectorXd::Random(1);
    const Eigen::MatrixXd fd = fd_jacobian([&](const Eigen::VectorXd& y) { return velocity(f, y, q); }, x);
    EXPECT_LT(relative_error(fd, negdef_jacobian(f, x)), 1e-6);
  }
}

// Any state-independent Jhat is the Jacobian of its own line integral.
TEST(Velocity, ConstantJhatIsTheVelocityJacobian) {
  Eigen::Matrix3d jt = Eigen::Matrix3d::Random();
  auto f = constant_field(jt, 0.2);
  for (int k = 0; k < 10; ++k) {
    const Eigen::VectorXd x = 4 * Eigen::VectorXd::Random(3);
    const Eigen::MatrixXd fd = fd_jacobian(
        [&](const Eigen::VectorXd& y) { return velocity(f, y, QuadratureSettings::fixed(2)); }, x);
    EXPECT_LT(relative_error(fd, negdef_jacobian(f, x)), 1e-8);
  }
}

// Differentiating under the integral sign:
//   df/dx e_k = int_0^1 Jhat(c) e_k + t (d_k Jhat)(c) (x - x0) dt.
// The second term vanishes only when Jhat is curl-free, so in D >= 2 the
// velocity Jacobian generally differs from Jhat(x).
TEST(Velocity, JacobianIncludesPathDerivativeTerm) {
  auto f = random_field(2, 7);
  const int s = 64;
  for (int k = 0; k < 5; ++k) {
    const Eigen::VectorXd x = 2 * Eigen::VectorXd::Random(2);
    const Eigen::VectorXd v = x - f.x0;
    Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(2, 2);
    for (int j = 0; j <= 2 * s; ++j) {
      const double t = j / (2.0 * s);
      const double w = (j == 0 || j == 2 * s) ? 1.0 / (6 * s) : (j % 2 ? 4.0 / (6 * s) : 2.0 / (6 * s));
      const Eigen::VectorXd c = f.x0 + t * v;
      const double h = 1e-6;
      for (int col = 0; col < 2; ++col) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(2);
        e[col] = h;
        const Eigen::MatrixXd dj = (negdef_jacobian(f, c + e) - negdef_jacobian(f, c - e)) / (2 * h);
        expected.col(col) += w * (negdef_jacobian(f, c).col(col) + t * dj * v);
      }
    }
    const Eigen::MatrixXd fd = fd_jacobian(
        [&](const Eigen::VectorXd& y) { return velocity(f, y, QuadratureSettings::fixed(s)); }, x);
    EXPECT_LT(relative_error(fd, expected), 1e-6);
  }
}

TEST(Velocity, DimensionMismatchThrows) {
  auto f = random_field(2, 8);
  EXPECT_THROW(velocity(f, Eigen::VectorXd::Zero(3)), std::invalid_argument);
  EXPECT_THROW(negdef_jacobian(f, Eigen::VectorXd::Zero(1)), std::invalid_argument);
}

TEST(Rollout, ZeroHorizonReturnsStart) {
  auto f = random_field(2, 9);
  RolloutSettings s;
  s.horizon = 0;
  const auto r = rollout(f, Eigen::Vector2d(1, 2), s);
  ASSERT_TRUE(r.ok);
  ASSERT_EQ(r.trajectory.size(), 1);
  EXPECT_EQ(r.trajectory.states.row(0), Eigen::RowVector2d(1, 2));
}

TEST(Rollout, LinearDecayMatchesExponential) {
  // J_theta = 0 and eps = 1 give Jhat = -1 everywhere.
  auto f = constant_field(Eigen::MatrixXd::Zero(1, 1), 1.0);
  f.quad = QuadratureSettings::fixed(1);
  RolloutSettings s;
  s.dt = 0.01;
  s.horizon = 500;
  const auto r = rollout(f, Eigen::VectorXd::Ones(1), s);
  ASSERT_TRUE(r.ok);
  ASSERT_EQ(r.trajectory.size(), 501);
  for (Eigen::Index k = 0; k < r.trajectory.size(); ++k) {
    EXPECT_NEAR(r.trajectory.states(k, 0), std::exp(-0.01 * k), 1e-6);
  }
}

TEST(Rollout, NearbyStartsEndCloserTogether) {
  RolloutSettings s;
  s.dt = 0.05;
  s.horizon = 100;  // T = 5
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto f = random_field(2, 100 + seed, {16, 16}, 0.1);
    f.quad = QuadratureSettings::fixed(8);
    const Eigen::Vector2d a = 2 * Eigen::Vector2d::Random();
    const Eigen::Vector2d b = a + Eigen::Vector2d(0.07, -0.07);
    const auto ra = rollout(f, a, s);
    const auto rb = rollout(f, b, s);
    ASSERT_TRUE(ra.ok && rb.ok);
    const double start_gap = (a - b).norm();
    const double end_gap = (ra.trajectory.states.bottomRows(1) - rb.trajectory.states.bottomRows(1)).norm();
    EXPECT_LT(end_gap, start_gap) << "seed " << seed;
  }
}

TEST(Rollout, NonFiniteStateTruncates) {
  int calls = 0;
  const VelocityFn f = [&](const Eigen::VectorXd& x) {
    ++calls;
    return Eigen::VectorXd(x.size() == 1 && x[0] > 1.5 ? Eigen::VectorXd::Constant(1, std::nan(""))
                                                        : Eigen::VectorXd::Ones(1));
  };
  RolloutSettings s;
  s.dt = 0.25;
  s.horizon = 10;
  s.method = RolloutMethod::euler;
  s.max_halvings = 0;
  const auto r = rollout(f, Eigen::VectorXd::Zero(1), s);
  EXPECT_FALSE(r.ok);
  EXPECT_FALSE(r.error.empty());
  EXPECT_EQ(r.trajectory.size(), 8);  // 0, 0.25, ..., 1.75
  EXPECT_TRUE(r.trajectory.states.allFinite());
}

TEST(Rollout, InadmissibleStepIsRetriedWithHalvedSubsteps) {
  const VelocityFn f = [](const Eigen::VectorXd& x) { return Eigen::VectorXd(-x); };
  RolloutSettings s;
  s.dt = 1.5;
  s.horizon = 1;
  s.method = RolloutMethod::euler;
  const auto r = rollout(f, Eigen::VectorXd::Ones(1), s,
                         [](const Eigen::VectorXd& x) { return x[0] >= 0; });
  ASSERT_TRUE(r.ok);
  EXPECT_DOUBLE_EQ(r.trajectory.states(1, 0), 0.0625);  // two Euler steps of 0.75

  s.max_halvings = 0;
  const auto r2 = rollout(f, Eigen::VectorXd::Ones(1), s,
                          [](const Eigen::VectorXd& x) { return x[0] >= 0; });
  EXPECT_FALSE(r2.ok);
  EXPECT_EQ(r2.trajectory.size(), 1);
}

TEST(JacLoss, ExactPredictionIsZero) {
  auto f = random_field(2, 11);
  f.quad = QuadratureSettings::fixed(8);
  const Eigen::Vector2d z(0.4, -1.3);
  const double dt = 0.05;
  EXPECT_NEAR(jac_loss(f, z, z + dt * velocity(f, z), dt), 0, 1e-28);
}

TEST(JacLoss, ZeroFieldGivesSquaredDisplacement) {
  auto f = constant_field(Eigen::MatrixXd::Zero(2, 2), 0.01);
  f.mode = JacobianMode::unconstrained;
  f.xdot0.setZero();
  const Eigen::Vector2d a(1, 2), b(4, -2);
  EXPECT_DOUBLE_EQ(jac_loss(f, a, b, 0.1), 25.0);
}

TEST(JacLoss, TracedValueMatchesPlainEvaluation) {
  auto f = random_field(3, 12);
  const Eigen::MatrixXd a = Eigen::MatrixXd::Random(3, 9), b = Eigen::MatrixXd::Random(3, 9);
  ad::Tape tape;
  const double traced = trace_jac_loss(tape, f, a, b, 0.1, 8).value()(0, 0);
  double plain = 0;
  for (int c = 0; c < 9; ++c) {
    plain += (b.col(c) - a.col(c) - 0.1 * velocity(f, a.col(c), QuadratureSettings::fixed(8))).squaredNorm();
  }
  EXPECT_NEAR(traced, plain / 9, 1e-13);
  EXPECT_NEAR(mean_jac_loss(f, a, b, 0.1, 8), plain / 9, 1e-13);
}

TEST(JacLoss, GradientMatchesFiniteDifferences) {
  for (JacobianMode mode : {JacobianMode::negdef, JacobianMode::unconstrained}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto f = random_field(2, 20 + seed, {6, 6});
      f.mode = mode;
      f.input_scale = Eigen::Vector2d(0.5, 2.0);
      const Eigen::MatrixXd a = 2 * Eigen::MatrixXd::Random(2, 6);
      const Eigen::MatrixXd b = a + 0.3 * Eigen::MatrixXd::Random(2, 6);
      ad::Tape tape;
      ad::Var loss = trace_jac_loss(tape, f, a, b, 0.2, 8);
      tape.backward(loss);
      const Eigen::VectorXd g = tape.parameter_gradient(f.param_count());
      const Eigen::VectorXd fd = fd_gradient(
          [&](const Eigen::VectorXd& p) {
            ContractiveField c = f;
            c.set_params(p);
            return mean_jac_loss(c, a, b, 0.2, 8);
          },
          f.params());
      EXPECT_LT(relative_error(g, fd), 1e-4) << "seed " << seed;
      EXPECT_LE(tolerance_ratio(g, fd, 1e-4, 1e-8), 1.0) << "seed " << seed;
    }
  }
}

TEST(TrainField, FitsLinearSystem) {
  // Samples of x' = -A x with A symmetric positive definite.
  Eigen::Matrix2d a;
  a << 1.0, 0.3, 0.3, 0.6;
  const double dt = 0.05;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1.5);
  Eigen::MatrixXd z(2, 300), zn(2, 300);
  for (int c = 0; c < 300; ++c) {
    z.col(c) = Eigen::Vector2d(n(rng), n(rng));
    zn.col(c) = z.col(c) - dt * a * z.col(c);
  }
  auto f = ContractiveField::create(2, {16, 16}, Activation::tanh, 1e-3, rng);
  f.x0 = z.rowwise().mean();
  f.xdot0 = ((zn - z) / dt).rowwise().mean();
  const double before = mean_jac_loss(f, z, zn, dt, 8);
  FieldTrainSettings s;
  s.epochs = 150;
  s.lr = 5e-3;
  s.batch_size = 64;
  std::vector<double> seen;
  s.on_epoch = [&](int, double loss) { seen.push_back(loss); };
  const auto r = train_field(f, z, zn, dt, s);
  EXPECT_EQ(r.loss_history.size(), 150u);
  EXPECT_EQ(seen, r.loss_history);
  EXPECT_LT(r.final_loss, 0.02 * before);
}

TEST(TrainField, IsDeterministicGivenSeed) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd z = Eigen::MatrixXd::Random(2, 50);
  const Eigen::MatrixXd zn = 0.9 * z;
  auto f = ContractiveField::create(2, {8}, Activation::softplus, 1e-3, rng);
  auto g = f;
  FieldTrainSettings s;
  s.epochs = 5;
  s.batch_size = 16;
  s.seed = 77;
  train_field(f, z, zn, 0.1, s);
  train_field(g, z, zn, 0.1, s);
  EXPECT_EQ(f.params(), g.params());
}

TEST(TrainField, DivergenceReportsEpoch) {
  std::mt19937_64 rng(3);
  Eigen::MatrixXd z = Eigen::MatrixXd::Random(2, 10);
  Eigen::MatrixXd zn = z;
  zn(0, 3) = std::numeric_limits<double>::infinity();
  auto f = ContractiveField::create(2, {4}, Activation::tanh, 1e-3, rng);
  FieldTrainSettings s;
  s.epochs = 3;
  try {
    train_field(f, z, zn, 0.1, s);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos);
  }
}

TEST(ContractiveField, JsonRoundTripIsExact) {
  auto f = random_field(3, 13);
  f.quad = QuadratureSettings::fixed(5);
  f.mode = JacobianMode::unconstrained;
  f.input_scale = Eigen::Vector3d(0.1, 2, 3);
  const auto back = nlohmann::json::parse(nlohmann::json(f).dump()).get<ContractiveField>();
  EXPECT_EQ(back.params(), f.params());
  EXPECT_EQ(back.x0, f.x0);
  EXPECT_EQ(back.input_scale, f.input_scale);
  EXPECT_EQ(back.eps, f.eps);
  EXPECT_EQ(back.mode, f.mode);
  EXPECT_EQ(back.quad.steps, 5);
  const Eigen::Vector3d x(0.3, 0.2, -0.9);
  EXPECT_EQ(velocity(back, x), velocity(f, x));
}

TEST(ContractiveField, ValidationErrors) {
  auto f = random_field(2, 14);
  f.eps = 0;
  EXPECT_THROW(f.validate(), ConfigError);
  f = random_field(2, 14);
  f.x0 = Eigen::VectorXd::Zero(3);
  EXPECT_THROW(f.validate(), ConfigError);
  EXPECT_THROW(QuadratureSettings::fixed(0).validate(), ConfigError);
  auto j = nlohmann::json(random_field(2, 15));
  j["quad"]["method"] = "simpson";
  EXPECT_THROW(j.get<ContractiveField>(), ConfigError);
}

}  // namespace
}  // namespace ncds
