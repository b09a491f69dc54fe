#include "ncds/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace ncds {
namespace {

Trajectory make(const Eigen::MatrixXd& states, double dt = 0.1) {
  Trajectory t;
  t.dt = dt;
  t.states = states;
  return t;
}

// Literal double loop over the printed formula.
double brute_force_dtwd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  auto dist = [](const Eigen::MatrixXd& p, int i, const Eigen::MatrixXd& q, int j) {
    double s = 0;
    for (int k = 0; k < p.cols(); ++k) s += (p(i, k) - q(j, k)) * (p(i, k) - q(j, k));
    return std::sqrt(s);
  };
  double first = 0, second = 0;
  for (int j = 0; j < b.rows(); ++j) {
    double m = std::numeric_limits<double>::infinity();
    for (int i = 0; i < a.rows(); ++i) m = std::min(m, dist(a, i, b, j));
    first += m;
  }
  for (int i = 0; i < a.rows(); ++i) {
    double m = std::numeric_limits<double>::infinity();
    for (int j = 0; j < b.rows(); ++j) m = std::min(m, dist(a, i, b, j));
    second += m;
  }
  return first + second;
}

TEST(Dtwd, Examples) {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Random(15, 2);
  EXPECT_EQ(dtwd(make(a), make(a)), 0.0);
  EXPECT_EQ(dtwd(make(Eigen::MatrixXd::Constant(1, 1, 0)), make(Eigen::MatrixXd::Constant(1, 1, 3))), 6.0);
}

TEST(Dtwd, MatchesBruteForceExactly) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> len(1, 20);
  for (int k = 0; k < 100; ++k) {
    const int dim = 1 + k % 4;
    const Eigen::MatrixXd a = 10 * Eigen::MatrixXd::Random(len(rng), dim);
    const Eigen::MatrixXd b = 10 * Eigen::MatrixXd::Random(len(rng), dim);
    EXPECT_EQ(dtwd(make(a), make(b)), brute_force_dtwd(a, b));
    EXPECT_EQ(dtwd(make(a), make(b)), dtwd(make(b), make(a)));
    EXPECT_GE(dtwd(make(a), make(b)), 0);
  }
}

TEST(Dtwd, IgnoresPointOrder) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd a = Eigen::MatrixXd::Random(30, 3);
  const Eigen::MatrixXd b = Eigen::MatrixXd::Random(25, 3);
  std::vector<int> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd shuffled(30, 3);
  for (int i = 0; i < 30; ++i) shuffled.row(i) = a.row(perm[i]);
  EXPECT_NEAR(dtwd(make(shuffled), make(b)), dtwd(make(a), make(b)), 1e-12);
}

TEST(Dtwd, ErrorPaths) {
  EXPECT_THROW(dtwd(make(Eigen::MatrixXd(0, 2)), make(Eigen::MatrixXd::Zero(2, 2))), std::invalid_argument);
  EXPECT_THROW(dtwd(make(Eigen::MatrixXd::Zero(2, 3)), make(Eigen::MatrixXd::Zero(2, 2))), std::invalid_argument);
}

TEST(AvgPairwiseDistance, Examples) {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Random(10, 2);
  EXPECT_EQ(avg_pairwise_distance_curve({make(a), make(a)}), Eigen::VectorXd::Zero(10));
  const auto c = avg_pairwise_distance_curve(
      {make(Eigen::MatrixXd::Zero(6, 1)), make(Eigen::MatrixXd::Ones(6, 1))});
  EXPECT_EQ(c, Eigen::VectorXd::Ones(6));
  // 1-D points 0, 1, 3: pair distances 1, 3, 2.
  const auto c3 = avg_pairwise_distance_curve({make(Eigen::MatrixXd::Zero(2, 1)),
                                               make(Eigen::MatrixXd::Ones(2, 1)),
                                               make(Eigen::MatrixXd::Constant(2, 1, 3))});
  EXPECT_DOUBLE_EQ(c3[0], 2.0);
}

TEST(AvgPairwiseDistance, ErrorPaths) {
  EXPECT_THROW(avg_pairwise_distance_curve({make(Eigen::MatrixXd::Zero(3, 1))}), std::invalid_argument);
  EXPECT_THROW(avg_pairwise_distance_curve({make(Eigen::MatrixXd::Zero(3, 1)), make(Eigen::MatrixXd::Zero(4, 1))}),
               std::invalid_argument);
  EXPECT_THROW(avg_pairwise_distance_curve({make(Eigen::MatrixXd::Zero(3, 1), 0.1),
                                            make(Eigen::MatrixXd::Zero(3, 1), 0.2)}),
               std::invalid_argument);
}

TEST(DtwdReport, PerfectRolloutsGiveZero) {
  Dataset demos;
  for (int k = 0; k < 4; ++k) demos.push_back(make(Eigen::MatrixXd::Random(12, 2), 0.05));
  int calls = 0;
  const RolloutFn replay = [&](const Eigen::VectorXd& start, int horizon, double dt) {
    ++calls;
    for (const auto& d : demos) {
      if (d.states.row(0).transpose() == start) {
        EXPECT_EQ(horizon, 11);
        EXPECT_EQ(dt, 0.05);
        return RolloutResult{d, true, ""};
      }
    }
    ADD_FAILURE() << "unexpected start";
    return RolloutResult{};
  };
  const auto r = dtwd_report(replay, demos);
  EXPECT_EQ(calls, 4);  // deterministic starts: one rollout per demo
  EXPECT_EQ(r.per_demo.size(), 4u);
  EXPECT_EQ(r.mean, 0);
  EXPECT_EQ(r.std, 0);
  EXPECT_EQ(r.failed, 0);
}

TEST(DtwdReport, JitteredStartsAndFailures) {
  Dataset demos{make(Eigen::MatrixXd::Zero(5, 1)), make(Eigen::MatrixXd::Ones(5, 1))};
  int calls = 0;
  const RolloutFn constant = [&](const Eigen::VectorXd& start, int horizon, double) {
    ++calls;
    RolloutResult r;
    r.trajectory = make(Eigen::MatrixXd::Constant(horizon + 1, 1, start[0]));
    r.ok = calls % 5 != 0;  // every fifth rollout fails
    if (!r.ok) r.error = "diverged";
    return r;
  };
  DtwdReportSettings s;
  s.n_rollouts = 5;
  s.start_sd = 0.1;
  const auto r = dtwd_report(constant, demos, s);
  EXPECT_EQ(calls, 10);
  EXPECT_EQ(r.failed, 2);
  EXPECT_EQ(r.warnings.size(), 2u);
  ASSERT_EQ(r.per_demo.size(), 2u);
  EXPECT_GT(r.mean, 0);
  const auto j = nlohmann::json(r);
  EXPECT_TRUE(j.contains("per_demo") && j.contains("mean") && j.contains("std"));
  EXPECT_NE(format_table(r).find("mean"), std::string::npos);
}

TEST(DtwdReport, PopulationStandardDeviation) {
  Dataset demos{make(Eigen::MatrixXd::Zero(1, 1)), make(Eigen::MatrixXd::Zero(1, 1))};
  int calls = 0;
  const RolloutFn offset = [&](const Eigen::VectorXd&, int, double) {
    const double shift = calls++ == 0 ? 1.0 : 3.0;
    return RolloutResult{make(Eigen::MatrixXd::Constant(1, 1, shift)), true, ""};
  };
  const auto r = dtwd_report(offset, demos);
  EXPECT_DOUBLE_EQ(r.mean, 4.0);  // per demo 2 and 6
  EXPECT_DOUBLE_EQ(r.std, 2.0);
}

}  // namespace
}  // namespace ncds
