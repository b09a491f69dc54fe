#include "ncds/data.hpp"
#include "ncds/error.hpp"
#include "ncds/liegroup.hpp"
#include "ncds/pipeline.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <unistd.h>

namespace ncds {
namespace {

Dataset small_demos(ShapeKind kind, int n_points = 60, std::uint64_t seed = 0) {
  ShapeSettings s;
  s.n_demos = 3;
  s.n_points = n_points;
  s.dt = 0.05;
  s.seed = seed;
  return preprocess(synth_shape(kind, s), 3);
}

Dataset small_4d() {
  ShapeSettings s;
  s.n_demos = 3;
  s.n_points = 50;
  s.dt = 0.05;
  return preprocess(concat_datasets({synth_shape(ShapeKind::line, s), synth_shape(ShapeKind::sine, s)}), 3);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.jac_hidden = {12, 12};
  c.epochs_jac = 30;
  c.epochs_vae = 15;
  c.batch_size = 32;
  c.lr_jac = 5e-3;
  c.lr_vae = 3e-3;
  c.train_quad_steps = 4;
  c.seed = 7;
  return c;
}

std::string temp_path(const std::string& name) {
  return "/tmp/ncds_pipeline_" + std::to_string(::getpid()) + "_" + name;
}

TEST(TrainConfig, DefaultsAndValidation) {
  const TrainConfig c;
  EXPECT_EQ(c.epochs_vae, 1000);
  EXPECT_EQ(c.epochs_jac, 1000);
  EXPECT_EQ(c.lr_vae, 1e-3);
  EXPECT_EQ(c.lr_jac, 1e-3);
  EXPECT_EQ(c.jac_hidden, (std::vector<int>{500, 500}));
  EXPECT_EQ(TrainConfig::test_preset().jac_hidden, (std::vector<int>{100, 100}));
  EXPECT_EQ(TrainConfig::test_preset().epochs_jac, 300);

  TrainConfig bad = c;
  bad.lr_jac = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.latent_dim = 2;
  EXPECT_THROW(bad.validate(2), ConfigError);
  EXPECT_NO_THROW(bad.validate(3));
}

TEST(TrainConfig, JsonKeepsDefaultsForMissingKeys) {
  const auto c = nlohmann::json{{"latent_dim", 2}, {"jac_hidden", {50}}}.get<TrainConfig>();
  EXPECT_EQ(c.latent_dim, 2);
  EXPECT_EQ(c.jac_hidden, std::vector<int>{50});
  EXPECT_EQ(c.eps, TrainConfig{}.eps);
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<TrainConfig>().jac_hidden, c.jac_hidden);
  EXPECT_THROW((nlohmann::json{{"activation", "relu6"}}.get<TrainConfig>()), ConfigError);
  EXPECT_THROW((nlohmann::json{{"eps", "small"}}.get<TrainConfig>()), ConfigError);
  EXPECT_THROW((nlohmann::json{{"lr_vae", -1}}.get<TrainConfig>()), ConfigError);
}

TEST(Train, RejectsLatentDimAtLeastDataDim) {
  auto c = tiny_config();
  c.latent_dim = 2;
  EXPECT_THROW(train(c, small_demos(ShapeKind::line)), ConfigError);
  EXPECT_THROW(train(c, {}), ConfigError);
}

TEST(Train, InputSpaceFitBeatsMeanVelocity) {
  const auto demos = small_demos(ShapeKind::line);
  const auto m = train(tiny_config(), demos);
  EXPECT_FALSE(m.vae);
  EXPECT_EQ(m.field.dim, 2);
  EXPECT_EQ(m.log.jac_loss_history.size(), 30u);
  EXPECT_TRUE(std::isfinite(m.log.final_jac_loss));
  EXPECT_LT(m.log.final_jac_loss, m.log.mean_velocity_loss);
}

TEST(Train, SameSeedGivesIdenticalModels) {
  const auto demos = small_demos(ShapeKind::angle);
  const auto a = train(tiny_config(), demos);
  const auto b = train(tiny_config(), demos);
  EXPECT_EQ(nlohmann::json(a).dump(), nlohmann::json(b).dump());
}

TEST(Train, LatentModelTrainsAndKeepsVaeFrozen) {
  auto c = tiny_config();
  c.latent_dim = 2;
  const auto demos = small_4d();
  const auto m = train(c, demos);
  ASSERT_TRUE(m.vae);
  EXPECT_EQ(m.field.dim, 2);
  EXPECT_EQ(m.log.elbo_history.size(), 15u);

  const Eigen::VectorXd before = m.vae->params();
  const auto again = train_field_stage(c, demos, m.vae);
  EXPECT_EQ(params_hash(again.vae->params()), params_hash(before));
  EXPECT_EQ(again.vae->params(), before);
}

TEST(ParamsHash, DetectsSingleBitChange) {
  Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(50, -1, 1);
  const auto h = params_hash(p);
  EXPECT_EQ(params_hash(p), h);
  p[17] = std::nextafter(p[17], 2.0);
  EXPECT_NE(params_hash(p), h);
}

TEST(ControlStep, WithoutVaeIsTheFieldVelocity) {
  const auto m = train(tiny_config(), small_demos(ShapeKind::sine));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 10);
  for (int i = 0; i < 20; ++i) {
    const Eigen::Vector2d x(n(rng), n(rng));
    EXPECT_EQ(control_step(m, {x, std::nullopt}), velocity(m.field, x));
  }
}

TEST(ControlStep, LatentVelocityBoundedByParts) {
  auto c = tiny_config();
  c.latent_dim = 2;
  const auto demos = small_4d();
  const auto m = train(c, demos);
  Eigen::VectorXd target = Eigen::VectorXd::Zero(4);
  for (const auto& d : demos) target += d.states.bottomRows(1).transpose();
  target /= static_cast<double>(demos.size());
  const Eigen::VectorXd z = encode_mean(*m.vae, target);
  const Eigen::VectorXd f = velocity(m.field, z);
  const double bound = decoder_jacobian(*m.vae, z).operatorNorm() * f.norm();
  EXPECT_LE(control_velocity(m, target).norm(), bound * (1 + 1e-12) + 1e-15);
}

TEST(ControlStep, DistantObstacleLeavesVelocityUnchanged) {
  const auto m = train(tiny_config(), small_demos(ShapeKind::sine));
  Obstacle far;
  far.center = Eigen::Vector2d(1e6, 1e6);
  far.semi_axes = Eigen::Vector2d(1, 1);
  for (const Eigen::Vector2d x : {Eigen::Vector2d(-30, 4), Eigen::Vector2d(-5, -2), Eigen::Vector2d(1, 1)}) {
    const Eigen::VectorXd plain = control_velocity(m, x);
    EXPECT_LE((control_velocity(m, x, far) - plain).norm(), 1e-9 * std::max(1.0, plain.norm()));
  }
}

TEST(ControlStep, ObstaclePenetrationIsAnError) {
  const auto m = train(tiny_config(), small_demos(ShapeKind::sine));
  Obstacle ob;
  ob.center = Eigen::Vector2d(-10, 0);
  ob.semi_axes = Eigen::Vector2d(3, 3);
  EXPECT_THROW(control_velocity(m, Eigen::Vector2d(-10.5, 0.5), ob), NumericError);
  EXPECT_THROW(control_velocity(m, Eigen::Vector3d::Zero()), std::invalid_argument);
}

TEST(ControlStep, PoseLayoutUsesLogMappedRotation) {
  ShapeSettings s;
  s.n_demos = 3;
  s.n_points = 40;
  s.dt = 0.05;
  const auto demos = preprocess(synth_pose_dataset(ShapeKind::line, ShapeKind::sine, s), 3);
  auto c = tiny_config();
  c.latent_dim = 2;
  c.layout = PoseLayout::pose;
  c.epochs_vae = 5;
  c.epochs_jac = 5;
  const auto m = train(c, demos);
  ASSERT_EQ(m.layout, PoseLayout::pose);

  const Eigen::Vector3d r(0.3, -0.2, 0.5);
  const Eigen::Vector3d p(-10, 5, 0);
  Eigen::VectorXd x(6);
  x << p, r;
  const Eigen::VectorXd v = control_step(m, {p, exp_map(r)});
  EXPECT_LT((v - control_velocity(m, x)).norm(), 1e-9 * std::max(1.0, v.norm()));

  EXPECT_THROW(control_step(m, {p, std::nullopt}), std::invalid_argument);
  const Eigen::Matrix3d half_turn = exp_map(Eigen::Vector3d(std::numbers::pi, 0, 0));
  EXPECT_THROW(control_step(m, {p, half_turn}), NumericError);
}

TEST(Serialization, RoundTripGivesIdenticalControlOutputs) {
  auto c = tiny_config();
  for (int d : {0, 2}) {
    c.latent_dim = d;
    const auto m = d == 0 ? train(c, small_demos(ShapeKind::jshape)) : train(c, small_4d());
    const std::string path = temp_path("model_" + std::to_string(d) + ".json");
    save_model(m, path);
    const auto back = load_model(path);
    std::remove(path.c_str());
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0, 8);
    for (int i = 0; i < 100; ++i) {
      Eigen::VectorXd x(m.data_dim());
      for (auto& v : x) v = n(rng);
      EXPECT_EQ(control_velocity(back, x), control_velocity(m, x));
    }
    EXPECT_EQ(nlohmann::json(back).dump(), nlohmann::json(m).dump());
  }
}

TEST(Serialization, MalformedModelIsConfigError) {
  const std::string path = temp_path("bad.json");
  {
    FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("{\"field\": 3}", f);
    std::fclose(f);
  }
  EXPECT_THROW(load_model(path), ConfigError);
  std::remove(path.c_str());
  EXPECT_THROW(load_model("/nonexistent/model.json"), ConfigError);
}

TEST(Rollout, ReachesNearTargetAndRespectsObstacle) {
  const auto demos = small_demos(ShapeKind::line, 80);
  auto c = tiny_config();
  c.epochs_jac = 80;
  const auto m = train(c, demos);
  RolloutSettings rs;
  rs.dt = 0.05;
  rs.horizon = 400;
  const auto r = rollout(m, demos[0].states.row(0).transpose(), rs);
  ASSERT_TRUE(r.ok) << r.error;
  const Eigen::VectorXd end = r.trajectory.states.bottomRows(1).transpose();
  EXPECT_LT((end - m.field.x0).norm(), 2.0);

  Obstacle ob;
  ob.center = 0.5 * demos[0].states.row(0).transpose();
  ob.semi_axes = Eigen::Vector2d(2, 2);
  const auto ro = rollout(m, demos[0].states.row(0).transpose(), rs, ob);
  for (Eigen::Index k = 0; k < ro.trajectory.size(); ++k) {
    EXPECT_GE(gamma(ob, ro.trajectory.states.row(k).transpose()), 1 - 1e-6);
  }
}

TEST(Benchmark, PositiveAndFinite) {
  const auto m = train(tiny_config(), small_demos(ShapeKind::line));
  const double ms = benchmark_step_time(m, Eigen::Vector2d(-20, 3), 20);
  EXPECT_GT(ms, 0);
  EXPECT_TRUE(std::isfinite(ms));
  EXPECT_THROW(benchmark_step_time(m, Eigen::Vector2d(-20, 3), 0), ConfigError);
}

}  // namespace
}  // namespace ncds
