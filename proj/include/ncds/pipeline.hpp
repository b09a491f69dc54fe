#pragma once

#include "ncds/contraction.hpp"
#include "ncds/latent.hpp"
#include "ncds/metrics.hpp"
#include "ncds/obstacle.hpp"
#include "ncds/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ncds {

enum class PoseLayout { euclidean, pose };

struct TrainConfig {
  int latent_dim = 0;  // 0 trains the field directly in data space
  double eps = 1e-4;
  int epochs_vae = 1000;
  int epochs_jac = 1000;
  double lr_vae = 1e-3;
  double lr_jac = 1e-3;
  int batch_size = 256;
  Activation activation = Activation::tanh;
  QuadratureSettings quad;  // used at inference
  int train_quad_steps = 8;
  std::uint64_t seed = 0;
  int k_trim = 3;
  std::vector<int> jac_hidden{500, 500};
  TransformKind flow_kind = TransformKind::rq_spline;
  int flow_layers = 3;
  PoseLayout layout = PoseLayout::euclidean;
  bool baseline = false;  // train the unconstrained field instead

  // [100, 100] hidden units, 300 epochs, field lr 3e-3 with batch 64.
  static TrainConfig test_preset();

  void validate() const;
  // Also checks latent_dim against the data dimension.
  void validate(int data_dim) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
// Missing keys keep their defaults; unknown enum values raise ConfigError.
void from_json(const nlohmann::json& j, TrainConfig& c);
TrainConfig load_train_config(const std::string& path);

struct TrainLog {
  std::vector<double> elbo_history;
  std::vector<double> jac_loss_history;
  double final_jac_loss = 0;
  // L_Jac of the constant field equal to the mean velocity of the training pairs.
  double mean_velocity_loss = 0;
};

void to_json(nlohmann::json& j, const TrainLog& l);
void from_json(const nlohmann::json& j, TrainLog& l);

struct NcdsModel {
  std::optional<InjectiveModel> vae;
  ContractiveField field;
  PoseLayout layout = PoseLayout::euclidean;
  TrainConfig config;
  TrainLog log;

  int data_dim() const { return vae ? vae->big_d : field.dim; }
  void validate() const;
};

void to_json(nlohmann::json& j, const NcdsModel& m);
void from_json(const nlohmann::json& j, NcdsModel& m);
NcdsModel load_model(const std::string& path);
void save_model(const NcdsModel& model, const std::string& path);

struct TrainCallbacks {
  std::function<void(int epoch, double elbo)> on_vae_epoch;
  std::function<void(int epoch, double loss)> on_jac_epoch;
};

// FNV-1a over the raw bytes of the parameter vector.
std::uint64_t params_hash(const Eigen::VectorXd& p);

// Two stages: the VAE (when latent_dim > 0), then the contractive field on
// the encoded demos with the VAE frozen. `demos` must already be
// preprocessed and share one dt. Throws ConfigError on invalid config or
// data, NumericError naming the epoch on divergence.
NcdsModel train(const TrainConfig& config, const Dataset& demos, const TrainCallbacks& callbacks = {});

// Stage two only, reusing a trained VAE (or none). Used to compare field
// variants on identical latent data.
NcdsModel train_field_stage(const TrainConfig& config, const Dataset& demos,
                            std::optional<InjectiveModel> vae, const TrainCallbacks& callbacks = {});

struct PoseState {
  Eigen::VectorXd position;
  std::optional<Eigen::Matrix3d> rotation;  // required with the pose layout
};

// Data-space coordinates of a pose state; the rotation is log-mapped.
Eigen::VectorXd to_coordinates(const NcdsModel& model, const PoseState& state);

// xdot = J_mu(z) f(z) with z = encode_mean(x), or f(x) without a VAE; the
// obstacle, if any, modulates the result last. With the pose layout the
// obstacle acts on the position block only.
Eigen::VectorXd control_velocity(const NcdsModel& model, const Eigen::VectorXd& x,
                                 const std::optional<Obstacle>& obstacle = std::nullopt);
Eigen::VectorXd control_step(const NcdsModel& model, const PoseState& state,
                             const std::optional<Obstacle>& obstacle = std::nullopt);

// Integrates control_velocity in data space. With an obstacle, steps that end
// inside it are retried with smaller substeps.
RolloutResult rollout(const NcdsModel& model, const Eigen::VectorXd& start, const RolloutSettings& settings,
                      const std::optional<Obstacle>& obstacle = std::nullopt);

RolloutFn rollout_fn(const NcdsModel& model, RolloutMethod method = RolloutMethod::rk4,
                     const std::optional<Obstacle>& obstacle = std::nullopt);

// Mean wall-clock milliseconds of one control_velocity call at x, over n calls
// after 10 warm-up calls.
double benchmark_step_time(const NcdsModel& model, const Eigen::VectorXd& x, int n = 100);

struct FieldGrid {
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  int n = 2;  // points per axis

  void validate() const;
};

// Parses "xmin,xmax,ymin,ymax,n".
FieldGrid parse_field_grid(const std::string& text);

// Rows (x1, x2, v1, v2) over an n x n grid of a 2-D field, x1 varying fastest.
Eigen::MatrixXd sample_field(const ContractiveField& field, const FieldGrid& grid);
void save_field_csv(const Eigen::MatrixXd& rows, const std::string& path);

std::string to_string(PoseLayout layout);
PoseLayout pose_layout_from_string(const std::string& name);

}  // namespace ncds
