#pragma once

#include "ncds/autodiff.hpp"
#include "ncds/feedforward.hpp"
#include "ncds/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace ncds {

enum class QuadratureMethod { rk4_fixed, dopri5_adaptive };

// How the line integral over t in [0, 1] is evaluated. rk4_fixed with `steps`
// intervals is composite Simpson (RK4 on an integrand independent of the state).
struct QuadratureSettings {
  QuadratureMethod method = QuadratureMethod::dopri5_adaptive;
  int steps = 8;
  double rtol = 1e-4;
  double atol = 1e-4;

  static QuadratureSettings fixed(int steps);
  static QuadratureSettings adaptive(double rtol, double atol);
  void validate() const;
};

// negdef integrates -(J^T J + eps I); unconstrained integrates the raw net
// output J and exists only as a baseline for comparisons.
enum class JacobianMode { negdef, unconstrained };

struct ContractiveField {
  int dim = 0;
  double eps = 1e-4;
  Eigen::VectorXd x0;
  Eigen::VectorXd xdot0;
  // The net sees (x - x0) / input_scale elementwise.
  Eigen::VectorXd input_scale;
  FeedforwardNet jac_net;  // R^D -> R^(D*D), row-major D x D
  QuadratureSettings quad;
  JacobianMode mode = JacobianMode::negdef;

  static ContractiveField create(int dim, const std::vector<int>& hidden, Activation activation,
                                 double eps, std::mt19937_64& rng);

  // Trainable parameters: jac_net.params followed by xdot0.
  Eigen::Index param_count() const { return jac_net.params.size() + dim; }
  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& p);

  void validate() const;
};

void to_json(nlohmann::json& j, const QuadratureSettings& q);
void from_json(const nlohmann::json& j, QuadratureSettings& q);
void to_json(nlohmann::json& j, const ContractiveField& f);
void from_json(const nlohmann::json& j, ContractiveField& f);

// J_theta(x), the raw network output as a D x D matrix.
Eigen::MatrixXd net_jacobian(const ContractiveField& field, const Eigen::VectorXd& x);
// -(J_theta^T J_theta + eps I).
Eigen::MatrixXd negdef_jacobian(const ContractiveField& field, const Eigen::VectorXd& x);
// The matrix the line integral actually integrates: negdef_jacobian, or the raw
// net output in unconstrained mode.
Eigen::MatrixXd integrand_jacobian(const ContractiveField& field, const Eigen::VectorXd& x);

// xdot0 + integral over t in [0,1] of Jhat(x0 + t (x - x0)) (x - x0) dt.
Eigen::VectorXd velocity(const ContractiveField& field, const Eigen::VectorXd& x);
Eigen::VectorXd velocity(const ContractiveField& field, const Eigen::VectorXd& x,
                         const QuadratureSettings& quad);
// Columns are states.
Eigen::MatrixXd velocity_batch(const ContractiveField& field, const Eigen::MatrixXd& x,
                               const QuadratureSettings& quad);

enum class RolloutMethod { euler, rk4 };

struct RolloutSettings {
  double dt = 0.01;
  int horizon = 100;
  RolloutMethod method = RolloutMethod::rk4;
  // Retries for a step that lands on an inadmissible state; each retry covers
  // the same interval with twice as many substeps.
  int max_halvings = 5;

  void validate() const;
};

struct RolloutResult {
  Trajectory trajectory;
  bool ok = true;
  std::string error;
};

using VelocityFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using StatePredicate = std::function<bool(const Eigen::VectorXd&)>;

// Steps x' = f(x). A non-finite state or an exception from f truncates the
// trajectory and sets ok = false. With `admissible`, a step that leaves the
// admissible set is retried with halved substeps before giving up.
RolloutResult rollout(const VelocityFn& f, const Eigen::VectorXd& x_init,
                      const RolloutSettings& settings, const StatePredicate& admissible = {});
RolloutResult rollout(const ContractiveField& field, const Eigen::VectorXd& x_init,
                      const RolloutSettings& settings);

// ||z_next - (z_t + dt f(z_t))||^2, using the field's own quadrature.
double jac_loss(const ContractiveField& field, const Eigen::VectorXd& z_t,
                const Eigen::VectorXd& z_next, double dt);

// Records f on the tape for a batch of states (columns of z) with fixed-step
// quadrature. Parameter gradients land at param_offset + k for the k-th entry
// of field.params().
ad::Var trace_velocity(ad::Tape& tape, const ContractiveField& field, const Eigen::MatrixXd& z,
                       int quad_steps, Eigen::Index param_offset = 0);
// Mean over columns of ||z_next - (z_t + dt f(z_t))||^2.
ad::Var trace_jac_loss(ad::Tape& tape, const ContractiveField& field, const Eigen::MatrixXd& z_t,
                       const Eigen::MatrixXd& z_next, double dt, int quad_steps,
                       Eigen::Index param_offset = 0);

struct FieldTrainSettings {
  int epochs = 1000;
  double lr = 1e-3;
  int batch_size = 256;
  int quad_steps = 8;
  // The learning rate follows a cosine from lr down to lr * lr_final_fraction.
  double lr_final_fraction = 0.05;
  std::uint64_t seed = 0;
  // Called after every epoch with the mean minibatch loss.
  std::function<void(int epoch, double loss)> on_epoch;
};

struct FieldTrainResult {
  std::vector<double> loss_history;
  double final_loss = 0;  // mean L_Jac over all pairs after training
};

// Fits the field to pairs (z_t, z_next) given as columns. Throws NumericError
// naming the epoch if the loss or its gradient stops being finite.
FieldTrainResult train_field(ContractiveField& field, const Eigen::MatrixXd& z_t,
                             const Eigen::MatrixXd& z_next, double dt,
                             const FieldTrainSettings& settings);

// Mean L_Jac over all pairs, fixed-step quadrature.
double mean_jac_loss(const ContractiveField& field, const Eigen::MatrixXd& z_t,
                     const Eigen::MatrixXd& z_next, double dt, int quad_steps);

}  // namespace ncds
