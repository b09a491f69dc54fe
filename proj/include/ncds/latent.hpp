#pragma once

#include "ncds/autodiff.hpp"
#include "ncds/feedforward.hpp"
#include "ncds/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace ncds {

Eigen::VectorXd pad(const Eigen::VectorXd& z, Eigen::Index big_d);
Eigen::VectorXd unpad(const Eigen::VectorXd& v, Eigen::Index d);

enum class TransformKind { affine, rq_spline };

// Bijection of R^D that leaves one contiguous block of coordinates unchanged
// and transforms the other block conditioned on it. Layer parity picks the
// block: even layers pass [0, D/2) and transform the rest, odd layers the
// reverse.
struct CouplingLayer {
  int dim = 0;
  bool odd = false;
  TransformKind kind = TransformKind::rq_spline;
  int bins = 10;
  double bound = 10;
  FeedforwardNet conditioner;

  static CouplingLayer create(int dim, bool odd, TransformKind kind, const std::vector<int>& hidden,
                              int bins, double bound, std::mt19937_64& rng);

  int pass_start() const { return odd ? dim / 2 : 0; }
  int pass_count() const { return odd ? dim - dim / 2 : dim / 2; }
  int trans_start() const { return odd ? 0 : dim / 2; }
  int trans_count() const { return dim - pass_count(); }
  // Conditioner outputs per transformed coordinate.
  int params_per_dim() const { return kind == TransformKind::affine ? 2 : 3 * bins - 1; }

  // Columns are points. Throws NumericError if the spline inverse fails to
  // locate a bin (impossible for a valid monotone spline).
  ad::Var forward(ad::Tape& tape, const ad::Var& x, Eigen::Index param_offset) const;
  ad::Var inverse(ad::Tape& tape, const ad::Var& y, Eigen::Index param_offset) const;

  void validate() const;
};

// Elementwise rational-quadratic spline on [-bound, bound] with identity tails
// (exposed for tests). Each column of w, h holds `bins` unnormalised widths and
// heights, u holds bins - 1 unnormalised interior derivatives.
ad::Var rq_spline(const ad::Var& x, const ad::Var& w, const ad::Var& h, const ad::Var& u, double bound,
                  bool inverse);

// Fixed map applied after the last coupling layer.
enum class OutputLayout { euclidean, pose };

struct InjectiveModel {
  int d = 0;
  int big_d = 0;
  std::vector<CouplingLayer> layers;
  // x = shift + scale * y elementwise. With the pose layout the last three
  // coordinates instead go through first_cover_squash and shift/scale are
  // ignored there.
  OutputLayout layout = OutputLayout::euclidean;
  Eigen::VectorXd shift;
  Eigen::VectorXd scale;
  FeedforwardNet sigma_net;   // R^D -> R^d, input is the flow-space point
  Eigen::VectorXd lik_logvar;  // per data dimension, in flow-space units

  struct Options {
    TransformKind kind = TransformKind::rq_spline;
    int n_layers = 3;
    int bins = 10;
    double bound = 10;
    std::vector<int> conditioner_hidden{30, 30, 30};
    int sigma_hidden = 64;
    OutputLayout layout = OutputLayout::euclidean;
  };

  // Every coupling layer starts as the identity map.
  static InjectiveModel create(int d, int big_d, const Options& options, std::mt19937_64& rng);

  // Trainable parameters: conditioners in layer order, sigma_net, lik_logvar.
  Eigen::Index param_count() const;
  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& p);
  Eigen::Index sigma_offset() const;
  Eigen::Index logvar_offset() const;

  void validate() const;

  // Flow space <-> data space through the fixed output map.
  ad::Var output_map(const ad::Var& y) const;
  Eigen::MatrixXd inverse_output_map(const Eigen::MatrixXd& x) const;

  // Tape versions, columns are points.
  ad::Var decode(ad::Tape& tape, const ad::Var& z, Eigen::Index param_offset = 0) const;
  ad::Var encode_mean(ad::Tape& tape, const Eigen::MatrixXd& x, Eigen::Index param_offset = 0) const;
  // Softplus output plus 1e-6.
  ad::Var encode_sigma(ad::Tape& tape, const Eigen::MatrixXd& x, Eigen::Index param_offset = 0) const;
};

void to_json(nlohmann::json& j, const CouplingLayer& l);
void from_json(const nlohmann::json& j, CouplingLayer& l);
void to_json(nlohmann::json& j, const InjectiveModel& m);
void from_json(const nlohmann::json& j, InjectiveModel& m);

Eigen::VectorXd decode(const InjectiveModel& model, const Eigen::VectorXd& z);
Eigen::MatrixXd decode_batch(const InjectiveModel& model, const Eigen::MatrixXd& z);
Eigen::VectorXd encode_mean(const InjectiveModel& model, const Eigen::VectorXd& x);
Eigen::MatrixXd encode_mean_batch(const InjectiveModel& model, const Eigen::MatrixXd& x);
Eigen::VectorXd encode_sigma(const InjectiveModel& model, const Eigen::VectorXd& x);

// D x d Jacobian of decode at z, as the chain product of per-layer Jacobians.
Eigen::MatrixXd decoder_jacobian(const InjectiveModel& model, const Eigen::VectorXd& z);
Eigen::VectorXd push_velocity(const InjectiveModel& model, const Eigen::VectorXd& z,
                              const Eigen::VectorXd& zdot);

// Jacobian of one coupling layer at x.
Eigen::MatrixXd layer_jacobian(const CouplingLayer& layer, const Eigen::VectorXd& x);

struct ElboTerms {
  ad::Var elbo;        // mean over columns of recon - kl
  ad::Var recon;       // mean Gaussian log-likelihood
  ad::Var kl;          // mean KL to N(0, I)
};

// Single-sample reparameterised ELBO with z = mu + sigma * noise; noise is
// d x B and may be zero to disable sampling.
ElboTerms trace_elbo(ad::Tape& tape, const InjectiveModel& model, const Eigen::MatrixXd& x,
                     const Eigen::MatrixXd& noise, Eigen::Index param_offset = 0);
double elbo(const InjectiveModel& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& noise);

struct VaeTrainSettings {
  int epochs = 1000;
  double lr = 1e-3;
  int batch_size = 256;
  double lr_final_fraction = 0.05;  // cosine decay, as for the field
  std::uint64_t seed = 0;
  std::function<void(int epoch, double elbo)> on_epoch;
};

// Maximises the ELBO over the columns of x. Returns the mean ELBO per epoch.
std::vector<double> train_vae(InjectiveModel& model, const Eigen::MatrixXd& x,
                              const VaeTrainSettings& settings);

// Forward differences; the last point repeats the previous velocity.
Eigen::MatrixXd estimate_latent_velocities(const Eigen::MatrixXd& codes, double dt);

}  // namespace ncds
