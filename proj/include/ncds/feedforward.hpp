#pragma once

#include "ncds/autodiff.hpp"

#include <nlohmann/json.hpp>

#include <random>
#include <string>
#include <vector>

namespace ncds {

enum class Activation { tanh, softplus, sigmoid, identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// Dense feedforward network. Hidden layers use `activation`, the output layer
// is linear. With `residual` set, a hidden-to-hidden layer of equal width
// computes h + act(W h + b) instead of act(W h + b).
//
// Parameters are stored flat, layer by layer: W (row-major, out x in) then b.
struct FeedforwardNet {
  std::vector<int> layer_sizes;
  Activation activation = Activation::tanh;
  bool residual = false;
  Eigen::VectorXd params;

  static Eigen::Index param_count(const std::vector<int>& layer_sizes);

  // Glorot-uniform weights, zero biases.
  static FeedforwardNet glorot(std::vector<int> layer_sizes, Activation activation,
                               std::mt19937_64& rng, bool residual = false);

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }

  // Zeros the output layer so the net starts as the constant function 0.
  void zero_output_layer();

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  // Columns are samples.
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x) const;

  // Records the forward pass on a tape. Weights become parameter leaves whose
  // gradients land at `param_offset + k` for the k-th entry of `params`.
  ad::Var trace(ad::Tape& tape, const ad::Var& x, Eigen::Index param_offset) const;

  void validate() const;
};

void to_json(nlohmann::json& j, const FeedforwardNet& net);
void from_json(const nlohmann::json& j, FeedforwardNet& net);

}  // namespace ncds
