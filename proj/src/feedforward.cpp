#include "ncds/feedforward.hpp"

#include "ncds/error.hpp"

#include <cmath>

namespace ncds {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double softplus_stable(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid_stable(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void apply_activation(Eigen::MatrixXd& h, Activation a) {
  switch (a) {
    case Activation::tanh:
      h = h.array().tanh().matrix();
      break;
    case Activation::softplus:
      h = h.unaryExpr(&softplus_stable);
      break;
    case Activation::sigmoid:
      h = h.unaryExpr(&sigmoid_stable);
      break;
    case Activation::identity:
      break;
  }
}

ad::Var apply_activation(const ad::Var& h, Activation a) {
  switch (a) {
    case Activation::tanh:
      return ad::tanh(h);
    case Activation::softplus:
      return ad::softplus(h);
    case Activation::sigmoid:
      return ad::sigmoid(h);
    case Activation::identity:
      return h;
  }
  return h;
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh:
      return "tanh";
    case Activation::softplus:
      return "softplus";
    case Activation::sigmoid:
      return "sigmoid";
    case Activation::identity:
      return "identity";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "softplus") return Activation::softplus;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + name + "'");
}

Eigen::Index FeedforwardNet::param_count(const std::vector<int>& layer_sizes) {
  Eigen::Index n = 0;
  for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i) {
    n += static_cast<Eigen::Index>(layer_sizes[i]) * layer_sizes[i + 1] + layer_sizes[i + 1];
  }
  return n;
}

FeedforwardNet FeedforwardNet::glorot(std::vector<int> layer_sizes, Activation activation,
                                      std::mt19937_64& rng, bool residual) {
  FeedforwardNet net;
  net.layer_sizes = std::move(layer_sizes);
  net.activation = activation;
  net.residual = residual;
  net.params = Eigen::VectorXd::Zero(param_count(net.layer_sizes));
  net.validate();
  Eigen::Index k = 0;
  for (std::size_t l = 0; l + 1 < net.layer_sizes.size(); ++l) {
    const int in = net.layer_sizes[l], out = net.layer_sizes[l + 1];
    const double bound = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (int i = 0; i < in * out; ++i) net.params[k++] = u(rng);
    k += out;
  }
  return net;
}

void FeedforwardNet::zero_output_layer() {
  const std::size_t n = layer_sizes.size();
  const Eigen::Index last = static_cast<Eigen::Index>(layer_sizes[n - 2]) * layer_sizes[n - 1] +
                            layer_sizes[n - 1];
  params.tail(last).setZero();
}

void FeedforwardNet::validate() const {
  if (layer_sizes.size() < 2) throw ConfigError("network needs at least an input and output layer");
  for (int s : layer_sizes) {
    if (s <= 0) throw ConfigError("layer sizes must be positive");
  }
  if (params.size() != param_count(layer_sizes)) {
    throw ConfigError("network has " + std::to_string(params.size()) + " parameters, expected " +
                      std::to_string(param_count(layer_sizes)));
  }
}

Eigen::VectorXd FeedforwardNet::forward(const Eigen::VectorXd& x) const {
  return forward_batch(x);
}

Eigen::MatrixXd FeedforwardNet::forward_batch(const Eigen::MatrixXd& x) const {
  if (x.rows() != input_dim()) {
    throw std::invalid_argument("network input has " + std::to_string(x.rows()) +
                                " rows, expected " + std::to_string(input_dim()));
  }
  Eigen::MatrixXd h = x;
  Eigen::Index k = 0;
  const std::size_t n_layers = layer_sizes.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int in = layer_sizes[l], out = layer_sizes[l + 1];
    Eigen::Map<const RowMajor> w(params.data() + k, out, in);
    k += static_cast<Eigen::Index>(in) * out;
    Eigen::Map<const Eigen::VectorXd> b(params.data() + k, out);
    k += out;
    Eigen::MatrixXd z = w * h;
    z.colwise() += b;
    if (l + 1 < n_layers) {
      apply_activation(z, activation);
      if (residual && l > 0 && in == out) z += h;
    }
    h = std::move(z);
  }
  return h;
}

ad::Var FeedforwardNet::trace(ad::Tape& tape, const ad::Var& x, Eigen::Index param_offset) const {
  if (x.rows() != input_dim()) {
    throw std::invalid_argument("network input has " + std::to_string(x.rows()) +
                                " rows, expected " + std::to_string(input_dim()));
  }
  ad::Var h = x;
  Eigen::Index k = 0;
  const std::size_t n_layers = layer_sizes.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int in = layer_sizes[l], out = layer_sizes[l + 1];
    ad::Var w = tape.parameter(Eigen::Map<const RowMajor>(params.data() + k, out, in),
                               param_offset + k);
    k += static_cast<Eigen::Index>(in) * out;
    ad::Var b = tape.parameter(Eigen::Map<const Eigen::VectorXd>(params.data() + k, out),
                               param_offset + k);
    k += out;
    ad::Var z = ad::matmul(w, h) + b;
    if (l + 1 < n_layers) {
      z = apply_activation(z, activation);
      if (residual && l > 0 && in == out) z = z + h;
    }
    h = z;
  }
  return h;
}

void to_json(nlohmann::json& j, const FeedforwardNet& net) {
  j = nlohmann::json{{"layer_sizes", net.layer_sizes},
                     {"activation", to_string(net.activation)},
                     {"params", std::vector<double>(net.params.data(),
                                                    net.params.data() + net.params.size())}};
  if (net.residual) j["residual"] = true;
}

void from_json(const nlohmann::json& j, FeedforwardNet& net) {
  net.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
  net.activation = activation_from_string(j.at("activation").get<std::string>());
  net.residual = j.value("residual", false);
  const auto p = j.at("params").get<std::vector<double>>();
  net.params = Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
  net.validate();
}

}  // namespace ncds
