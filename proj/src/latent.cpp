#include "ncds/latent.hpp"

#include "ncds/adam.hpp"
#include "ncds/error.hpp"
#include "ncds/json_eigen.hpp"
#include "ncds/liegroup.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ncds {

namespace {

constexpr double kMinWidth = 1e-3;
constexpr double kMinHeight = 1e-3;
constexpr double kMinDerivative = 1e-3;
constexpr double kSigmaFloor = 1e-6;

const double kDerivativeOffset = std::log(std::exp(1.0 - kMinDerivative) - 1.0);

using ad::Var;

Var bin_edges(const Var& raw, double min_size, double bound) {
  ad::Tape& tape = *raw.tape();
  const Eigen::Index k = raw.rows();
  const Eigen::MatrixXd shift = raw.value().colwise().maxCoeff();
  Var e = ad::exp(raw - tape.constant(shift));
  Var sizes = min_size + (1.0 - min_size * static_cast<double>(k)) * (e / ad::sum_rows(e));
  Eigen::MatrixXd lower = Eigen::MatrixXd::Zero(k + 1, k);
  for (Eigen::Index j = 1; j <= k; ++j) lower.row(j).head(j).setOnes();
  return ad::matmul(lower, sizes) * (2 * bound) - bound;
}

std::vector<Eigen::Index> locate(const Eigen::MatrixXd& edges, const Eigen::MatrixXd& v) {
  const Eigen::Index k = edges.rows() - 1;
  std::vector<Eigen::Index> bin(v.cols());
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Index b = 0;
    while (b + 1 < k && edges(b + 1, c) <= v(0, c)) ++b;
    bin[c] = b;
  }
  return bin;
}

std::vector<Eigen::Index> shifted(std::vector<Eigen::Index> idx) {
  for (auto& i : idx) ++i;
  return idx;
}

Eigen::MatrixXd replicate_columns(const Eigen::VectorXd& x, Eigen::Index n) {
  return x.replicate(1, n);
}

// Jacobian of a dimension-preserving columnwise map from one reverse sweep
// over n copies of x, copy c contributing only its c-th output.
template <typename Fn>
Eigen::MatrixXd columnwise_jacobian(const Fn& fn, const Eigen::VectorXd& x) {
  ad::Tape tape;
  Var in = tape.constant(replicate_columns(x, x.size()));
  Var out = fn(tape, in);
  const Eigen::Index n = x.size();
  if (out.rows() != n) throw std::invalid_argument("map must preserve dimension");
  tape.backward(ad::sum(out * tape.constant(Eigen::MatrixXd::Identity(n, n))));
  return tape.grad(in).transpose();
}

Eigen::VectorXd effective_scale(const InjectiveModel& m) {
  Eigen::VectorXd s = m.scale;
  if (m.layout == OutputLayout::pose) s.tail(3).setOnes();
  return s;
}

std::string to_string(TransformKind k) { return k == TransformKind::affine ? "affine" : "rq_spline"; }

TransformKind kind_from_string(const std::string& s) {
  if (s == "affine") return TransformKind::affine;
  if (s == "rq_spline") return TransformKind::rq_spline;
  throw ConfigError("unknown coupling transform '" + s + "'");
}

}  // namespace

Eigen::VectorXd pad(const Eigen::VectorXd& z, Eigen::Index big_d) {
  if (big_d < z.size()) throw std::invalid_argument("pad target is smaller than the input");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(big_d);
  v.head(z.size()) = z;
  return v;
}

Eigen::VectorXd unpad(const Eigen::VectorXd& v, Eigen::Index d) {
  if (d > v.size()) throw std::invalid_argument("unpad size exceeds the input");
  return v.head(d);
}

Var rq_spline(const Var& x, const Var& w, const Var& h, const Var& u, double bound, bool inverse) {
  ad::Tape& tape = *x.tape();
  const Eigen::Index k = w.rows();
  const Eigen::Index n = x.cols();
  if (x.rows() != 1 || h.rows() != k || u.rows() != k - 1 || w.cols() != n || h.cols() != n ||
      u.cols() != n) {
    throw std::invalid_argument("spline parameter shapes do not match");
  }
  const Eigen::MatrixXd inside =
      (x.value().array().abs() <= bound).cast<double>().matrix();
  Var mask = tape.constant(inside);
  Var xs = x * mask;

  Var cw = bin_edges(w, kMinWidth, bound);
  Var ch = bin_edges(h, kMinHeight, bound);
  Var ones = tape.constant(Eigen::MatrixXd::Ones(1, n));
  Var deriv = ad::vstack({ones, kMinDerivative + ad::softplus(u + kDerivativeOffset), ones});

  const auto bin = locate(inverse ? ch.value() : cw.value(), xs.value());
  const auto next = shifted(bin);
  Var x_lo = ad::gather_rows(cw, bin);
  Var width = ad::gather_rows(cw, next) - x_lo;
  Var y_lo = ad::gather_rows(ch, bin);
  Var height = ad::gather_rows(ch, next) - y_lo;
  Var d0 = ad::gather_rows(deriv, bin);
  Var d1 = ad::gather_rows(deriv, next);
  Var delta = height / width;
  Var curve = d0 + d1 - 2.0 * delta;

  Var out;
  if (!inverse) {
    Var theta = (xs - x_lo) / width;
    Var t1 = theta * (1.0 - theta);
    Var num = height * (delta * ad::square(theta) + d0 * t1);
    Var den = delta + curve * t1;
    out = y_lo + num / den;
  } else {
    Var dy = xs - y_lo;
    Var a = height * (delta - d0) + dy * curve;
    Var b = height * d0 - dy * curve;
    Var c = -(delta * dy);
    const Eigen::MatrixXd disc = (b.value().array().square() - 4 * a.value().array() * c.value().array()).matrix();
    if (!disc.allFinite() || (disc.array() < 0).any()) {
      throw NumericError("spline inverse has no real root");
    }
    Var theta = 2.0 * c / (-b - ad::sqrt(ad::square(b) - 4.0 * a * c));
    out = x_lo + theta * width;
  }
  return out * mask + x * (1.0 - mask);
}

CouplingLayer CouplingLayer::create(int dim, bool odd, TransformKind kind, const std::vector<int>& hidden,
                                    int bins, double bound, std::mt19937_64& rng) {
  CouplingLayer l;
  l.dim = dim;
  l.odd = odd;
  l.kind = kind;
  l.bins = bins;
  l.bound = bound;
  if (dim < 2) throw ConfigError("coupling layers need at least two dimensions");
  std::vector<int> sizes{l.pass_count()};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(l.trans_count() * l.params_per_dim());
  l.conditioner = FeedforwardNet::glorot(sizes, Activation::tanh, rng, true);
  l.conditioner.zero_output_layer();
  return l;
}

void CouplingLayer::validate() const {
  if (dim < 2) throw ConfigError("coupling layers need at least two dimensions");
  if (kind == TransformKind::rq_spline && bins < 2) throw ConfigError("spline needs at least two bins");
  if (!(bound > 0)) throw ConfigError("spline bound must be positive");
  conditioner.validate();
  if (conditioner.input_dim() != pass_count() ||
      conditioner.output_dim() != trans_count() * params_per_dim()) {
    throw ConfigError("conditioner shape does not match the coupling layer");
  }
}

namespace {

Var couple(const CouplingLayer& l, ad::Tape& tape, const Var& v, Eigen::Index offset, bool inverse) {
  if (v.rows() != l.dim) throw std::invalid_argument("coupling layer input has wrong dimension");
  Var pass = ad::rows(v, l.pass_start(), l.pass_count());
  Var trans = ad::rows(v, l.trans_start(), l.trans_count());
  Var p = l.conditioner.trace(tape, pass, offset);
  const int per = l.params_per_dim();
  std::vector<Var> out;
  for (int i = 0; i < l.trans_count(); ++i) {
    Var t = ad::rows(trans, i, 1);
    if (l.kind == TransformKind::affine) {
      Var s = ad::rows(p, i * per, 1);
      Var b = ad::rows(p, i * per + 1, 1);
      out.push_back(inverse ? (t - b) * ad::exp(-s) : t * ad::exp(s) + b);
    } else {
      Var w = ad::rows(p, i * per, l.bins);
      Var h = ad::rows(p, i * per + l.bins, l.bins);
      Var u = ad::rows(p, i * per + 2 * l.bins, l.bins - 1);
      out.push_back(rq_spline(t, w, h, u, l.bound, inverse));
    }
  }
  Var moved = ad::vstack(out);
  return l.odd ? ad::vstack({moved, pass}) : ad::vstack({pass, moved});
}

}  // namespace

Var CouplingLayer::forward(ad::Tape& tape, const Var& x, Eigen::Index param_offset) const {
  return couple(*this, tape, x, param_offset, false);
}

Var CouplingLayer::inverse(ad::Tape& tape, const Var& y, Eigen::Index param_offset) const {
  return couple(*this, tape, y, param_offset, true);
}

InjectiveModel InjectiveModel::create(int d, int big_d, const Options& o, std::mt19937_64& rng) {
  if (d < 1 || big_d <= d) throw ConfigError("latent dimension must satisfy 1 <= d < D");
  if (o.n_layers < 0) throw ConfigError("number of coupling layers must be nonnegative");
  if (o.layout == OutputLayout::pose && big_d < 3) throw ConfigError("pose layout needs D >= 3");
  InjectiveModel m;
  m.d = d;
  m.big_d = big_d;
  m.layout = o.layout;
  for (int i = 0; i < o.n_layers; ++i) {
    m.layers.push_back(
        CouplingLayer::create(big_d, i % 2 == 1, o.kind, o.conditioner_hidden, o.bins, o.bound, rng));
  }
  m.shift = Eigen::VectorXd::Zero(big_d);
  m.scale = Eigen::VectorXd::Ones(big_d);
  m.sigma_net = FeedforwardNet::glorot({big_d, o.sigma_hidden, d}, Activation::tanh, rng);
  m.lik_logvar = Eigen::VectorXd::Zero(big_d);
  return m;
}

Eigen::Index InjectiveModel::sigma_offset() const {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.conditioner.params.size();
  return n;
}

Eigen::Index InjectiveModel::logvar_offset() const { return sigma_offset() + sigma_net.params.size(); }

Eigen::Index InjectiveModel::param_count() const { return logvar_offset() + lik_logvar.size(); }

Eigen::VectorXd InjectiveModel::params() const {
  Eigen::VectorXd p(param_count());
  Eigen::Index at = 0;
  for (const auto& l : layers) {
    p.segment(at, l.conditioner.params.size()) = l.conditioner.params;
    at += l.conditioner.params.size();
  }
  p.segment(at, sigma_net.params.size()) = sigma_net.params;
  at += sigma_net.params.size();
  p.tail(lik_logvar.size()) = lik_logvar;
  return p;
}

void InjectiveModel::set_params(const Eigen::VectorXd& p) {
  if (p.size() != param_count()) throw std::invalid_argument("parameter vector has wrong size");
  Eigen::Index at = 0;
  for (auto& l : layers) {
    l.conditioner.params = p.segment(at, l.conditioner.params.size());
    at += l.conditioner.params.size();
  }
  sigma_net.params = p.segment(at, sigma_net.params.size());
  at += sigma_net.params.size();
  lik_logvar = p.tail(lik_logvar.size());
}

void InjectiveModel::validate() const {
  if (d < 1 || big_d <= d) throw ConfigError("latent dimension must satisfy 1 <= d < D");
  if (layout == OutputLayout::pose && big_d < 3) throw ConfigError("pose layout needs D >= 3");
  for (const auto& l : layers) {
    l.validate();
    if (l.dim != big_d) throw ConfigError("coupling layer dimension does not match D");
  }
  if (shift.size() != big_d || scale.size() != big_d || lik_logvar.size() != big_d) {
    throw ConfigError("output map and likelihood must have dimension D");
  }
  if (!(scale.array() > 0).all()) throw ConfigError("output scale entries must be positive");
  sigma_net.validate();
  if (sigma_net.input_dim() != big_d || sigma_net.output_dim() != d) {
    throw ConfigError("sigma_net must map R^D to R^d");
  }
}

Var InjectiveModel::output_map(const Var& y) const {
  ad::Tape& tape = *y.tape();
  const Eigen::Index lin = layout == OutputLayout::pose ? big_d - 3 : big_d;
  std::vector<Var> parts;
  if (lin > 0) {
    parts.push_back(ad::rows(y, 0, lin) * tape.constant(scale.head(lin)) +
                    tape.constant(shift.head(lin)));
  }
  if (layout == OutputLayout::pose) parts.push_back(first_cover_squash(ad::rows(y, lin, 3)));
  return parts.size() == 1 ? parts.front() : ad::vstack(parts);
}

Eigen::MatrixXd InjectiveModel::inverse_output_map(const Eigen::MatrixXd& x) const {
  if (x.rows() != big_d) throw std::invalid_argument("data has wrong dimension");
  const Eigen::Index lin = layout == OutputLayout::pose ? big_d - 3 : big_d;
  Eigen::MatrixXd y(x.rows(), x.cols());
  y.topRows(lin) = (x.topRows(lin).colwise() - shift.head(lin)).array().colwise() / scale.head(lin).array();
  if (layout == OutputLayout::pose) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      y.col(c).tail(3) = first_cover_unsquash(x.col(c).tail<3>());
    }
  }
  return y;
}

Var InjectiveModel::decode(ad::Tape& tape, const Var& z, Eigen::Index param_offset) const {
  if (z.rows() != d) throw std::invalid_argument("latent input has wrong dimension");
  Var v = ad::vstack({z, tape.constant(Eigen::MatrixXd::Zero(big_d - d, z.cols()))});
  Eigen::Index at = param_offset;
  for (const auto& l : layers) {
    v = l.forward(tape, v, at);
    at += l.conditioner.params.size();
  }
  return output_map(v);
}

Var InjectiveModel::encode_mean(ad::Tape& tape, const Eigen::MatrixXd& x, Eigen::Index param_offset) const {
  Var v = tape.constant(inverse_output_map(x));
  Eigen::Index at = param_offset + sigma_offset();
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    at -= it->conditioner.params.size();
    v = it->inverse(tape, v, at);
  }
  return ad::rows(v, 0, d);
}

Var InjectiveModel::encode_sigma(ad::Tape& tape, const Eigen::MatrixXd& x, Eigen::Index param_offset) const {
  Var y = tape.constant(inverse_output_map(x));
  return ad::softplus(sigma_net.trace(tape, y, param_offset + sigma_offset())) + kSigmaFloor;
}

void to_json(nlohmann::json& j, const CouplingLayer& l) {
  j = {{"dim", l.dim},     {"odd", l.odd},     {"kind", to_string(l.kind)},
       {"bins", l.bins},   {"bound", l.bound}, {"conditioner", l.conditioner}};
}

void from_json(const nlohmann::json& j, CouplingLayer& l) {
  l.dim = j.at("dim").get<int>();
  l.odd = j.at("odd").get<bool>();
  l.kind = kind_from_string(j.at("kind").get<std::string>());
  l.bins = j.at("bins").get<int>();
  l.bound = j.at("bound").get<double>();
  l.conditioner = j.at("conditioner").get<FeedforwardNet>();
  l.validate();
}

void to_json(nlohmann::json& j, const InjectiveModel& m) {
  j = {{"d", m.d},
       {"D", m.big_d},
       {"layers", m.layers},
       {"layout", m.layout == OutputLayout::pose ? "pose" : "euclidean"},
       {"shift", to_json_array(m.shift)},
       {"scale", to_json_array(m.scale)},
       {"sigma_net", m.sigma_net},
       {"lik_logvar", to_json_array(m.lik_logvar)}};
}

void from_json(const nlohmann::json& j, InjectiveModel& m) {
  m.d = j.at("d").get<int>();
  m.big_d = j.at("D").get<int>();
  m.layers = j.at("layers").get<std::vector<CouplingLayer>>();
  const std::string layout = j.value("layout", std::string("euclidean"));
  if (layout == "pose") {
    m.layout = OutputLayout::pose;
  } else if (layout == "euclidean") {
    m.layout = OutputLayout::euclidean;
  } else {
    throw ConfigError("unknown output layout '" + layout + "'");
  }
  m.shift = j.contains("shift") ? vector_from_json(j.at("shift")) : Eigen::VectorXd::Zero(m.big_d);
  m.scale = j.contains("scale") ? vector_from_json(j.at("scale")) : Eigen::VectorXd::Ones(m.big_d);
  m.sigma_net = j.at("sigma_net").get<FeedforwardNet>();
  m.lik_logvar = vector_from_json(j.at("lik_logvar"));
  m.validate();
}

Eigen::MatrixXd decode_batch(const InjectiveModel& model, const Eigen::MatrixXd& z) {
  ad::Tape tape;
  tape.set_recording(false);
  return model.decode(tape, tape.constant(z)).value();
}

Eigen::VectorXd decode(const InjectiveModel& model, const Eigen::VectorXd& z) {
  return decode_batch(model, z).col(0);
}

Eigen::MatrixXd encode_mean_batch(const InjectiveModel& model, const Eigen::MatrixXd& x) {
  ad::Tape tape;
  tape.set_recording(false);
  return model.encode_mean(tape, x).value();
}

Eigen::VectorXd encode_mean(const InjectiveModel& model, const Eigen::VectorXd& x) {
  return encode_mean_batch(model, x).col(0);
}

Eigen::VectorXd encode_sigma(const InjectiveModel& model, const Eigen::VectorXd& x) {
  ad::Tape tape;
  tape.set_recording(false);
  return model.encode_sigma(tape, x).value().col(0);
}

Eigen::MatrixXd layer_jacobian(const CouplingLayer& layer, const Eigen::VectorXd& x) {
  return columnwise_jacobian([&](ad::Tape& t, const Var& v) { return layer.forward(t, v, 0); }, x);
}

Eigen::MatrixXd decoder_jacobian(const InjectiveModel& model, const Eigen::VectorXd& z) {
  if (z.size() != model.d) throw std::invalid_argument("latent input has wrong dimension");
  Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(model.big_d, model.d);
  Eigen::VectorXd v = pad(z, model.big_d);
  for (const auto& l : model.layers) {
    jac = layer_jacobian(l, v) * jac;
    ad::Tape tape;
    tape.set_recording(false);
    v = l.forward(tape, tape.constant(v), 0).value().col(0);
  }
  const Eigen::MatrixXd out =
      columnwise_jacobian([&](ad::Tape&, const Var& y) { return model.output_map(y); }, v);
  return out * jac;
}

Eigen::VectorXd push_velocity(const InjectiveModel& model, const Eigen::VectorXd& z,
                              const Eigen::VectorXd& zdot) {
  if (zdot.size() != model.d) throw std::invalid_argument("latent velocity has wrong dimension");
  return decoder_jacobian(model, z) * zdot;
}

ElboTerms trace_elbo(ad::Tape& tape, const InjectiveModel& model, const Eigen::MatrixXd& x,
                     const Eigen::MatrixXd& noise, Eigen::Index param_offset) {
  if (x.rows() != model.big_d || noise.rows() != model.d || noise.cols() != x.cols() || x.cols() == 0) {
    throw std::invalid_argument("ELBO inputs have inconsistent shapes");
  }
  const double n = static_cast<double>(x.cols());
  Var mu = model.encode_mean(tape, x, param_offset);
  Var sigma = model.encode_sigma(tape, x, param_offset);
  Var z = mu + sigma * tape.constant(noise);
  Var xhat = model.decode(tape, z, param_offset);

  const Eigen::VectorXd scale = effective_scale(model);
  Var r = (xhat - tape.constant(x)) / tape.constant(scale);
  Var lv = tape.parameter(model.lik_logvar, param_offset + model.logvar_offset());
  const double norm = -0.5 * model.big_d * std::log(2 * std::numbers::pi) - scale.array().log().sum();
  Var ll = ad::sum_rows(-0.5 * lv - 0.5 * ad::square(r) * ad::exp(-lv)) + norm;
  Var kl = 0.5 * ad::sum_rows(ad::square(sigma) + ad::square(mu) - 1.0 - 2.0 * ad::log(sigma));

  ElboTerms t;
  t.recon = ad::sum(ll) / n;
  t.kl = ad::sum(kl) / n;
  t.elbo = t.recon - t.kl;
  return t;
}

double elbo(const InjectiveModel& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& noise) {
  ad::Tape tape;
  tape.set_recording(false);
  return trace_elbo(tape, model, x, noise).elbo.value()(0, 0);
}

std::vector<double> train_vae(InjectiveModel& model, const Eigen::MatrixXd& x,
                              const VaeTrainSettings& settings) {
  model.validate();
  if (x.rows() != model.big_d) throw std::invalid_argument("training data has wrong dimension");
  if (x.cols() == 0) throw ConfigError("no training data");
  if (settings.epochs < 0 || settings.batch_size < 1 || !(settings.lr > 0) ||
      !(settings.lr_final_fraction > 0) || settings.lr_final_fraction > 1) {
    throw ConfigError("invalid VAE training settings");
  }
  std::mt19937_64 rng(settings.seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd p = model.params();
  AdamState adam = AdamState::for_size(p.size(), settings.lr);
  std::vector<Eigen::Index> order(x.cols());
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> history;
  ad::Tape tape;
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    adam.lr = cosine_lr(settings.lr, settings.lr_final_fraction, epoch, settings.epochs);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += settings.batch_size) {
      const std::size_t n = std::min<std::size_t>(settings.batch_size, order.size() - start);
      Eigen::MatrixXd batch(model.big_d, n);
      for (std::size_t i = 0; i < n; ++i) batch.col(i) = x.col(order[start + i]);
      Eigen::MatrixXd noise(model.d, n);
      for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
      tape.clear();
      double value = 0;
      try {
        ElboTerms terms = trace_elbo(tape, model, batch, noise);
        value = terms.elbo.value()(0, 0);
        if (!std::isfinite(value)) throw NumericError("ELBO is not finite");
        tape.backward(-terms.elbo);
        adam_step(adam, p, tape.parameter_gradient(p.size()));
      } catch (const NumericError& e) {
        throw NumericError("VAE training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      model.set_params(p);
      total += value;
      ++batches;
    }
    history.push_back(total / batches);
    if (settings.on_epoch) settings.on_epoch(epoch, history.back());
  }
  return history;
}

Eigen::MatrixXd estimate_latent_velocities(const Eigen::MatrixXd& codes, double dt) {
  if (!(dt > 0)) throw ConfigError("time step must be positive");
  if (codes.cols() < 2) throw ConfigError("need at least two points to estimate velocities");
  const Eigen::Index n = codes.cols();
  Eigen::MatrixXd v(codes.rows(), n);
  v.leftCols(n - 1) = (codes.rightCols(n - 1) - codes.leftCols(n - 1)) / dt;
  v.col(n - 1) = v.col(n - 2);
  return v;
}

}  // namespace ncds
