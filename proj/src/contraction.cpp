#include "ncds/contraction.hpp"

#include "ncds/adam.hpp"
#include "ncds/error.hpp"
#include "ncds/json_eigen.hpp"
#include "ncds/ode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ncds {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr Eigen::Index kChunk = 512;

struct Nodes {
  std::vector<double> t;
  std::vector<double> w;
};

// Composite Simpson on [0,1] with `steps` intervals: the RK4 rule applied to
// y' = g(t). Interior interval ends are shared between neighbouring intervals.
Nodes simpson_nodes(int steps) {
  Nodes n;
  const double h = 1.0 / steps;
  for (int j = 0; j <= 2 * steps; ++j) {
    n.t.push_back(j * h / 2);
    double w;
    if (j == 0 || j == 2 * steps) {
      w = h / 6;
    } else if (j % 2 == 1) {
      w = 4 * h / 6;
    } else {
      w = 2 * h / 6;
    }
    n.w.push_back(w);
  }
  return n;
}

// Applies the integrand matrix stored in column c of `net_out` to column c of v.
Eigen::MatrixXd apply_integrand(const ContractiveField& f, const Eigen::MatrixXd& net_out,
                                const Eigen::MatrixXd& v) {
  const int d = f.dim;
  Eigen::MatrixXd out(d, v.cols());
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Map<const RowMajor> j(net_out.col(c).data(), d, d);
    const Eigen::VectorXd jv = j * v.col(c);
    if (f.mode == JacobianMode::negdef) {
      out.col(c) = -(j.transpose() * jv + f.eps * v.col(c));
    } else {
      out.col(c) = jv;
    }
  }
  return out;
}

Eigen::MatrixXd net_input(const ContractiveField& f, const Eigen::MatrixXd& x) {
  return (x.colwise() - f.x0).array().colwise() / f.input_scale.array();
}

void check_state(const ContractiveField& f, Eigen::Index rows) {
  if (rows != f.dim) {
    throw std::invalid_argument("state has dimension " + std::to_string(rows) + ", field expects " +
                                std::to_string(f.dim));
  }
}

Eigen::MatrixXd velocity_fixed(const ContractiveField& f, const Eigen::MatrixXd& x, int steps) {
  const Nodes nodes = simpson_nodes(steps);
  const Eigen::Index m = static_cast<Eigen::Index>(nodes.t.size());
  Eigen::MatrixXd out(f.dim, x.cols());
  for (Eigen::Index start = 0; start < x.cols(); start += kChunk) {
    const Eigen::Index b = std::min(kChunk, x.cols() - start);
    const Eigen::MatrixXd v = x.middleCols(start, b).colwise() - f.x0;
    Eigen::MatrixXd pts(f.dim, m * b);
    Eigen::MatrixXd vv(f.dim, m * b);
    for (Eigen::Index j = 0; j < m; ++j) {
      pts.middleCols(j * b, b) = (nodes.t[j] * v).colwise() + f.x0;
      vv.middleCols(j * b, b) = v;
    }
    const Eigen::MatrixXd g = apply_integrand(f, f.jac_net.forward_batch(net_input(f, pts)), vv);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(f.dim, b);
    for (Eigen::Index j = 0; j < m; ++j) acc += nodes.w[j] * g.middleCols(j * b, b);
    out.middleCols(start, b) = acc.colwise() + f.xdot0;
  }
  return out;
}

Eigen::VectorXd velocity_adaptive(const ContractiveField& f, const Eigen::VectorXd& x,
                                  const QuadratureSettings& q) {
  const Eigen::VectorXd v = x - f.x0;
  if (v.isZero(0)) return f.xdot0;
  auto integrand = [&](const Eigen::RowVectorXd& t) {
    Eigen::MatrixXd pts(f.dim, t.size());
    for (Eigen::Index k = 0; k < t.size(); ++k) pts.col(k) = f.x0 + t[k] * v;
    const Eigen::MatrixXd vv = v.replicate(1, t.size());
    return apply_integrand(f, f.jac_net.forward_batch(net_input(f, pts)), vv);
  };
  Dopri5Settings s;
  s.rtol = q.rtol;
  s.atol = q.atol;
  return f.xdot0 + dopri5_quadrature(integrand, f.dim, 0.0, 1.0, s);
}

std::string to_string(QuadratureMethod m) {
  return m == QuadratureMethod::rk4_fixed ? "rk4_fixed" : "dopri5_adaptive";
}

QuadratureMethod quadrature_from_string(const std::string& s) {
  if (s == "rk4_fixed") return QuadratureMethod::rk4_fixed;
  if (s == "dopri5_adaptive") return QuadratureMethod::dopri5_adaptive;
  throw ConfigError("unknown quadrature method '" + s + "'");
}

}  // namespace

QuadratureSettings QuadratureSettings::fixed(int steps) {
  QuadratureSettings q;
  q.method = QuadratureMethod::rk4_fixed;
  q.steps = steps;
  return q;
}

QuadratureSettings QuadratureSettings::adaptive(double rtol, double atol) {
  QuadratureSettings q;
  q.method = QuadratureMethod::dopri5_adaptive;
  q.rtol = rtol;
  q.atol = atol;
  return q;
}

void QuadratureSettings::validate() const {
  if (steps < 1) throw ConfigError("quadrature steps must be at least 1");
  if (!(rtol > 0) || !(atol > 0)) throw ConfigError("quadrature tolerances must be positive");
}

void RolloutSettings::validate() const {
  if (!(dt > 0)) throw ConfigError("rollout dt must be positive");
  if (horizon < 0) throw ConfigError("rollout horizon must be nonnegative");
  if (max_halvings < 0) throw ConfigError("rollout max_halvings must be nonnegative");
}

ContractiveField ContractiveField::create(int dim, const std::vector<int>& hidden,
                                          Activation activation, double eps, std::mt19937_64& rng) {
  if (dim < 1) throw ConfigError("field dimension must be positive");
  std::vector<int> sizes{dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(dim * dim);
  ContractiveField f;
  f.dim = dim;
  f.eps = eps;
  f.x0 = Eigen::VectorXd::Zero(dim);
  f.xdot0 = Eigen::VectorXd::Zero(dim);
  f.input_scale = Eigen::VectorXd::Ones(dim);
  f.jac_net = FeedforwardNet::glorot(sizes, activation, rng);
  f.validate();
  return f;
}

Eigen::VectorXd ContractiveField::params() const {
  Eigen::VectorXd p(param_count());
  p << jac_net.params, xdot0;
  return p;
}

void ContractiveField::set_params(const Eigen::VectorXd& p) {
  if (p.size() != param_count()) throw std::invalid_argument("field parameter vector has wrong length");
  jac_net.params = p.head(jac_net.params.size());
  xdot0 = p.tail(dim);
}

void ContractiveField::validate() const {
  if (dim < 1) throw ConfigError("field dimension must be positive");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
  if (x0.size() != dim || xdot0.size() != dim || input_scale.size() != dim) {
    throw ConfigError("field x0, xdot0 and input_scale must have dimension " + std::to_string(dim));
  }
  if ((input_scale.array() <= 0).any()) throw ConfigError("input_scale entries must be positive");
  jac_net.validate();
  if (jac_net.input_dim() != dim || jac_net.output_dim() != dim * dim) {
    throw ConfigError("jac_net must map R^" + std::to_string(dim) + " to R^" +
                      std::to_string(dim * dim));
  }
  quad.validate();
}

void to_json(nlohmann::json& j, const QuadratureSettings& q) {
  j = {{"method", to_string(q.method)}, {"steps", q.steps}, {"rtol", q.rtol}, {"atol", q.atol}};
}

void from_json(const nlohmann::json& j, QuadratureSettings& q) {
  q = QuadratureSettings{};
  q.method = quadrature_from_string(j.value("method", std::string("dopri5_adaptive")));
  q.steps = j.value("steps", q.steps);
  q.rtol = j.value("rtol", q.rtol);
  q.atol = j.value("atol", q.atol);
  q.validate();
}

void to_json(nlohmann::json& j, const ContractiveField& f) {
  j = {{"dim", f.dim},
       {"eps", f.eps},
       {"x0", to_json_array(f.x0)},
       {"xdot0", to_json_array(f.xdot0)},
       {"input_scale", to_json_array(f.input_scale)},
       {"jac_net", f.jac_net},
       {"quad", f.quad},
       {"jacobian", f.mode == JacobianMode::negdef ? "negdef" : "unconstrained"}};
}

void from_json(const nlohmann::json& j, ContractiveField& f) {
  f.dim = j.at("dim").get<int>();
  f.eps = j.at("eps").get<double>();
  f.x0 = vector_from_json(j.at("x0"));
  f.xdot0 = vector_from_json(j.at("xdot0"));
  f.input_scale = j.contains("input_scale") ? vector_from_json(j.at("input_scale"))
                                            : Eigen::VectorXd::Ones(f.dim);
  f.jac_net = j.at("jac_net").get<FeedforwardNet>();
  f.quad = j.contains("quad") ? j.at("quad").get<QuadratureSettings>() : QuadratureSettings{};
  const std::string mode = j.value("jacobian", std::string("negdef"));
  if (mode == "negdef") {
    f.mode = JacobianMode::negdef;
  } else if (mode == "unconstrained") {
    f.mode = JacobianMode::unconstrained;
  } else {
    throw ConfigError("unknown jacobian mode '" + mode + "'");
  }
  f.validate();
}

Eigen::MatrixXd net_jacobian(const ContractiveField& field, const Eigen::VectorXd& x) {
  check_state(field, x.size());
  const Eigen::VectorXd out = field.jac_net.forward(net_input(field, x));
  if (!out.allFinite()) throw NumericError("Jacobian network produced a non-finite output");
  return Eigen::Map<const RowMajor>(out.data(), field.dim, field.dim);
}

Eigen::MatrixXd negdef_jacobian(const ContractiveField& field, const Eigen::VectorXd& x) {
  const Eigen::MatrixXd j = net_jacobian(field, x);
  return -(j.transpose() * j + field.eps * Eigen::MatrixXd::Identity(field.dim, field.dim));
}

Eigen::MatrixXd integrand_jacobian(const ContractiveField& field, const Eigen::VectorXd& x) {
  return field.mode == JacobianMode::negdef ? negdef_jacobian(field, x) : net_jacobian(field, x);
}

Eigen::VectorXd velocity(const ContractiveField& field, const Eigen::VectorXd& x) {
  return velocity(field, x, field.quad);
}

Eigen::VectorXd velocity(const ContractiveField& field, const Eigen::VectorXd& x,
                         const QuadratureSettings& quad) {
  check_state(field, x.size());
  quad.validate();
  Eigen::VectorXd v = quad.method == QuadratureMethod::rk4_fixed
                          ? Eigen::VectorXd(velocity_fixed(field, x, quad.steps).col(0))
                          : velocity_adaptive(field, x, quad);
  if (!v.allFinite()) throw NumericError("velocity is not finite");
  return v;
}

Eigen::MatrixXd velocity_batch(const ContractiveField& field, const Eigen::MatrixXd& x,
                               const QuadratureSettings& quad) {
  check_state(field, x.rows());
  quad.validate();
  if (quad.method == QuadratureMethod::rk4_fixed) return velocity_fixed(field, x, quad.steps);
  Eigen::MatrixXd out(field.dim, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) out.col(c) = velocity_adaptive(field, x.col(c), quad);
  return out;
}

RolloutResult rollout(const VelocityFn& f, const Eigen::VectorXd& x_init,
                      const RolloutSettings& settings, const StatePredicate& admissible) {
  settings.validate();
  RolloutResult result;
  result.trajectory.dt = settings.dt;
  Eigen::MatrixXd states(settings.horizon + 1, x_init.size());
  states.row(0) = x_init.transpose();
  if (!x_init.allFinite()) {
    result.ok = false;
    result.error = "initial state is not finite";
    result.trajectory.states = states.topRows(1);
    return result;
  }

  const OdeRhs rhs = [&](double, const Eigen::VectorXd& x) { return f(x); };
  auto step = [&](const Eigen::VectorXd& x, double h) {
    return settings.method == RolloutMethod::rk4 ? rk4_step(rhs, 0, x, h) : euler_step(rhs, 0, x, h);
  };

  Eigen::VectorXd x = x_init;
  Eigen::Index filled = 1;
  for (int k = 0; k < settings.horizon; ++k) {
    bool done = false;
    std::string why;
    for (int halving = 0; halving <= settings.max_halvings && !done; ++halving) {
      const int substeps = 1 << halving;
      const double h = settings.dt / substeps;
      Eigen::VectorXd y = x;
      try {
        bool good = true;
        for (int s = 0; s < substeps && good; ++s) {
          y = step(y, h);
          if (!y.allFinite()) {
            good = false;
            why = "non-finite state";
          } else if (admissible && !admissible(y)) {
            good = false;
            why = "state left the admissible set";
          }
        }
        done = good;
      } catch (const NumericError& e) {
        why = e.what();
      }
      if (done) x = y;
    }
    if (!done) {
      result.ok = false;
      result.error = "step " + std::to_string(k) + ": " + why;
      break;
    }
    states.row(filled++) = x.transpose();
  }
  result.trajectory.states = states.topRows(filled);
  return result;
}

RolloutResult rollout(const ContractiveField& field, const Eigen::VectorXd& x_init,
                      const RolloutSettings& settings) {
  check_state(field, x_init.size());
  return rollout([&](const Eigen::VectorXd& x) { return velocity(field, x); }, x_init, settings);
}

double jac_loss(const ContractiveField& field, const Eigen::VectorXd& z_t,
                const Eigen::VectorXd& z_next, double dt) {
  if (z_t.size() != z_next.size()) throw std::invalid_argument("jac_loss: state dimensions differ");
  return (z_next - (z_t + dt * velocity(field, z_t))).squaredNorm();
}

ad::Var trace_velocity(ad::Tape& tape, const ContractiveField& field, const Eigen::MatrixXd& z,
                       int quad_steps, Eigen::Index param_offset) {
  check_state(field, z.rows());
  if (quad_steps < 1) throw ConfigError("quadrature steps must be at least 1");
  const Nodes nodes = simpson_nodes(quad_steps);
  const Eigen::Index m = static_cast<Eigen::Index>(nodes.t.size());
  const Eigen::Index b = z.cols();
  const int d = field.dim;

  const Eigen::MatrixXd v = z.colwise() - field.x0;
  const Eigen::MatrixXd scaled = v.array().colwise() / field.input_scale.array();
  Eigen::MatrixXd inputs(d, m * b);
  Eigen::MatrixXd vv(d, m * b);
  for (Eigen::Index j = 0; j < m; ++j) {
    inputs.middleCols(j * b, b) = nodes.t[j] * scaled;
    vv.middleCols(j * b, b) = v;
  }
  ad::Var jac = field.jac_net.trace(tape, tape.constant(std::move(inputs)), param_offset);
  ad::Var vvar = tape.constant(std::move(vv));
  ad::Var jv = ad::batched_matvec(jac, vvar, d, false);
  ad::Var g = field.mode == JacobianMode::negdef
                  ? -(ad::batched_matvec(jac, jv, d, true) + vvar * field.eps)
                  : jv;
  ad::Var acc = ad::cols(g, 0, b) * nodes.w[0];
  for (Eigen::Index j = 1; j < m; ++j) acc = acc + ad::cols(g, j * b, b) * nodes.w[j];
  ad::Var xdot0 = tape.parameter(field.xdot0, param_offset + field.jac_net.params.size());
  return acc + xdot0;
}

ad::Var trace_jac_loss(ad::Tape& tape, const ContractiveField& field, const Eigen::MatrixXd& z_t,
                       const Eigen::MatrixXd& z_next, double dt, int quad_steps,
                       Eigen::Index param_offset) {
  if (z_t.rows() != z_next.rows() || z_t.cols() != z_next.cols()) {
    throw std::invalid_argument("jac_loss: state batches differ in shape");
  }
  ad::Var f = trace_velocity(tape, field, z_t, quad_steps, param_offset);
  ad::Var residual = tape.constant(z_next - z_t) - f * dt;
  return ad::sum(ad::square(residual)) / static_cast<double>(z_t.cols());
}

double mean_jac_loss(const ContractiveField& field, const Eigen::MatrixXd& z_t,
                     const Eigen::MatrixXd& z_next, double dt, int quad_steps) {
  if (z_t.cols() == 0) return 0;
  const Eigen::MatrixXd f = velocity_fixed(field, z_t, quad_steps);
  return (z_next - z_t - dt * f).colwise().squaredNorm().mean();
}

FieldTrainResult train_field(ContractiveField& field, const Eigen::MatrixXd& z_t,
                             const Eigen::MatrixXd& z_next, double dt,
                             const FieldTrainSettings& settings) {
  field.validate();
  if (z_t.rows() != field.dim || z_next.rows() != field.dim || z_t.cols() != z_next.cols()) {
    throw std::invalid_argument("training pairs do not match the field dimension");
  }
  if (z_t.cols() == 0) throw ConfigError("no training pairs");
  if (settings.epochs < 0 || settings.batch_size < 1 || !(settings.lr > 0) ||
      !(settings.lr_final_fraction > 0) || settings.lr_final_fraction > 1) {
    throw ConfigError("invalid field training settings");
  }
  std::mt19937_64 rng(settings.seed);
  Eigen::VectorXd p = field.params();
  AdamState adam = AdamState::for_size(p.size(), settings.lr);
  std::vector<Eigen::Index> order(z_t.cols());
  std::iota(order.begin(), order.end(), 0);

  FieldTrainResult result;
  ad::Tape tape;
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    adam.lr = cosine_lr(settings.lr, settings.lr_final_fraction, epoch, settings.epochs);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += settings.batch_size) {
      const std::size_t n = std::min<std::size_t>(settings.batch_size, order.size() - start);
      Eigen::MatrixXd a(field.dim, n), b(field.dim, n);
      for (std::size_t i = 0; i < n; ++i) {
        a.col(i) = z_t.col(order[start + i]);
        b.col(i) = z_next.col(order[start + i]);
      }
      tape.clear();
      ad::Var loss = trace_jac_loss(tape, field, a, b, dt, settings.quad_steps);
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) {
        throw NumericError("field training diverged at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      try {
        adam_step(adam, p, tape.parameter_gradient(p.size()));
      } catch (const NumericError& e) {
        throw NumericError("field training diverged at epoch " + std::to_string(epoch) + ": " +
                           e.what());
      }
      field.set_params(p);
      total += value;
      ++batches;
    }
    result.loss_history.push_back(total / batches);
    if (settings.on_epoch) settings.on_epoch(epoch, result.loss_history.back());
  }
  result.final_loss = mean_jac_loss(field, z_t, z_next, dt, settings.quad_steps);
  return result;
}

}  // namespace ncds
