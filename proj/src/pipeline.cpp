#include "ncds/pipeline.hpp"

#include "ncds/error.hpp"
#include "ncds/json_eigen.hpp"
#include "ncds/liegroup.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

namespace ncds {

namespace {

int dataset_dim(const Dataset& demos) {
  if (demos.empty()) throw ConfigError("no demonstrations");
  const int dim = static_cast<int>(demos.front().dim());
  const double dt = demos.front().dt;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    demos[i].validate();
    if (demos[i].dim() != dim) throw ConfigError("demo " + std::to_string(i) + " has a different dimension");
    if (std::abs(demos[i].dt - dt) > 1e-9 * dt) {
      throw ConfigError("demo " + std::to_string(i) + " has a different sampling period");
    }
    if (demos[i].size() < 2) throw ConfigError("demo " + std::to_string(i) + " has fewer than two points");
  }
  return dim;
}

// Columns are states.
Eigen::MatrixXd stack_states(const Dataset& demos) {
  Eigen::Index n = 0;
  for (const auto& d : demos) n += d.size();
  Eigen::MatrixXd all(demos.front().dim(), n);
  Eigen::Index at = 0;
  for (const auto& d : demos) {
    all.middleCols(at, d.size()) = d.states.transpose();
    at += d.size();
  }
  return all;
}

Eigen::VectorXd row_std(const Eigen::MatrixXd& cols) {
  const Eigen::VectorXd mean = cols.rowwise().mean();
  Eigen::VectorXd sd = ((cols.colwise() - mean).array().square().rowwise().mean()).sqrt();
  for (auto& s : sd) {
    if (!(s > 1e-12)) s = 1;
  }
  return sd;
}

Eigen::VectorXd mean_end_state(const std::vector<Eigen::MatrixXd>& paths) {
  Eigen::VectorXd end = Eigen::VectorXd::Zero(paths.front().rows());
  for (const auto& p : paths) end += p.col(p.cols() - 1);
  return end / static_cast<double>(paths.size());
}

std::string to_string(TransformKind k) { return k == TransformKind::affine ? "affine" : "rq_spline"; }

TransformKind transform_from_string(const std::string& s) {
  if (s == "affine") return TransformKind::affine;
  if (s == "rq_spline") return TransformKind::rq_spline;
  throw ConfigError("unknown flow kind '" + s + "'");
}

}  // namespace

void FieldGrid::validate() const {
  if (!std::isfinite(xmin) || !std::isfinite(xmax) || !std::isfinite(ymin) || !std::isfinite(ymax) ||
      !(xmax > xmin) || !(ymax > ymin)) {
    throw ConfigError("grid bounds must be finite with xmin < xmax and ymin < ymax");
  }
  if (n < 2) throw ConfigError("grid needs at least 2 points per axis");
}

FieldGrid parse_field_grid(const std::string& text) {
  std::vector<double> v;
  std::size_t at = 0;
  while (at <= text.size()) {
    const std::size_t end = std::min(text.find(',', at), text.size());
    double x = 0;
    const auto r = std::from_chars(text.data() + at, text.data() + end, x);
    if (end == at || r.ec != std::errc() || r.ptr != text.data() + end) {
      throw ConfigError("cannot parse grid '" + text + "', expected xmin,xmax,ymin,ymax,n");
    }
    v.push_back(x);
    at = end + 1;
  }
  if (v.size() != 5 || v[4] != std::floor(v[4])) {
    throw ConfigError("cannot parse grid '" + text + "', expected xmin,xmax,ymin,ymax,n");
  }
  FieldGrid g{v[0], v[1], v[2], v[3], static_cast<int>(v[4])};
  g.validate();
  return g;
}

Eigen::MatrixXd sample_field(const ContractiveField& field, const FieldGrid& grid) {
  grid.validate();
  if (field.dim != 2) throw ConfigError("field export needs a 2-D field, got dimension " + std::to_string(field.dim));
  const int n = grid.n;
  Eigen::MatrixXd pts(2, n * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      pts(0, i * n + j) = grid.xmin + (grid.xmax - grid.xmin) * j / (n - 1);
      pts(1, i * n + j) = grid.ymin + (grid.ymax - grid.ymin) * i / (n - 1);
    }
  }
  Eigen::MatrixXd rows(n * n, 4);
  rows.leftCols(2) = pts.transpose();
  rows.rightCols(2) = velocity_batch(field, pts, field.quad).transpose();
  return rows;
}

void save_field_csv(const Eigen::MatrixXd& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out.precision(17);
  out << "x1,x2,vx1,vx2\n";
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    out << rows(r, 0) << ',' << rows(r, 1) << ',' << rows(r, 2) << ',' << rows(r, 3) << '\n';
  }
}

std::string to_string(PoseLayout layout) { return layout == PoseLayout::pose ? "pose" : "euclidean"; }

PoseLayout pose_layout_from_string(const std::string& name) {
  if (name == "pose") return PoseLayout::pose;
  if (name == "euclidean") return PoseLayout::euclidean;
  throw ConfigError("unknown pose layout '" + name + "'");
}

TrainConfig TrainConfig::test_preset() {
  TrainConfig c;
  c.jac_hidden = {100, 100};
  c.epochs_vae = 300;
  c.epochs_jac = 300;
  c.lr_jac = 3e-3;
  c.batch_size = 64;
  return c;
}

void TrainConfig::validate() const {
  if (latent_dim < 0) throw ConfigError("latent_dim must be nonnegative");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
  if (epochs_vae < 0 || epochs_jac < 0) throw ConfigError("epoch counts must be nonnegative");
  if (!(lr_vae > 0) || !(lr_jac > 0)) throw ConfigError("learning rates must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (train_quad_steps < 1) throw ConfigError("train_quad_steps must be positive");
  if (k_trim < 0) throw ConfigError("k_trim must be nonnegative");
  if (jac_hidden.empty()) throw ConfigError("jac_hidden needs at least one layer");
  for (int h : jac_hidden) {
    if (h < 1) throw ConfigError("jac_hidden sizes must be positive");
  }
  if (flow_layers < 0) throw ConfigError("flow_layers must be nonnegative");
  quad.validate();
}

void TrainConfig::validate(int data_dim) const {
  validate();
  if (latent_dim > 0 && latent_dim >= data_dim) {
    throw ConfigError("latent_dim " + std::to_string(latent_dim) + " must be below the data dimension " +
                      std::to_string(data_dim));
  }
  if (layout == PoseLayout::pose && data_dim < 3) throw ConfigError("pose layout needs at least 3 dimensions");
  if (layout == PoseLayout::pose && latent_dim == 0) {
    throw ConfigError("pose layout needs latent_dim > 0 so orientations stay inside the first cover");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"latent_dim", c.latent_dim},
       {"eps", c.eps},
       {"epochs_vae", c.epochs_vae},
       {"epochs_jac", c.epochs_jac},
       {"lr_vae", c.lr_vae},
       {"lr_jac", c.lr_jac},
       {"batch_size", c.batch_size},
       {"activation", to_string(c.activation)},
       {"quad", c.quad},
       {"train_quad_steps", c.train_quad_steps},
       {"seed", c.seed},
       {"k_trim", c.k_trim},
       {"jac_hidden", c.jac_hidden},
       {"flow_kind", to_string(c.flow_kind)},
       {"flow_layers", c.flow_layers},
       {"layout", to_string(c.layout)},
       {"baseline", c.baseline}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  c = TrainConfig{};
  try {
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.eps = j.value("eps", c.eps);
    c.epochs_vae = j.value("epochs_vae", c.epochs_vae);
    c.epochs_jac = j.value("epochs_jac", c.epochs_jac);
    c.lr_vae = j.value("lr_vae", c.lr_vae);
    c.lr_jac = j.value("lr_jac", c.lr_jac);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("activation")) c.activation = activation_from_string(j.at("activation").get<std::string>());
    if (j.contains("quad")) c.quad = j.at("quad").get<QuadratureSettings>();
    c.train_quad_steps = j.value("train_quad_steps", c.train_quad_steps);
    c.seed = j.value("seed", c.seed);
    c.k_trim = j.value("k_trim", c.k_trim);
    c.jac_hidden = j.value("jac_hidden", c.jac_hidden);
    if (j.contains("flow_kind")) c.flow_kind = transform_from_string(j.at("flow_kind").get<std::string>());
    c.flow_layers = j.value("flow_layers", c.flow_layers);
    if (j.contains("layout")) c.layout = pose_layout_from_string(j.at("layout").get<std::string>());
    c.baseline = j.value("baseline", c.baseline);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in).get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void to_json(nlohmann::json& j, const TrainLog& l) {
  j = {{"elbo_history", l.elbo_history},
       {"jac_loss_history", l.jac_loss_history},
       {"final_jac_loss", l.final_jac_loss},
       {"mean_velocity_loss", l.mean_velocity_loss}};
}

void from_json(const nlohmann::json& j, TrainLog& l) {
  l.elbo_history = j.value("elbo_history", std::vector<double>{});
  l.jac_loss_history = j.value("jac_loss_history", std::vector<double>{});
  l.final_jac_loss = j.value("final_jac_loss", 0.0);
  l.mean_velocity_loss = j.value("mean_velocity_loss", 0.0);
}

void NcdsModel::validate() const {
  field.validate();
  if (vae) {
    vae->validate();
    if (field.dim != vae->d) throw ConfigError("field dimension must equal the latent dimension");
    if ((layout == PoseLayout::pose) != (vae->layout == OutputLayout::pose)) {
      throw ConfigError("model layout disagrees with the VAE output layout");
    }
  } else if (layout == PoseLayout::pose) {
    throw ConfigError("pose layout needs a VAE");
  }
}

void to_json(nlohmann::json& j, const NcdsModel& m) {
  j = {{"format", "ncds-model"},
       {"layout", to_string(m.layout)},
       {"field", m.field},
       {"config", m.config},
       {"log", m.log}};
  j["vae"] = m.vae ? nlohmann::json(*m.vae) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, NcdsModel& m) {
  try {
    m.layout = pose_layout_from_string(j.value("layout", std::string("euclidean")));
    m.field = j.at("field").get<ContractiveField>();
    m.config = j.contains("config") ? j.at("config").get<TrainConfig>() : TrainConfig{};
    m.log = j.contains("log") ? j.at("log").get<TrainLog>() : TrainLog{};
    if (j.contains("vae") && !j.at("vae").is_null()) {
      m.vae = j.at("vae").get<InjectiveModel>();
    } else {
      m.vae.reset();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model: ") + e.what());
  }
  m.validate();
}

NcdsModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model " + path);
  try {
    return nlohmann::json::parse(in).get<NcdsModel>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void save_model(const NcdsModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write model " + path);
  out << nlohmann::json(model).dump() << '\n';
  if (!out) throw ConfigError("failed writing model " + path);
}

std::uint64_t params_hash(const Eigen::VectorXd& p) {
  std::uint64_t h = 1469598103934665603ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(p.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(p.size()) * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

NcdsModel train_field_stage(const TrainConfig& config, const Dataset& demos, std::optional<InjectiveModel> vae,
                            const TrainCallbacks& callbacks) {
  const int big_d = dataset_dim(demos);
  config.validate(big_d);
  const double dt = demos.front().dt;

  std::vector<Eigen::MatrixXd> paths;
  for (const auto& d : demos) {
    const Eigen::MatrixXd states = d.states.transpose();
    paths.push_back(vae ? encode_mean_batch(*vae, states) : states);
    if (!paths.back().allFinite()) throw NumericError("encoded demonstrations are not finite");
  }
  const int dim = static_cast<int>(paths.front().rows());

  // Pairs (z_t, z_t + dt zdot_t); in data space this is just consecutive states.
  Eigen::Index n = 0;
  for (const auto& p : paths) n += vae ? p.cols() : p.cols() - 1;
  Eigen::MatrixXd z_t(dim, n), z_next(dim, n);
  Eigen::Index at = 0;
  for (const auto& p : paths) {
    if (vae) {
      const Eigen::MatrixXd v = estimate_latent_velocities(p, dt);
      z_t.middleCols(at, p.cols()) = p;
      z_next.middleCols(at, p.cols()) = p + dt * v;
      at += p.cols();
    } else {
      z_t.middleCols(at, p.cols() - 1) = p.leftCols(p.cols() - 1);
      z_next.middleCols(at, p.cols() - 1) = p.rightCols(p.cols() - 1);
      at += p.cols() - 1;
    }
  }

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  NcdsModel model;
  model.layout = config.layout;
  model.config = config;
  model.field = ContractiveField::create(dim, config.jac_hidden, config.activation, config.eps, rng);
  model.field.x0 = mean_end_state(paths);
  model.field.input_scale = row_std(z_t);
  model.field.quad = config.quad;
  model.field.mode = config.baseline ? JacobianMode::unconstrained : JacobianMode::negdef;

  const Eigen::VectorXd mean_step = (z_next - z_t).rowwise().mean();
  model.log.mean_velocity_loss = ((z_next - z_t).colwise() - mean_step).colwise().squaredNorm().mean();

  const std::uint64_t vae_hash = vae ? params_hash(vae->params()) : 0;
  FieldTrainSettings fs;
  fs.epochs = config.epochs_jac;
  fs.lr = config.lr_jac;
  fs.batch_size = config.batch_size;
  fs.quad_steps = config.train_quad_steps;
  fs.seed = config.seed + 1;
  fs.on_epoch = callbacks.on_jac_epoch;
  const FieldTrainResult r = train_field(model.field, z_t, z_next, dt, fs);
  model.log.jac_loss_history = r.loss_history;
  model.log.final_jac_loss = r.final_loss;
  if (vae && params_hash(vae->params()) != vae_hash) {
    throw std::logic_error("VAE parameters changed while training the field");
  }
  model.vae = std::move(vae);
  model.validate();
  return model;
}

NcdsModel train(const TrainConfig& config, const Dataset& demos, const TrainCallbacks& callbacks) {
  const int big_d = dataset_dim(demos);
  config.validate(big_d);
  if (config.latent_dim == 0) return train_field_stage(config, demos, std::nullopt, callbacks);

  std::mt19937_64 rng(config.seed);
  InjectiveModel::Options o;
  o.kind = config.flow_kind;
  o.n_layers = config.flow_layers;
  o.layout = config.layout == PoseLayout::pose ? OutputLayout::pose : OutputLayout::euclidean;
  InjectiveModel vae = InjectiveModel::create(config.latent_dim, big_d, o, rng);
  const Eigen::MatrixXd states = stack_states(demos);
  vae.shift = states.rowwise().mean();
  vae.scale = row_std(states);
  if (config.layout == PoseLayout::pose) {
    vae.shift.tail(3).setZero();
    vae.scale.tail(3).setOnes();
    for (Eigen::Index c = 0; c < states.cols(); ++c) {
      if (!(states.col(c).tail<3>().norm() < std::numbers::pi)) {
        throw ConfigError("orientation at state " + std::to_string(c) + " lies outside the first cover");
      }
    }
  }

  VaeTrainSettings vs;
  vs.epochs = config.epochs_vae;
  vs.lr = config.lr_vae;
  vs.batch_size = config.batch_size;
  vs.seed = config.seed + 2;
  vs.on_epoch = callbacks.on_vae_epoch;
  std::vector<double> elbo_history = train_vae(vae, states, vs);

  NcdsModel model = train_field_stage(config, demos, std::move(vae), callbacks);
  model.log.elbo_history = std::move(elbo_history);
  return model;
}

Eigen::VectorXd to_coordinates(const NcdsModel& model, const PoseState& state) {
  if (model.layout == PoseLayout::euclidean) {
    if (state.rotation) throw std::invalid_argument("euclidean model takes no rotation");
    return state.position;
  }
  if (!state.rotation) throw std::invalid_argument("pose model needs a rotation");
  Eigen::VectorXd x(state.position.size() + 3);
  x << state.position, log_map(*state.rotation);
  return x;
}

Eigen::VectorXd control_velocity(const NcdsModel& model, const Eigen::VectorXd& x,
                                 const std::optional<Obstacle>& obstacle) {
  if (x.size() != model.data_dim()) {
    throw std::invalid_argument("state has dimension " + std::to_string(x.size()) + ", model expects " +
                                std::to_string(model.data_dim()));
  }
  if (model.layout == PoseLayout::pose && !(x.tail<3>().norm() < std::numbers::pi)) {
    throw NumericError("orientation lies outside the first cover");
  }
  Eigen::VectorXd xdot;
  if (model.vae) {
    const Eigen::VectorXd z = encode_mean(*model.vae, x);
    xdot = push_velocity(*model.vae, z, velocity(model.field, z));
  } else {
    xdot = velocity(model.field, x);
  }
  if (!obstacle) return xdot;
  const Eigen::Index pos = model.layout == PoseLayout::pose ? x.size() - 3 : x.size();
  if (obstacle->dim() != pos) throw std::invalid_argument("obstacle dimension does not match the position block");
  xdot.head(pos) = modulated_velocity(obstacle, x.head(pos), xdot.head(pos));
  return xdot;
}

Eigen::VectorXd control_step(const NcdsModel& model, const PoseState& state,
                             const std::optional<Obstacle>& obstacle) {
  return control_velocity(model, to_coordinates(model, state), obstacle);
}

RolloutResult rollout(const NcdsModel& model, const Eigen::VectorXd& start, const RolloutSettings& settings,
                      const std::optional<Obstacle>& obstacle) {
  const VelocityFn f = [&](const Eigen::VectorXd& x) { return control_velocity(model, x, obstacle); };
  StatePredicate admissible;
  if (obstacle) {
    const Eigen::Index pos = obstacle->dim();
    admissible = [&, pos](const Eigen::VectorXd& x) { return gamma(*obstacle, x.head(pos)) >= 1; };
  }
  return rollout(f, start, settings, admissible);
}

RolloutFn rollout_fn(const NcdsModel& model, RolloutMethod method, const std::optional<Obstacle>& obstacle) {
  return [&model, method, obstacle](const Eigen::VectorXd& start, int horizon, double dt) {
    RolloutSettings s;
    s.dt = dt;
    s.horizon = horizon;
    s.method = method;
    return rollout(model, start, s, obstacle);
  };
}

double benchmark_step_time(const NcdsModel& model, const Eigen::VectorXd& x, int n) {
  if (n < 1) throw ConfigError("benchmark needs at least one call");
  Eigen::VectorXd sink = Eigen::VectorXd::Zero(x.size());
  for (int i = 0; i < 10; ++i) sink += control_velocity(model, x);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < n; ++i) sink += control_velocity(model, x);
  const auto t1 = std::chrono::steady_clock::now();
  if (!sink.allFinite()) throw NumericError("benchmark produced non-finite velocities");
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / n;
}

}  // namespace ncds
