#include "ncds/data.hpp"
#include "ncds/diagnostics.hpp"
#include "ncds/error.hpp"
#include "ncds/metrics.hpp"
#include "ncds/pipeline.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace {

using namespace ncds;

constexpr int kConfigExit = 2;
constexpr int kNumericExit = 3;

std::vector<double> parse_numbers(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::size_t at = 0;
  while (at <= text.size()) {
    const std::size_t end = std::min(text.find(',', at), text.size());
    std::string item = text.substr(at, end - at);
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    double v = 0;
    const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || r.ec != std::errc() || r.ptr != item.data() + item.size()) {
      throw ConfigError("cannot parse " + what + " entry '" + item + "'");
    }
    out.push_back(v);
    at = end + 1;
  }
  return out;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// A CSV trajectory file (first row is used) or a comma-separated vector.
Eigen::VectorXd parse_start(const std::string& arg) {
  if (std::filesystem::is_regular_file(arg)) return load_trajectory_csv(arg).states.row(0).transpose();
  return to_vector(parse_numbers(arg, "start"));
}

void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << j.dump(2) << '\n';
}

Eigen::VectorXd default_state(const NcdsModel& m) {
  // A point one input_scale away from the attractor, in data space.
  const Eigen::VectorXd z = m.field.x0 + m.field.input_scale;
  return m.vae ? decode(*m.vae, z) : z;
}

struct TrainArgs {
  std::string data, config, out, log;
};

int run_train(const TrainArgs& a) {
  const TrainConfig config = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  const Dataset demos = preprocess(load_trajectories(a.data), config.k_trim);
  TrainCallbacks cb;
  cb.on_vae_epoch = [&](int e, double v) {
    if (e % 50 == 0 || e + 1 == config.epochs_vae) std::cerr << "vae epoch " << e << " elbo " << v << '\n';
  };
  cb.on_jac_epoch = [&](int e, double v) {
    if (e % 50 == 0 || e + 1 == config.epochs_jac) std::cerr << "field epoch " << e << " loss " << v << '\n';
  };
  const NcdsModel model = train(config, demos, cb);
  save_model(model, a.out);
  if (!a.log.empty()) write_json(model.log, a.log);
  std::cout << "final L_Jac " << model.log.final_jac_loss << " (mean-velocity model "
            << model.log.mean_velocity_loss << ")\n";
  return 0;
}

struct RolloutArgs {
  std::string model, start, obstacle, out, method = "rk4";
  int horizon = 500;
  double dt = 0.02;
};

int run_rollout(const RolloutArgs& a) {
  const NcdsModel model = load_model(a.model);
  std::optional<Obstacle> ob;
  if (!a.obstacle.empty()) ob = load_obstacle(a.obstacle);
  RolloutSettings s;
  s.dt = a.dt;
  s.horizon = a.horizon;
  if (a.method == "euler") {
    s.method = RolloutMethod::euler;
  } else if (a.method != "rk4") {
    throw ConfigError("unknown method '" + a.method + "'");
  }
  s.validate();
  const RolloutResult r = rollout(model, parse_start(a.start), s, ob);
  save_trajectory_csv(r.trajectory, a.out);
  if (!r.ok) throw NumericError("rollout stopped early: " + r.error);
  return 0;
}

struct EvalArgs {
  std::string model, data, report;
  int n_rollouts = 5;
  double start_sd = 0;
  std::uint64_t seed = 0;
};

int run_eval(const EvalArgs& a) {
  const NcdsModel model = load_model(a.model);
  const Dataset demos = preprocess(load_trajectories(a.data), model.config.k_trim);
  DtwdReportSettings s;
  s.n_rollouts = a.n_rollouts;
  s.start_sd = a.start_sd;
  s.seed = a.seed;
  const DtwdReport r = dtwd_report(rollout_fn(model), demos, s);
  std::cout << format_table(r);
  if (!a.report.empty()) {
    nlohmann::json j = r;
    j["final_jac_loss"] = model.log.final_jac_loss;
    j["mean_velocity_loss"] = model.log.mean_velocity_loss;
    write_json(j, a.report);
  }
  return 0;
}

struct ExportArgs {
  std::string model, grid, out;
};

int run_export(const ExportArgs& a) {
  const NcdsModel model = load_model(a.model);
  save_field_csv(sample_field(model.field, parse_field_grid(a.grid)), a.out);
  return 0;
}

struct GenArgs {
  std::string kind = "sine", out, orientation;
  int n_demos = 7, n_points = 200;
  double noise = 1.0, dt = 0.02;
  std::uint64_t seed = 0;
};

int run_gen(const GenArgs& a) {
  ShapeSettings s;
  s.n_demos = a.n_demos;
  s.n_points = a.n_points;
  s.noise_sd = a.noise;
  s.dt = a.dt;
  s.seed = a.seed;
  Dataset demos;
  std::vector<std::string> columns;
  if (a.kind == "lasa8d") {
    std::vector<Dataset> sets;
    int k = 0;
    for (auto shape : {ShapeKind::angle, ShapeKind::line, ShapeKind::sine, ShapeKind::jshape}) {
      ShapeSettings si = s;
      si.seed = s.seed + k++;
      sets.push_back(synth_shape(shape, si));
    }
    demos = concat_datasets(sets);
  } else if (a.kind == "pose") {
    std::optional<ShapeKind> orient;
    if (!a.orientation.empty()) orient = shape_from_string(a.orientation);
    demos = synth_pose_dataset(ShapeKind::sine, orient, s);
    columns = {"x", "y", "z", "rx", "ry", "rz"};
  } else {
    demos = synth_shape(shape_from_string(a.kind), s);
  }
  std::filesystem::create_directories(a.out);
  save_dataset(demos, a.out, columns);
  std::cout << "wrote " << demos.size() << " demos to " << a.out << '\n';
  return 0;
}

struct BenchArgs {
  std::string model, state;
  int n = 100;
};

int run_bench(const BenchArgs& a) {
  const NcdsModel model = load_model(a.model);
  const Eigen::VectorXd x = a.state.empty() ? default_state(model) : to_vector(parse_numbers(a.state, "state"));
  const double ms = benchmark_step_time(model, x, a.n);
  std::cout << "mean step time " << ms << " ms over " << a.n << " calls (data dim " << model.data_dim()
            << ", field dim " << model.field.dim << ")\n";
  return 0;
}

struct CertifyArgs {
  std::string model, lower, upper, out;
  int samples = 1000;
  std::uint64_t seed = 0;
};

int run_certify(const CertifyArgs& a) {
  const NcdsModel model = load_model(a.model);
  Box box;
  box.lower = a.lower.empty() ? Eigen::VectorXd(model.field.x0 - 3 * model.field.input_scale)
                              : to_vector(parse_numbers(a.lower, "lower"));
  box.upper = a.upper.empty() ? Eigen::VectorXd(model.field.x0 + 3 * model.field.input_scale)
                              : to_vector(parse_numbers(a.upper, "upper"));
  if (box.lower.size() != model.field.dim || box.upper.size() != model.field.dim) {
    throw ConfigError("box bounds must have the field dimension " + std::to_string(model.field.dim));
  }
  const CertifyReport r = certify_contraction(model.field, a.samples, box, a.seed);
  const nlohmann::json j = r;
  if (a.out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json(j, a.out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  CLI::App app{"Neural contractive dynamical systems"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a directory of demonstrations");
  train_cmd->add_option("--data", ta.data, "Directory of trajectory CSVs")->required();
  train_cmd->add_option("--config", ta.config, "JSON training config");
  train_cmd->add_option("--out", ta.out, "Output model JSON")->required();
  train_cmd->add_option("--log", ta.log, "Optional JSON with loss curves");

  RolloutArgs ra;
  auto* rollout_cmd = app.add_subcommand("rollout", "Integrate the learned system from a start state");
  rollout_cmd->add_option("--model", ra.model)->required();
  rollout_cmd->add_option("--start", ra.start, "CSV file (first row) or comma-separated state")->required();
  rollout_cmd->add_option("--horizon", ra.horizon);
  rollout_cmd->add_option("--dt", ra.dt);
  rollout_cmd->add_option("--obstacle", ra.obstacle, "Obstacle JSON");
  rollout_cmd->add_option("--method", ra.method, "rk4 or euler");
  rollout_cmd->add_option("--out", ra.out)->required();

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "DTWD report against demonstrations");
  eval_cmd->add_option("--model", ea.model)->required();
  eval_cmd->add_option("--data", ea.data)->required();
  eval_cmd->add_option("--report", ea.report);
  eval_cmd->add_option("--rollouts", ea.n_rollouts);
  eval_cmd->add_option("--start-sd", ea.start_sd);
  eval_cmd->add_option("--seed", ea.seed);

  ExportArgs xa;
  auto* export_cmd = app.add_subcommand("export-field", "Sample a 2-D field on a grid");
  export_cmd->add_option("--model", xa.model)->required();
  export_cmd->add_option("--grid", xa.grid, "xmin,xmax,ymin,ymax,n")->required();
  export_cmd->add_option("--out", xa.out)->required();

  GenArgs ga;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic demonstration set");
  gen_cmd->add_option("--kind", ga.kind, "sine, angle, line, jshape, lasa8d or pose");
  gen_cmd->add_option("--out", ga.out)->required();
  gen_cmd->add_option("--demos", ga.n_demos);
  gen_cmd->add_option("--points", ga.n_points);
  gen_cmd->add_option("--noise", ga.noise);
  gen_cmd->add_option("--dt", ga.dt);
  gen_cmd->add_option("--seed", ga.seed);
  gen_cmd->add_option("--orientation", ga.orientation, "Shape for the orientation curve (pose only)");

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "Time a single control step");
  bench_cmd->add_option("--model", ba.model)->required();
  bench_cmd->add_option("--state", ba.state);
  bench_cmd->add_option("-n", ba.n);

  CertifyArgs ca;
  auto* certify_cmd = app.add_subcommand("certify", "Sampled contraction check of the field");
  certify_cmd->add_option("--model", ca.model)->required();
  certify_cmd->add_option("--samples", ca.samples);
  certify_cmd->add_option("--lower", ca.lower, "Comma-separated lower box corner");
  certify_cmd->add_option("--upper", ca.upper, "Comma-separated upper box corner");
  certify_cmd->add_option("--seed", ca.seed);
  certify_cmd->add_option("--out", ca.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (*train_cmd) return run_train(ta);
    if (*rollout_cmd) return run_rollout(ra);
    if (*eval_cmd) return run_eval(ea);
    if (*export_cmd) return run_export(xa);
    if (*gen_cmd) return run_gen(ga);
    if (*bench_cmd) return run_bench(ba);
    if (*certify_cmd) return run_certify(ca);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
