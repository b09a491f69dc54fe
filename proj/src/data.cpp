#include "ncds/data.hpp"

#include "ncds/error.hpp"
#include "ncds/liegroup.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace ncds {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  double v = 0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  if (!s.empty() && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || s.empty()) throw ConfigError(where + ": cannot parse '" + s + "'");
  return v;
}

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

Table read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
  t.header = split(line);
  if (t.header.size() < 2 || t.header[0] != "t") {
    throw ConfigError(path + ": header must start with 't' followed by at least one state column");
  }
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split(line);
    const std::string where = path + " row " + std::to_string(row);
    if (cells.size() != t.header.size()) {
      throw ConfigError(where + ": expected " + std::to_string(t.header.size()) + " columns, got " +
                        std::to_string(cells.size()));
    }
    std::vector<double> values;
    for (const auto& c : cells) values.push_back(parse_number(c, where));
    t.rows.push_back(std::move(values));
  }
  if (t.rows.empty()) throw ConfigError(path + ": no samples");
  return t;
}

// Checks that t increases with a constant step and returns it.
double uniform_dt(const Table& t, const std::string& path) {
  if (t.rows.size() == 1) return 1.0;
  const double dt = t.rows[1][0] - t.rows[0][0];
  for (std::size_t i = 1; i < t.rows.size(); ++i) {
    const double step = t.rows[i][0] - t.rows[i - 1][0];
    const std::string where = path + " row " + std::to_string(i + 2);
    if (!(step > 0)) throw ConfigError(where + ": time is not increasing");
    if (std::abs(step - dt) > 1e-6 * dt) throw ConfigError(where + ": non-uniform sampling period");
  }
  return dt;
}

// Waypoint profile of the base curves, as a function of w = 1 - u running
// from 1 at the start to 0 at the target. Every curve is exactly 0 at w = 0.
Eigen::Vector2d base_curve(ShapeKind kind, double w) {
  switch (kind) {
    case ShapeKind::line:
      return w * Eigen::Vector2d(-36, -12);
    case ShapeKind::sine:
      return {-40 * w, 8 * std::sin(3 * std::numbers::pi * w)};
    case ShapeKind::angle: {
      const Eigen::Vector2d corner(-12, 24), start(-40, 4);
      if (w <= 0.5) return 2 * w * corner;
      return corner + (2 * w - 1) * (start - corner);
    }
    case ShapeKind::jshape: {
      // Straight drop of length 25 onto a half circle of radius 15.
      const double r = 15, drop = 25;
      const double arc = std::numbers::pi * r;
      const double wa = arc / (arc + drop);
      if (w <= wa) {
        const double phi = std::numbers::pi * w / wa;
        return {-r + r * std::cos(phi), -r * std::sin(phi)};
      }
      return {-2 * r, drop * (w - wa) / (1 - wa)};
    }
  }
  return Eigen::Vector2d::Zero();
}

}  // namespace

Trajectory load_trajectory_csv(const std::string& path) {
  const Table t = read_table(path);
  Trajectory traj;
  traj.dt = uniform_dt(t, path);
  const Eigen::Index d = static_cast<Eigen::Index>(t.header.size()) - 1;
  traj.states.resize(static_cast<Eigen::Index>(t.rows.size()), d);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (Eigen::Index k = 0; k < d; ++k) traj.states(static_cast<Eigen::Index>(i), k) = t.rows[i][k + 1];
  }
  if (!traj.states.allFinite()) throw ConfigError(path + ": non-finite state");
  return traj;
}

void save_trajectory_csv(const Trajectory& traj, const std::string& path,
                         const std::vector<std::string>& columns) {
  if (!columns.empty() && static_cast<Eigen::Index>(columns.size()) != traj.dim()) {
    throw std::invalid_argument("column names do not match the trajectory dimension");
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "t";
  for (Eigen::Index k = 0; k < traj.dim(); ++k) {
    out << "," << (columns.empty() ? "x" + std::to_string(k + 1) : columns[k]);
  }
  out << "\n";
  for (Eigen::Index i = 0; i < traj.size(); ++i) {
    out << format_number(static_cast<double>(i) * traj.dt);
    for (Eigen::Index k = 0; k < traj.dim(); ++k) out << "," << format_number(traj.states(i, k));
    out << "\n";
  }
  if (!out) throw ConfigError("failed writing " + path);
}

Trajectory load_pose_rotation_csv(const std::string& path) {
  const Table t = read_table(path);
  if (t.header.size() != 13) throw ConfigError(path + ": expected t,x,y,z and nine rotation entries");
  Trajectory traj;
  traj.dt = uniform_dt(t, path);
  traj.states.resize(static_cast<Eigen::Index>(t.rows.size()), 6);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    Eigen::Matrix3d m;
    m << r[4], r[5], r[6], r[7], r[8], r[9], r[10], r[11], r[12];
    const auto row = static_cast<Eigen::Index>(i);
    traj.states.block(row, 0, 1, 3) << r[1], r[2], r[3];
    try {
      traj.states.block(row, 3, 1, 3) = log_map(m).transpose();
    } catch (const std::exception& e) {
      throw ConfigError(path + " row " + std::to_string(i + 2) + ": " + e.what());
    }
  }
  return traj;
}

Dataset load_trajectories(const std::string& dir) {
  std::vector<std::string> files;
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw ConfigError("not a directory: " + dir);
  const fs::path manifest = root / "manifest.json";
  std::optional<double> manifest_dt;
  std::optional<Eigen::Index> manifest_dim;
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    try {
      const auto j = nlohmann::json::parse(in);
      for (const auto& f : j.at("files")) files.push_back((root / f.get<std::string>()).string());
      if (j.contains("dt")) manifest_dt = j.at("dt").get<double>();
      if (j.contains("dim")) manifest_dim = j.at("dim").get<Eigen::Index>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(manifest.string() + ": " + e.what());
    }
  } else {
    for (const auto& entry : fs::directory_iterator(root)) {
      if (entry.path().extension() == ".csv") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
  }
  if (files.empty()) throw ConfigError("no trajectory files in " + dir);
  Dataset out;
  for (const auto& f : files) {
    out.push_back(load_trajectory_csv(f));
    if (out.back().dim() != out.front().dim()) {
      throw ConfigError(f + ": dimension " + std::to_string(out.back().dim()) + " differs from " +
                        std::to_string(out.front().dim()));
    }
    if (manifest_dt && out.back().size() > 1 && std::abs(out.back().dt - *manifest_dt) > 1e-6 * *manifest_dt) {
      throw ConfigError(f + ": sampling period differs from the manifest");
    }
  }
  if (manifest_dim && *manifest_dim != out.front().dim()) {
    throw ConfigError(dir + ": manifest dimension does not match the files");
  }
  return out;
}

void save_dataset(const Dataset& demos, const std::string& dir, const std::vector<std::string>& columns) {
  if (demos.empty()) throw std::invalid_argument("save_dataset: no demonstrations");
  fs::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < demos.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "demo_%03zu.csv", i);
    save_trajectory_csv(demos[i], (fs::path(dir) / name).string(), columns);
    files.push_back(name);
  }
  const nlohmann::json manifest = {{"files", files}, {"dt", demos.front().dt}, {"dim", demos.front().dim()}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw ConfigError("failed writing manifest in " + dir);
}

Eigen::MatrixXd forward_difference_velocities(const Eigen::MatrixXd& states, double dt) {
  if (!(dt > 0)) throw std::invalid_argument("dt must be positive");
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(states.rows(), states.cols());
  for (Eigen::Index i = 0; i + 1 < states.rows(); ++i) v.row(i) = (states.row(i + 1) - states.row(i)) / dt;
  return v;
}

Dataset preprocess(const Dataset& demos, int k_trim) {
  if (demos.empty()) throw ConfigError("preprocess: no demonstrations");
  if (k_trim < 0) throw ConfigError("preprocess: k_trim must be nonnegative");
  const Eigen::Index dim = demos.front().dim();
  Eigen::RowVectorXd target = Eigen::RowVectorXd::Zero(dim);
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const auto& d = demos[i];
    if (d.dim() != dim) throw ConfigError("preprocess: demos differ in dimension");
    if (d.size() < k_trim + 2) {
      throw ConfigError("preprocess: demo " + std::to_string(i) + " has " + std::to_string(d.size()) +
                        " points, needs at least " + std::to_string(k_trim + 2));
    }
    target += d.states.bottomRows(1);
  }
  target /= static_cast<double>(demos.size());

  Dataset out;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const auto& d = demos[i];
    Trajectory t;
    t.dt = d.dt;
    const Eigen::RowVectorXd shift = target - d.states.bottomRows(1);
    t.states = d.states.bottomRows(d.size() - k_trim).rowwise() + shift;
    t.velocities = forward_difference_velocities(t.states, t.dt);
    const Eigen::VectorXd speed = t.velocities.rowwise().norm();
    const double tol = 1e-6 * speed.maxCoeff();
    for (Eigen::Index r = 0; r + 1 < t.size(); ++r) {
      if (speed[r] <= tol) {
        throw ConfigError("preprocess: demo " + std::to_string(i) + " is at rest at point " +
                          std::to_string(r) + " before reaching the target");
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::sine:
      return "sine";
    case ShapeKind::angle:
      return "angle";
    case ShapeKind::line:
      return "line";
    case ShapeKind::jshape:
      return "jshape";
  }
  return "sine";
}

ShapeKind shape_from_string(const std::string& name) {
  for (ShapeKind k : {ShapeKind::sine, ShapeKind::angle, ShapeKind::line, ShapeKind::jshape}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown shape '" + name + "' (expected sine, angle, line or jshape)");
}

Dataset synth_shape(ShapeKind kind, const ShapeSettings& s) {
  if (s.n_points < 10) throw ConfigError("synth_shape: n_points must be at least 10");
  if (s.n_demos < 1) throw ConfigError("synth_shape: n_demos must be positive");
  if (!(s.dt > 0) || s.noise_sd < 0) throw ConfigError("synth_shape: invalid dt or noise");
  std::mt19937_64 rng(s.seed);
  std::normal_distribution<double> noise(0, 1);
  Dataset out;
  for (int d = 0; d < s.n_demos; ++d) {
    Eigen::Vector2d delta[3];
    for (auto& v : delta) v = s.noise_sd * Eigen::Vector2d(noise(rng), noise(rng));
    Trajectory t;
    t.dt = s.dt;
    t.states.resize(s.n_points, 2);
    for (int k = 0; k < s.n_points; ++k) {
      const double tau = static_cast<double>(k) / (s.n_points - 1);
      // Ease-out: fastest at the start, coming to rest only at the target.
      const double w = (1 - tau) * (1 - tau);
      // In terms of w the jitter weights (1 - u), sin(pi u), sin(2 pi u) are
      // exactly zero at the target.
      const Eigen::Vector2d p = base_curve(kind, w) + w * delta[0] +
                                std::sin(std::numbers::pi * w) * delta[1] -
                                std::sin(2 * std::numbers::pi * w) * delta[2];
      t.states.row(k) = p.transpose();
    }
    out.push_back(std::move(t));
  }
  return out;
}

Trajectory resample(const Trajectory& traj, Eigen::Index n) {
  if (n < 2 || traj.size() < 2) throw std::invalid_argument("resample needs at least two points");
  Trajectory out;
  out.dt = traj.dt * static_cast<double>(traj.size() - 1) / static_cast<double>(n - 1);
  out.states.resize(n, traj.dim());
  for (Eigen::Index k = 0; k < n; ++k) {
    const double s = static_cast<double>(k) * static_cast<double>(traj.size() - 1) / static_cast<double>(n - 1);
    const auto i = std::min<Eigen::Index>(static_cast<Eigen::Index>(s), traj.size() - 2);
    const double a = s - static_cast<double>(i);
    out.states.row(k) = (1 - a) * traj.states.row(i) + a * traj.states.row(i + 1);
  }
  return out;
}

Dataset concat_datasets(const std::vector<Dataset>& sets) {
  if (sets.empty()) throw ConfigError("concat_datasets: no datasets");
  const std::size_t n_demos = sets.front().size();
  Eigen::Index min_len = std::numeric_limits<Eigen::Index>::max();
  bool equal = true;
  for (const auto& set : sets) {
    if (set.size() != n_demos || n_demos == 0) throw ConfigError("concat_datasets: demo counts differ");
    for (const auto& t : set) {
      if (t.size() != sets.front().front().size()) equal = false;
      min_len = std::min(min_len, t.size());
    }
  }
  Dataset out;
  for (std::size_t d = 0; d < n_demos; ++d) {
    std::vector<Trajectory> parts;
    Eigen::Index dim = 0;
    for (const auto& set : sets) {
      parts.push_back(equal ? set[d] : resample(set[d], min_len));
      dim += parts.back().dim();
    }
    Trajectory t;
    t.dt = parts.front().dt;
    t.states.resize(parts.front().size(), dim);
    Eigen::Index col = 0;
    for (const auto& p : parts) {
      t.states.middleCols(col, p.dim()) = p.states;
      col += p.dim();
    }
    out.push_back(std::move(t));
  }
  return out;
}

Dataset synth_pose_dataset(ShapeKind position, std::optional<ShapeKind> orientation,
                           const ShapeSettings& settings) {
  const Dataset pos = synth_shape(position, settings);
  Dataset rot;
  if (orientation) {
    ShapeSettings s = settings;
    s.seed = settings.seed + 1;
    rot = synth_shape(*orientation, s);
  }
  double max_norm = 0;
  std::vector<Eigen::MatrixXd> lifted;
  for (std::size_t d = 0; d < pos.size(); ++d) {
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(pos[d].size(), 3);
    if (orientation) {
      r.col(0) = rot[d].states.col(0);
      r.col(1) = rot[d].states.col(1);
      r.col(2) = 0.5 * (rot[d].states.col(0) + rot[d].states.col(1));
      max_norm = std::max(max_norm, r.rowwise().norm().maxCoeff());
    }
    lifted.push_back(std::move(r));
  }
  const double scale = max_norm > 0 ? (std::numbers::pi - 0.2) / max_norm : 0.0;
  Dataset out;
  for (std::size_t d = 0; d < pos.size(); ++d) {
    Trajectory t;
    t.dt = pos[d].dt;
    t.states = Eigen::MatrixXd::Zero(pos[d].size(), 6);
    t.states.leftCols(2) = pos[d].states;
    t.states.rightCols(3) = scale * lifted[d];
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace ncds
