#include "ncds/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ncds {

namespace {

double point_distance(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b, Eigen::Index j) {
  double s = 0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) {
    const double d = a(i, k) - b(j, k);
    s += d * d;
  }
  return std::sqrt(s);
}

// sum over rows j of `to` of the distance to the nearest row of `from`.
double nearest_sum(const Eigen::MatrixXd& from, const Eigen::MatrixXd& to) {
  double total = 0;
  for (Eigen::Index j = 0; j < to.rows(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < from.rows(); ++i) best = std::min(best, point_distance(from, i, to, j));
    total += best;
  }
  return total;
}

}  // namespace

double dtwd(const Trajectory& a, const Trajectory& b) {
  if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("dtwd: empty trajectory");
  if (a.dim() != b.dim()) throw std::invalid_argument("dtwd: trajectories differ in dimension");
  return nearest_sum(a.states, b.states) + nearest_sum(b.states, a.states);
}

Eigen::VectorXd avg_pairwise_distance_curve(const std::vector<Trajectory>& trajs) {
  if (trajs.size() < 2) throw std::invalid_argument("avg_pairwise_distance_curve needs two trajectories");
  const Eigen::Index n = trajs.front().size();
  for (const auto& t : trajs) {
    if (t.size() != n || t.dim() != trajs.front().dim() || t.dt != trajs.front().dt) {
      throw std::invalid_argument("avg_pairwise_distance_curve: trajectories differ in length, dim or dt");
    }
  }
  Eigen::VectorXd curve = Eigen::VectorXd::Zero(n);
  double pairs = 0;
  for (std::size_t a = 0; a < trajs.size(); ++a) {
    for (std::size_t b = a + 1; b < trajs.size(); ++b) {
      curve += (trajs[a].states - trajs[b].states).rowwise().norm();
      ++pairs;
    }
  }
  return curve / pairs;
}

DtwdReport dtwd_report(const RolloutFn& rollout_fn, const Dataset& demos,
                       const DtwdReportSettings& settings) {
  if (demos.empty()) throw std::invalid_argument("dtwd_report: no demonstrations");
  if (settings.n_rollouts < 1) throw std::invalid_argument("dtwd_report: n_rollouts must be positive");
  std::mt19937_64 rng(settings.seed);
  std::normal_distribution<double> noise(0, 1);
  const int runs = settings.start_sd > 0 ? settings.n_rollouts : 1;

  DtwdReport report;
  for (std::size_t d = 0; d < demos.size(); ++d) {
    const Trajectory& demo = demos[d];
    double sum = 0;
    int good = 0;
    for (int k = 0; k < runs; ++k) {
      Eigen::VectorXd start = demo.states.row(0).transpose();
      if (k > 0) {
        for (Eigen::Index i = 0; i < start.size(); ++i) start[i] += settings.start_sd * noise(rng);
      }
      const RolloutResult r = rollout_fn(start, static_cast<int>(demo.size()) - 1, demo.dt);
      if (!r.ok) {
        ++report.failed;
        report.warnings.push_back("demo " + std::to_string(d) + " rollout " + std::to_string(k) +
                                  " excluded: " + r.error);
        continue;
      }
      sum += dtwd(r.trajectory, demo);
      ++good;
    }
    if (good > 0) report.per_demo.push_back(sum / good);
  }
  if (!report.per_demo.empty()) {
    const Eigen::Map<const Eigen::VectorXd> v(report.per_demo.data(),
                                              static_cast<Eigen::Index>(report.per_demo.size()));
    report.mean = v.mean();
    report.std = std::sqrt((v.array() - report.mean).square().mean());
  } else {
    report.mean = report.std = std::numeric_limits<double>::quiet_NaN();
  }
  return report;
}

void to_json(nlohmann::json& j, const DtwdReport& r) {
  j = {{"per_demo", r.per_demo}, {"mean", r.mean}, {"std", r.std}, {"failed", r.failed}};
  if (!r.warnings.empty()) j["warnings"] = r.warnings;
}

std::string format_table(const DtwdReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "demo        dtwd\n";
  for (std::size_t i = 0; i < r.per_demo.size(); ++i) {
    out << std::setw(4) << i << "  " << std::setw(10) << r.per_demo[i] << "\n";
  }
  out << "mean " << r.mean << " +- " << r.std;
  if (r.failed) out << "  (" << r.failed << " rollouts excluded)";
  out << "\n";
  return out.str();
}

}  // namespace ncds
