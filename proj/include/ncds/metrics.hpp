#pragma once

#include "ncds/contraction.hpp"
#include "ncds/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ncds {

// Symmetrised nearest-neighbour sum:
//   sum_j min_i ||a_i - b_j|| + sum_i min_j ||a_i - b_j||.
// Ignores point order. Throws std::invalid_argument on empty input or a
// dimension mismatch.
double dtwd(const Trajectory& a, const Trajectory& b);

// Mean over unordered pairs of ||x_a(t) - x_b(t)|| at every step. Needs at least
// two trajectories of equal length and dt.
Eigen::VectorXd avg_pairwise_distance_curve(const std::vector<Trajectory>& trajs);

using RolloutFn = std::function<RolloutResult(const Eigen::VectorXd& start, int horizon, double dt)>;

struct DtwdReportSettings {
  // Rollouts per demo. The first starts at the demo's initial state, the rest
  // at starts jittered by N(0, start_sd^2 I). With start_sd = 0 all rollouts
  // would coincide, so only one is run.
  int n_rollouts = 5;
  double start_sd = 0;
  std::uint64_t seed = 0;
};

struct DtwdReport {
  std::vector<double> per_demo;  // mean DTWD of each demo's surviving rollouts
  double mean = 0;
  double std = 0;  // population standard deviation over per_demo
  int failed = 0;  // rollouts excluded because they diverged
  std::vector<std::string> warnings;
};

// Rolls out with the demo's own dt and length, pairs each rollout with its
// source demo.
DtwdReport dtwd_report(const RolloutFn& rollout_fn, const Dataset& demos,
                       const DtwdReportSettings& settings = {});

void to_json(nlohmann::json& j, const DtwdReport& r);
std::string format_table(const DtwdReport& r);

}  // namespace ncds
