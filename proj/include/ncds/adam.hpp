#pragma once

#include <Eigen/Dense>

namespace ncds {

struct AdamState {
  long step = 0;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_size(Eigen::Index n, double lr);
};

// lr * (f + (1 - f) * (1 + cos(pi * epoch / epochs)) / 2).
double cosine_lr(double lr, double final_fraction, int epoch, int epochs);

// One bias-corrected Adam update in place. Throws NumericError if `grads`
// contains a non-finite entry; params and state are left untouched then.
void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads);

}  // namespace ncds
