#include "ncds/adam.hpp"

#include "ncds/error.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ncds {

AdamState AdamState::for_size(Eigen::Index n, double lr) {
  AdamState s;
  s.m = Eigen::VectorXd::Zero(n);
  s.v = Eigen::VectorXd::Zero(n);
  s.lr = lr;
  return s;
}

void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw std::invalid_argument("adam: parameter, gradient and moment sizes differ");
  }
  for (Eigen::Index i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("adam: non-finite gradient at index " + std::to_string(i) + " (step " +
                         std::to_string(state.step + 1) + ")");
    }
  }
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= state.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps);
}

double cosine_lr(double lr, double final_fraction, int epoch, int epochs) {
  if (epochs <= 1) return lr;
  const double c = 0.5 * (1 + std::cos(std::numbers::pi * epoch / (epochs - 1)));
  return lr * (final_fraction + (1 - final_fraction) * c);
}

}  // namespace ncds
