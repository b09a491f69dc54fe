#pragma once

#include "ncds/contraction.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>

namespace ncds {

// Ascending eigenvalues of the symmetric part of the matrix the field
// integrates (Jhat, or the raw net output for an unconstrained field).
Eigen::VectorXd symmetric_part_spectrum(const ContractiveField& field, const Eigen::VectorXd& x);

struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

// Sampled check, not a proof: the structural bound is eps.
struct CertifyReport {
  int samples = 0;
  double eps = 0;
  double max_eig = 0;
  double tau_lower_bound = 0;  // -max_eig over the samples
  int positive_count = 0;      // samples whose largest eigenvalue is > 0
  Eigen::VectorXd worst_state;
};

CertifyReport certify_contraction(const ContractiveField& field, int n_samples, const Box& region,
                                  std::uint64_t seed = 0);

void to_json(nlohmann::json& j, const CertifyReport& r);

// 2 delta^T Jhat(x) delta, the rate of change of ||delta||^2 along the flow.
double differential_shrinkage(const ContractiveField& field, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& delta);

}  // namespace ncds
