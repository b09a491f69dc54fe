#include "ncds/diagnostics.hpp"

#include "ncds/error.hpp"
#include "ncds/json_eigen.hpp"
#include "ncds/linalg.hpp"

#include <limits>
#include <random>

namespace ncds {

Eigen::VectorXd symmetric_part_spectrum(const ContractiveField& field, const Eigen::VectorXd& x) {
  const Eigen::MatrixXd j = integrand_jacobian(field, x);
  return jacobi_eigen(0.5 * (j + j.transpose()), 1e-12, 100).values;
}

CertifyReport certify_contraction(const ContractiveField& field, int n_samples, const Box& region,
                                  std::uint64_t seed) {
  if (n_samples < 1) throw ConfigError("certify: n_samples must be positive");
  if (region.lower.size() != field.dim || region.upper.size() != field.dim) {
    throw ConfigError("certify: region dimension does not match the field");
  }
  if ((region.upper.array() < region.lower.array()).any()) throw ConfigError("certify: empty region");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  CertifyReport r;
  r.samples = n_samples;
  r.eps = field.eps;
  r.max_eig = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < n_samples; ++s) {
    Eigen::VectorXd x(field.dim);
    for (int i = 0; i < field.dim; ++i) x[i] = region.lower[i] + u(rng) * (region.upper[i] - region.lower[i]);
    const double top = symmetric_part_spectrum(field, x).maxCoeff();
    if (top > 0) ++r.positive_count;
    if (top > r.max_eig) {
      r.max_eig = top;
      r.worst_state = x;
    }
  }
  r.tau_lower_bound = -r.max_eig;
  return r;
}

void to_json(nlohmann::json& j, const CertifyReport& r) {
  j = {{"samples", r.samples},
       {"eps", r.eps},
       {"max_eig", r.max_eig},
       {"tau_lower_bound_sampled", r.tau_lower_bound},
       {"positive_count", r.positive_count},
       {"worst_state", to_json_array(r.worst_state)}};
}

double differential_shrinkage(const ContractiveField& field, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& delta) {
  if (delta.size() != field.dim) throw std::invalid_argument("delta dimension does not match the field");
  return 2 * delta.dot(integrand_jacobian(field, x) * delta);
}

}  // namespace ncds
