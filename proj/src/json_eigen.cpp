#include "ncds/json_eigen.hpp"

#include "ncds/error.hpp"

#include <vector>

namespace ncds {

nlohmann::json to_json_array(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("expected a JSON array of numbers");
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

nlohmann::json to_json_rows(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(to_json_array(m.row(i).transpose()));
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("expected a JSON array of rows");
  if (j.empty()) return {};
  const auto first = vector_from_json(j.front());
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), first.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto row = vector_from_json(j[i]);
    if (row.size() != m.cols()) throw ConfigError("ragged matrix in JSON");
    m.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return m;
}

}  // namespace ncds
