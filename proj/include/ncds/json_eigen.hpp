#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace ncds {

nlohmann::json to_json_array(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);

// Matrices are stored as an array of rows.
nlohmann::json to_json_rows(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

}  // namespace ncds
