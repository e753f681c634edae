#pragma once

#include <Eigen/Dense>
#include <string>

namespace mhtn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

void require_finite(const Matrix& m, const std::string& what);

}  // namespace mhtn
