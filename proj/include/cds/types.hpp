#pragma once

#include <Eigen/Dense>

namespace cds {

using scalar_t = double;
using vector_t = Eigen::Matrix<scalar_t, Eigen::Dynamic, 1>;
using matrix_t = Eigen::Matrix<scalar_t, Eigen::Dynamic, Eigen::Dynamic>;
using index_t = Eigen::Index;

}  // namespace cds
