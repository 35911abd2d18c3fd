#pragma once

#include <Eigen/Dense>
#include <complex>

namespace msms {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using Complex = std::complex<double>;

}  // namespace msms
