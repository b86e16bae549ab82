#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <stdexcept>
#include <string>

namespace distflex {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Raised when an input document cannot be parsed.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised when a parsed document fails cross-reference or range validation.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised when a numerical routine cannot meet its contract.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace distflex
