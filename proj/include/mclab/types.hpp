#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mclab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

// Sorted (row-major), deduplicated list of observed (row, col) positions.
using IndexPair = std::pair<int, int>;
using IndexSet = std::vector<IndexPair>;

struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RankAmbiguityError : NumericError {
  using NumericError::NumericError;
};

struct AlignmentError : NumericError {
  using NumericError::NumericError;
};

struct OracleRequiredError : ParameterError {
  using ParameterError::ParameterError;
};

struct DivergenceError : NumericError {
  DivergenceError(const std::string& what, std::vector<double> trace)
      : NumericError(what), objective_trace(std::move(trace)) {}
  std::vector<double> objective_trace;
};

}  // namespace mclab
