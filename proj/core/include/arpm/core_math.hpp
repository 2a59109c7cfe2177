#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

namespace arpm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Numerically stable softmax (max-subtraction). Throws on non-finite input.
Vector softmax(const Vector& logits);

// Row-wise softmax.
Matrix softmax_rows(const Matrix& logits);

// Rescale v to the given L2 norm. Throws on (near-)zero input.
Vector l2_normalize(const Vector& v, double target_norm);

// Row-wise feature normalization to a common norm.
Matrix l2_normalize_rows(const Matrix& x, double target_norm);

// Power-iteration estimate of sigma_max(W), deterministic start vector.
double top_singular_value(const Matrix& w, int iters);

// One power-iteration refinement with a caller-persisted left vector u.
// Returns the current sigma estimate; u is updated in place.
double top_singular_value_step(const Matrix& w, Vector& u);

struct PcaResult {
  Matrix components;   // dims x k, orthonormal columns, descending variance
  Vector eigenvalues;  // length k
  bool rank_deficient = false;
};

// Principal components of mean-centered data via covariance
// eigendecomposition. Sign convention: the largest-magnitude entry of
// each column is positive.
PcaResult pca_components(const Matrix& x, int k);

// Top-1 probability minus second probability.
double margin(const Vector& p);

// Validates the ProbVector contract (nonnegative, sums to 1 within tol).
bool is_prob_vector(const Vector& p, double tol = 1e-9);

}  // namespace arpm
