#include "arpm/core_math.hpp"

#include <algorithm>
#include <cmath>

namespace arpm {

Vector softmax(const Vector& logits) {
  if (!logits.allFinite())
    throw std::invalid_argument("non-finite logits");
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    out.row(i) = softmax(logits.row(i).transpose()).transpose();
  return out;
}

Vector l2_normalize(const Vector& v, double target_norm) {
  const double n = v.norm();
  if (n <= 0.0 || !std::isfinite(n))
    throw std::invalid_argument("degenerate feature");
  return v * (target_norm / n);
}

Matrix l2_normalize_rows(const Matrix& x, double target_norm) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out.row(i) = l2_normalize(x.row(i).transpose(), target_norm).transpose();
  return out;
}

double top_singular_value_step(const Matrix& w, Vector& u) {
  // u approximates the top left singular vector of w.
  Vector v = w.transpose() * u;
  double vn = v.norm();
  if (vn > 0) v /= vn;
  Vector wu = w * v;
  double sigma = wu.norm();
  if (sigma > 0) u = wu / sigma;
  return sigma;
}

double top_singular_value(const Matrix& w, int iters) {
  if (w.squaredNorm() == 0.0)
    throw std::invalid_argument("zero operator");
  if (iters < 1)
    throw std::invalid_argument("iters must be >= 1");
  // Deterministic start: alternating-sign unit vector plus a small ramp,
  // so it is never orthogonal to the top subspace in practice.
  Vector u(w.rows());
  for (Eigen::Index i = 0; i < u.size(); ++i)
    u(i) = ((i % 2 == 0) ? 1.0 : -1.0) + 0.01 * static_cast<double>(i + 1);
  u.normalize();
  double sigma = 0.0;
  for (int it = 0; it < iters; ++it)
    sigma = top_singular_value_step(w, u);
  return sigma;
}

PcaResult pca_components(const Matrix& x, int k) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (n < 2)
    throw std::invalid_argument("pca requires at least 2 samples");
  if (k < 1 || k > std::min<Eigen::Index>(n, d))
    throw std::invalid_argument("pca component count out of range");

  Matrix centered = x.rowwise() - x.colwise().mean();
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("pca eigendecomposition failed");

  // Eigen returns ascending eigenvalues; take the top k in reverse.
  PcaResult res;
  res.components.resize(d, k);
  res.eigenvalues.resize(k);
  const double tol = 1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  for (int j = 0; j < k; ++j) {
    const Eigen::Index src = d - 1 - j;
    Vector col = es.eigenvectors().col(src);
    Eigen::Index imax;
    col.cwiseAbs().maxCoeff(&imax);
    if (col(imax) < 0) col = -col;
    res.components.col(j) = col;
    res.eigenvalues(j) = es.eigenvalues()(src);
    if (es.eigenvalues()(src) <= tol) res.rank_deficient = true;
  }
  return res;
}

double margin(const Vector& p) {
  if (p.size() < 2)
    throw std::invalid_argument("margin requires >= 2 classes");
  double top = -1.0, second = -1.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > top) {
      second = top;
      top = p(i);
    } else if (p(i) > second) {
      second = p(i);
    }
  }
  return top - second;
}

bool is_prob_vector(const Vector& p, double tol) {
  if (!p.allFinite()) return false;
  if ((p.array() < -tol).any()) return false;
  return std::abs(p.sum() - 1.0) <= tol;
}

}  // namespace arpm
