#include "arpm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>
#include <stdexcept>

namespace arpm {

UncertaintyLoss parse_uncertainty_loss(const std::string& name, double alpha) {
  UncertaintyLoss u;
  u.alpha = alpha;
  if (name == "alpha_power")
    u.kind = UncertaintyKind::AlphaPower;
  else if (name == "entropy")
    u.kind = UncertaintyKind::Entropy;
  else if (name == "tsallis")
    u.kind = UncertaintyKind::Tsallis;
  else if (name == "square")
    u.kind = UncertaintyKind::Square;
  else
    throw std::invalid_argument("unknown uncertainty loss: " + name);
  if ((u.kind == UncertaintyKind::AlphaPower ||
       u.kind == UncertaintyKind::Tsallis) &&
      alpha <= 1.0)
    throw std::invalid_argument("alpha must be > 1");
  return u;
}

LossGrad reweighted_ce(const Matrix& probs, const std::vector<int>& labels,
                       const Vector& weights, double smoothing) {
  const Eigen::Index batch = probs.rows();
  const Eigen::Index n_classes = probs.cols();
  if (static_cast<Eigen::Index>(labels.size()) != batch ||
      weights.size() != batch)
    throw std::invalid_argument("batch size mismatch");
  if (smoothing < 0.0 || smoothing >= 1.0)
    throw std::invalid_argument("smoothing must be in [0,1)");
  if ((weights.array() < 0.0).any())
    throw std::invalid_argument("negative sample weight");

  const double off = n_classes > 1
                         ? smoothing / static_cast<double>(n_classes - 1)
                         : 0.0;
  LossGrad out;
  out.grad = Matrix::Zero(batch, n_classes);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= n_classes)
      throw std::invalid_argument("label out of range");
    const double w = weights(i);
    if (w == 0.0) continue;
    double j = 0.0;
    for (Eigen::Index k = 0; k < n_classes; ++k) {
      const double a = (k == y) ? 1.0 - smoothing : off;
      if (a > 0.0) j -= a * std::log(std::max(probs(i, k), 1e-300));
      // d(CE)/d(logit) = p - a
      out.grad(i, k) = w * (probs(i, k) - a);
    }
    out.loss += w * j;
  }
  out.loss /= static_cast<double>(batch);
  out.grad /= static_cast<double>(batch);
  return out;
}

double alpha_power_value(const Vector& p, double alpha) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k)
    h += std::pow(p(k), alpha);
  return h;
}

LossGrad uncertainty_loss(const Matrix& probs, const UncertaintyLoss& u) {
  if ((probs.array() < 0.0).any())
    throw std::invalid_argument("negative probability");
  const Eigen::Index batch = probs.rows();
  const double B = static_cast<double>(batch);
  const double alpha = u.kind == UncertaintyKind::Square ? 2.0 : u.alpha;

  LossGrad out;
  out.grad = Matrix::Zero(probs.rows(), probs.cols());
  switch (u.kind) {
    case UncertaintyKind::AlphaPower:
    case UncertaintyKind::Square: {
      for (Eigen::Index i = 0; i < batch; ++i) {
        for (Eigen::Index k = 0; k < probs.cols(); ++k) {
          out.loss -= std::pow(probs(i, k), alpha);
          out.grad(i, k) = -alpha * std::pow(probs(i, k), alpha - 1.0) / B;
        }
      }
      out.loss /= B;
      break;
    }
    case UncertaintyKind::Entropy: {
      // Shannon entropy, minimized at one-hot rows.
      for (Eigen::Index i = 0; i < batch; ++i) {
        for (Eigen::Index k = 0; k < probs.cols(); ++k) {
          const double p = probs(i, k);
          if (p > 0.0) out.loss -= p * std::log(p);
          out.grad(i, k) = -(std::log(std::max(p, 1e-12)) + 1.0) / B;
        }
      }
      out.loss /= B;
      break;
    }
    case UncertaintyKind::Tsallis: {
      const double inv = 1.0 / (alpha - 1.0);
      for (Eigen::Index i = 0; i < batch; ++i) {
        double h = 0.0;
        for (Eigen::Index k = 0; k < probs.cols(); ++k) {
          h += std::pow(probs(i, k), alpha);
          out.grad(i, k) =
              -alpha * inv * std::pow(probs(i, k), alpha - 1.0) / B;
        }
        out.loss += inv * (1.0 - h);
      }
      out.loss /= B;
      break;
    }
  }
  return out;
}

void update_banks(Banks& banks, const std::vector<int>& batch_indices,
                  const Matrix& features, const Matrix& scores) {
  if (static_cast<Eigen::Index>(batch_indices.size()) != features.rows() ||
      features.rows() != scores.rows())
    throw std::invalid_argument("bank update shape mismatch");
  std::set<int> seen;
  bool warned = false;
  for (std::size_t i = 0; i < batch_indices.size(); ++i) {
    const int idx = batch_indices[i];
    if (idx < 0 || idx >= banks.Z.rows())
      throw std::out_of_range("bank index out of range");
    if (!seen.insert(idx).second && !warned) {
      std::cerr << "warning: duplicate bank index " << idx
                << " in one batch, last write wins\n";
      warned = true;
    }
    banks.Z.row(idx) = features.row(i);
    banks.S.row(idx) = scores.row(i);
  }
}

namespace {

// Indices of the k nearest bank rows to query (cosine), excluding `self`.
std::vector<int> knn_cosine(const Matrix& zn, const Vector& query_n, int k,
                            int self) {
  const int n = static_cast<int>(zn.rows());
  Vector sims = zn * query_n;
  std::vector<int> idx;
  idx.reserve(n);
  for (int i = 0; i < n; ++i)
    if (i != self) idx.push_back(i);
  const int kk = std::min<int>(k, static_cast<int>(idx.size()));
  std::partial_sort(idx.begin(), idx.begin() + kk, idx.end(),
                    [&](int a, int b) {
                      if (sims(a) != sims(b)) return sims(a) > sims(b);
                      return a < b;
                    });
  idx.resize(kk);
  return idx;
}

}  // namespace

LossGrad nrc_loss(const Banks& banks, const std::vector<int>& batch_indices,
                  const Matrix& batch_probs, int K, int M) {
  if (!banks.initialized) throw std::runtime_error("banks uninitialized");
  const int n = static_cast<int>(banks.Z.rows());
  if (K < 1 || M < 1 || K >= n || M >= n)
    throw std::invalid_argument("invalid K or M");
  const Eigen::Index batch = batch_probs.rows();
  if (static_cast<Eigen::Index>(batch_indices.size()) != batch)
    throw std::invalid_argument("batch size mismatch");

  Matrix zn(banks.Z.rows(), banks.Z.cols());
  for (Eigen::Index i = 0; i < banks.Z.rows(); ++i) {
    const double nm = banks.Z.row(i).norm();
    zn.row(i) = nm > 0 ? (banks.Z.row(i) / nm).eval() : banks.Z.row(i).eval();
  }

  LossGrad out;
  out.grad = Matrix::Zero(batch, batch_probs.cols());
  const double B = static_cast<double>(batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    const int bj = batch_indices[j];
    if (bj < 0 || bj >= n) throw std::out_of_range("bank index out of range");
    std::vector<int> nbrs = knn_cosine(zn, zn.row(bj).transpose(), K, bj);
    for (int jp : nbrs) {
      std::vector<int> back = knn_cosine(zn, zn.row(jp).transpose(), M, jp);
      const bool reciprocal =
          std::find(back.begin(), back.end(), bj) != back.end();
      const double a = reciprocal ? 1.0 : 0.1;
      out.loss -= a * banks.S.row(jp).dot(batch_probs.row(j)) / B;
      out.grad.row(j) -= a * banks.S.row(jp) / B;
    }
  }
  return out;
}

}  // namespace arpm
