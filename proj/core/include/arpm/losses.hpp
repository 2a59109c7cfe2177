#pragma once

#include "arpm/core_math.hpp"

namespace arpm {

// Persistent per-target-sample feature and score stores.
struct Banks {
  Matrix Z;  // n x feature_dim
  Matrix S;  // n x n_classes
  bool initialized = false;
};

enum class UncertaintyKind { AlphaPower, Entropy, Tsallis, Square };

struct UncertaintyLoss {
  UncertaintyKind kind = UncertaintyKind::AlphaPower;
  double alpha = 6.0;
};

UncertaintyLoss parse_uncertainty_loss(const std::string& name, double alpha);

struct LossGrad {
  double loss = 0.0;
  Matrix grad;
};

// Label-smoothed cross-entropy, per-sample weighted, averaged over the
// batch. Gradient is w.r.t. the logits (softmax folded in).
LossGrad reweighted_ce(const Matrix& probs, const std::vector<int>& labels,
                       const Vector& weights, double smoothing);

// Uncertainty-reduction losses over probability rows; gradient is w.r.t.
// the probabilities (chain through softmax_backward afterwards).
// AlphaPower: -mean_j sum_k p_jk^alpha. Square is AlphaPower at alpha=2.
// Entropy: mean_j of -sum_k p_jk log p_jk (minimized by one-hot rows).
// Tsallis: mean_j (1 - sum_k p_jk^alpha) / (alpha - 1).
LossGrad uncertainty_loss(const Matrix& probs, const UncertaintyLoss& kind);

// sum_k p_k^alpha for one probability row.
double alpha_power_value(const Vector& p, double alpha);

// Replace the bank rows at batch_indices; later duplicates win.
void update_banks(Banks& banks, const std::vector<int>& batch_indices,
                  const Matrix& features, const Matrix& scores);

// Neighborhood reciprocity clustering over the banks; cosine K-NN with
// self-exclusion, reciprocal affinity 1 vs 0.1. Gradient w.r.t.
// batch_probs, neighbors held fixed.
LossGrad nrc_loss(const Banks& banks, const std::vector<int>& batch_indices,
                  const Matrix& batch_probs, int K, int M);

}  // namespace arpm
