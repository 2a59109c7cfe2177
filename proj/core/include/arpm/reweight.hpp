#pragma once

#include "arpm/nets.hpp"

namespace arpm {

// Per-source-sample weights on {w >= 0, sum w = m, sum (w-1)^2 <= rho m}.
struct WeightVector {
  Vector w;
  double rho = 5.0;

  bool feasible(double tol_scale = 1e-6) const;
};

struct DualPotentialReport {
  double wasserstein_estimate = 0.0;
  int discriminator_steps = 0;
  Vector source_scores;
  std::vector<double> objective_curve;  // per-step dual objective
};

// Adam ascent on mean D(src) - mean D(tgt), spectral norm after every
// step. Returns the final per-source critic scores.
DualPotentialReport train_dual_discriminator(Discriminator& d, AdamState& adam,
                                             const Matrix& src_feats,
                                             const Matrix& tgt_feats,
                                             int steps);

// min d.w over {w >= 0, sum w = m, sum (w-1)^2 <= rho m}, active-set on
// the nonnegativity constraints around the ball/hyperplane closed form.
// Ties broken toward minimum ||w - 1||.
Vector solve_weights(const Vector& d, double rho);

// Strided-group variant: floor(m / group_threshold) groups {i, l+i, ...},
// each solved independently against its own size. Falls back to the
// direct solve when at most one group forms.
Vector solve_weights_grouped(const Vector& d, double rho, int group_threshold);

struct ReweightOptions {
  double rho = 5.0;
  int discriminator_steps = 500;
  int group_threshold = 20000;
  int subsample_threshold = 1000000;
  int n_prime = 128000;  // subsample size above subsample_threshold
};

// One reweighting round: train the dual critic, then solve the weight
// program (per strided group when m > group_threshold). When m exceeds
// subsample_threshold only n_prime random indices are re-solved; the
// rest of `current` is left untouched.
WeightVector learn_weights(Discriminator& d_net, AdamState& adam,
                           const Matrix& src_feats, const Matrix& tgt_feats,
                           const ReweightOptions& opt, Rng& rng,
                           const Vector* current = nullptr,
                           DualPotentialReport* report = nullptr);

}  // namespace arpm
