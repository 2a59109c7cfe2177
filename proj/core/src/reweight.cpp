#include "arpm/reweight.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace arpm {

bool WeightVector::feasible(double tol_scale) const {
  const double m = static_cast<double>(w.size());
  const double tol = tol_scale * m;
  if ((w.array() < -tol).any()) return false;
  if (std::abs(w.sum() - m) > tol) return false;
  return (w.array() - 1.0).square().sum() <= rho * m + tol;
}

DualPotentialReport train_dual_discriminator(Discriminator& d, AdamState& adam,
                                             const Matrix& src_feats,
                                             const Matrix& tgt_feats,
                                             int steps) {
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (src_feats.rows() == 0 || tgt_feats.rows() == 0)
    throw std::invalid_argument("empty feature set");

  const double m = static_cast<double>(src_feats.rows());
  const double n = static_cast<double>(tgt_feats.rows());
  Matrix all(src_feats.rows() + tgt_feats.rows(), src_feats.cols());
  all << src_feats, tgt_feats;
  // Ascent direction on mean D(src) - mean D(tgt); Adam minimizes, so the
  // fed gradient is negated.
  Vector grad_scores(all.rows());
  grad_scores.head(src_feats.rows()).setConstant(-1.0 / m);
  grad_scores.tail(tgt_feats.rows()).setConstant(1.0 / n);

  DualPotentialReport report;
  report.discriminator_steps = steps;
  for (int step = 0; step < steps; ++step) {
    DiscCache cache;
    Vector scores = discriminator_forward(d, all, &cache);
    const double obj = scores.head(src_feats.rows()).mean() -
                       scores.tail(tgt_feats.rows()).mean();
    if (!std::isfinite(obj))
      throw std::runtime_error("non-finite dual objective at step " +
                               std::to_string(step));
    report.objective_curve.push_back(obj);
    DiscGrads grads = discriminator_backward(d, cache, grad_scores);
    adam_step(adam, d, grads);
    apply_spectral_norm(d);
  }
  Vector final_scores = discriminator_forward(d, all);
  report.source_scores = final_scores.head(src_feats.rows());
  report.wasserstein_estimate = final_scores.head(src_feats.rows()).mean() -
                                final_scores.tail(tgt_feats.rows()).mean();
  return report;
}

Vector solve_weights(const Vector& d, double rho) {
  const Eigen::Index m = d.size();
  if (m < 2) throw std::invalid_argument("need at least 2 samples");
  if (!d.allFinite()) throw std::invalid_argument("non-finite scores");
  if (rho <= 0) throw std::invalid_argument("rho must be positive");

  const double md = static_cast<double>(m);
  const double scale = std::max(1.0, d.cwiseAbs().maxCoeff());
  const double tol = 1e-11 * scale;

  std::vector<bool> active(m, false);
  Eigen::Index n_active = 0;
  Vector w = Vector::Zero(m);

  const int max_iter = 10 * static_cast<int>(m) + 50;
  for (int iter = 0; iter < max_iter; ++iter) {
    const Eigen::Index f = m - n_active;
    if (f < 1) throw std::runtime_error("active set exhausted");
    const double fd = static_cast<double>(f);
    const double a = static_cast<double>(n_active);

    double dbar = 0.0;
    for (Eigen::Index i = 0; i < m; ++i)
      if (!active[i]) dbar += d(i);
    dbar /= fd;
    double gnorm2 = 0.0;
    for (Eigen::Index i = 0; i < m; ++i)
      if (!active[i]) gnorm2 += (d(i) - dbar) * (d(i) - dbar);
    const double gnorm = std::sqrt(gnorm2);

    // Ball radius left for the free coordinates, inside the hyperplane.
    const double r2 = rho * md - a;
    const double center = md / fd;
    double rp2 = r2 - (md - fd) * (md - fd) / fd;
    if (rp2 < 0) {
      if (rp2 < -1e-9 * md)
        throw std::runtime_error("infeasible active set in weight solver");
      rp2 = 0.0;
    }
    const double rp = std::sqrt(rp2);

    const bool degenerate = gnorm <= 1e-12 * scale * std::sqrt(fd);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (active[i])
        w(i) = 0.0;
      else
        w(i) = degenerate ? center : center - rp * (d(i) - dbar) / gnorm;
    }

    // Activate the most violated nonnegativity constraint, if any.
    Eigen::Index worst = -1;
    double worst_val = -tol;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!active[i] && w(i) < worst_val) {
        worst_val = w(i);
        worst = i;
      }
    }
    if (worst >= 0) {
      active[worst] = true;
      n_active++;
      continue;
    }
    for (Eigen::Index i = 0; i < m; ++i)
      if (w(i) < 0) w(i) = 0.0;

    // KKT multipliers of active constraints; release the most negative.
    const double slope = degenerate || rp <= 0 ? 0.0 : gnorm / rp;
    Eigen::Index release = -1;
    double release_val = -tol * (1.0 + slope);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!active[i]) continue;
      const double lambda = d(i) - dbar - slope * (md / fd);
      if (lambda < release_val) {
        release_val = lambda;
        release = i;
      }
    }
    if (release >= 0) {
      active[release] = false;
      n_active--;
      continue;
    }
    return w;
  }
  throw std::runtime_error("weight solver failed to converge");
}

Vector solve_weights_grouped(const Vector& d, double rho,
                             int group_threshold) {
  const Eigen::Index m = d.size();
  const Eigen::Index l = m / group_threshold;  // number of strided groups
  if (l <= 1) return solve_weights(d, rho);
  Vector w(m);
  for (Eigen::Index g = 0; g < l; ++g) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = g; i < m; i += l) idx.push_back(i);
    Vector dg(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) dg(k) = d(idx[k]);
    Vector wg = solve_weights(dg, rho);
    for (std::size_t k = 0; k < idx.size(); ++k) w(idx[k]) = wg(k);
  }
  return w;
}

WeightVector learn_weights(Discriminator& d_net, AdamState& adam,
                           const Matrix& src_feats, const Matrix& tgt_feats,
                           const ReweightOptions& opt, Rng& rng,
                           const Vector* current, DualPotentialReport* report) {
  const Eigen::Index m = src_feats.rows();
  WeightVector result;
  result.rho = opt.rho;

  if (m > opt.subsample_threshold) {
    std::vector<Eigen::Index> idx(m);
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    for (Eigen::Index i = 0; i < opt.n_prime; ++i) {
      std::uniform_int_distribution<Eigen::Index> pick(i, m - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(opt.n_prime);
    Matrix sub(opt.n_prime, src_feats.cols());
    for (int k = 0; k < opt.n_prime; ++k) sub.row(k) = src_feats.row(idx[k]);
    DualPotentialReport rep = train_dual_discriminator(
        d_net, adam, sub, tgt_feats, opt.discriminator_steps);
    Vector w_sub =
        solve_weights_grouped(rep.source_scores, opt.rho, opt.group_threshold);
    result.w = current ? *current : Vector::Ones(m);
    for (int k = 0; k < opt.n_prime; ++k) result.w(idx[k]) = w_sub(k);
    if (report) *report = std::move(rep);
    return result;
  }

  DualPotentialReport rep = train_dual_discriminator(
      d_net, adam, src_feats, tgt_feats, opt.discriminator_steps);
  result.w = solve_weights_grouped(rep.source_scores, opt.rho, opt.group_threshold);
  if (report) *report = std::move(rep);
  return result;
}

}  // namespace arpm
