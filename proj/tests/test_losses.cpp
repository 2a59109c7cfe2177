#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "arpm/losses.hpp"

using namespace arpm;

namespace {

Matrix random_prob_rows(int rows, int cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Matrix p(rows, cols);
  for (int i = 0; i < rows; ++i) {
    double s = 0.0;
    for (int k = 0; k < cols; ++k) {
      p(i, k) = u(rng);
      s += p(i, k);
    }
    p.row(i) /= s;
  }
  return p;
}

double uncertainty_value(const Matrix& probs, const UncertaintyLoss& u) {
  return uncertainty_loss(probs, u).loss;
}

}  // namespace

TEST_CASE("cross-entropy scalar reference") {
  Matrix p(1, 3);
  p << 0.7, 0.2, 0.1;
  LossGrad lg = reweighted_ce(p, {0}, Vector::Ones(1), 0.1);
  CHECK(lg.loss == doctest::Approx(0.51660859981626644395).epsilon(1e-14));
  // grad w.r.t. logits: p - a with a = (0.9, 0.05, 0.05)
  CHECK(lg.grad(0, 0) == doctest::Approx(-0.2).epsilon(1e-12));
  CHECK(lg.grad(0, 1) == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(lg.grad(0, 2) == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("cross-entropy: zero weights annihilate, loss is linear in weights") {
  std::mt19937_64 rng(7);
  Matrix p = random_prob_rows(5, 4, rng);
  std::vector<int> y{0, 3, 1, 2, 2};

  LossGrad zero = reweighted_ce(p, y, Vector::Zero(5), 0.1);
  CHECK(zero.loss == 0.0);
  CHECK(zero.grad.cwiseAbs().maxCoeff() == 0.0);

  Vector w(5);
  w << 0.5, 2.0, 0.0, 1.5, 1.0;
  LossGrad a = reweighted_ce(p, y, w, 0.1);
  LossGrad b = reweighted_ce(p, y, (3.0 * w).eval(), 0.1);
  CHECK(b.loss == doctest::Approx(3.0 * a.loss).epsilon(1e-12));
  CHECK((b.grad - 3.0 * a.grad).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(a.grad.row(2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cross-entropy: perfect confident prediction has near-zero grad "
          "without smoothing") {
  Matrix p(1, 3);
  p << 1.0 - 2e-12, 1e-12, 1e-12;
  LossGrad lg = reweighted_ce(p, {0}, Vector::Ones(1), 0.0);
  CHECK(lg.loss < 1e-10);
  CHECK(lg.grad.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("cross-entropy input validation") {
  Matrix p(1, 3);
  p << 0.5, 0.3, 0.2;
  CHECK_THROWS_AS(reweighted_ce(p, {3}, Vector::Ones(1), 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(reweighted_ce(p, {0}, Vector::Ones(1), 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(reweighted_ce(p, {0}, (-Vector::Ones(1)).eval(), 0.0),
                  std::invalid_argument);
}

TEST_CASE("alpha-power extremals") {
  const int K = 5;
  for (double alpha : {2.0, 4.0, 6.0, 8.0}) {
    Vector onehot = Vector::Zero(K);
    onehot(2) = 1.0;
    CHECK(std::abs(alpha_power_value(onehot, alpha) - 1.0) < 1e-12);
    Vector uni = Vector::Constant(K, 1.0 / K);
    CHECK(std::abs(alpha_power_value(uni, alpha) -
                   std::pow(static_cast<double>(K), 1.0 - alpha)) < 1e-12);
  }
}

TEST_CASE("uncertainty gradients match simplex-tangent finite differences") {
  std::mt19937_64 rng(11);
  Matrix p = random_prob_rows(4, 6, rng);
  std::vector<UncertaintyLoss> losses = {
      {UncertaintyKind::AlphaPower, 2.0}, {UncertaintyKind::AlphaPower, 6.0},
      {UncertaintyKind::Entropy, 0.0},    {UncertaintyKind::Tsallis, 3.0},
      {UncertaintyKind::Square, 0.0}};
  std::normal_distribution<double> g(0.0, 1.0);
  for (const auto& u : losses) {
    LossGrad lg = uncertainty_loss(p, u);
    for (int trial = 0; trial < 5; ++trial) {
      Matrix v(p.rows(), p.cols());
      for (Eigen::Index i = 0; i < v.rows(); ++i) {
        for (Eigen::Index k = 0; k < v.cols(); ++k) v(i, k) = g(rng);
        v.row(i).array() -= v.row(i).mean();  // stay on the simplex
      }
      const double h = 1e-6;
      const double fp = uncertainty_value(p + h * v, u);
      const double fm = uncertainty_value(p - h * v, u);
      const double fd = (fp - fm) / (2.0 * h);
      const double an = lg.grad.cwiseProduct(v).sum();
      CHECK(std::abs(fd - an) <
            1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("tsallis approaches shannon entropy as alpha drops to one") {
  std::mt19937_64 rng(13);
  Matrix p = random_prob_rows(6, 4, rng);
  LossGrad ts = uncertainty_loss(p, {UncertaintyKind::Tsallis, 1.001});
  LossGrad sh = uncertainty_loss(p, {UncertaintyKind::Entropy, 0.0});
  CHECK(std::abs(ts.loss - sh.loss) < 1e-2);
}

TEST_CASE("square equals alpha-power at alpha two") {
  std::mt19937_64 rng(17);
  Matrix p = random_prob_rows(3, 5, rng);
  LossGrad sq = uncertainty_loss(p, {UncertaintyKind::Square, 99.0});
  LossGrad ap = uncertainty_loss(p, {UncertaintyKind::AlphaPower, 2.0});
  CHECK(sq.loss == ap.loss);
  CHECK((sq.grad - ap.grad).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("high alpha flattens the gradient near uniform") {
  // Two-class rows with max prob in [0.5, 0.6]; gradients are scaled by
  // their value at a one-hot row (alpha) before comparing.
  for (double pm : {0.5, 0.52, 0.55, 0.58, 0.6}) {
    Matrix p(1, 2);
    p << pm, 1.0 - pm;
    LossGrad g2 = uncertainty_loss(p, {UncertaintyKind::AlphaPower, 2.0});
    LossGrad g8 = uncertainty_loss(p, {UncertaintyKind::AlphaPower, 8.0});
    const double n2 = g2.grad.cwiseAbs().maxCoeff() / 2.0;
    const double n8 = g8.grad.cwiseAbs().maxCoeff() / 8.0;
    CHECK(n8 < n2);
  }
}

TEST_CASE("parse_uncertainty_loss validation") {
  CHECK(parse_uncertainty_loss("alpha_power", 6.0).kind ==
        UncertaintyKind::AlphaPower);
  CHECK(parse_uncertainty_loss("entropy", 1.0).kind == UncertaintyKind::Entropy);
  CHECK_THROWS_AS(parse_uncertainty_loss("alpha_power", 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_uncertainty_loss("tsallis", 0.5),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_uncertainty_loss("gini", 2.0), std::invalid_argument);
}

TEST_CASE("bank updates touch only the addressed rows") {
  std::mt19937_64 rng(19);
  Banks banks;
  banks.Z = Matrix::Random(8, 4);
  banks.S = Matrix::Random(8, 3);
  banks.initialized = true;
  Matrix z_before = banks.Z, s_before = banks.S;

  Matrix zf = Matrix::Random(2, 4), sf = Matrix::Random(2, 3);
  update_banks(banks, {1, 5}, zf, sf);
  for (int i = 0; i < 8; ++i) {
    if (i == 1 || i == 5) continue;
    CHECK((banks.Z.row(i) - z_before.row(i)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((banks.S.row(i) - s_before.row(i)).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK((banks.Z.row(1) - zf.row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((banks.S.row(5) - sf.row(1)).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(update_banks(banks, {9}, zf.topRows(1), sf.topRows(1)),
                  std::out_of_range);
}

TEST_CASE("nrc hand-worked three-point case") {
  // Points 0 and 1 coincide (mutual 1-NN); point 2 is orthogonal.
  Banks banks;
  banks.Z = Matrix::Zero(3, 4);
  banks.Z(0, 0) = 1.0;
  banks.Z(1, 0) = 2.0;  // same direction, different norm
  banks.Z(2, 1) = 1.0;
  banks.S = Matrix(3, 2);
  banks.S << 0.8, 0.2, 0.6, 0.4, 0.1, 0.9;
  banks.initialized = true;

  Matrix probs(2, 2);
  probs << 0.55, 0.45, 0.3, 0.7;
  LossGrad lg = nrc_loss(banks, {0, 2}, probs, 1, 1);

  // Batch row 0 (bank 0): neighbor is 1, reciprocal, affinity 1.
  // Batch row 1 (bank 2): both others tie at cosine 0, lowest index wins,
  // neighbor is 0; 0's 1-NN is 1, not reciprocal, affinity 0.1.
  const double expect =
      -(1.0 * (0.6 * 0.55 + 0.4 * 0.45) + 0.1 * (0.8 * 0.3 + 0.2 * 0.7)) / 2.0;
  CHECK(lg.loss == doctest::Approx(expect).epsilon(1e-14));
  CHECK(lg.grad(0, 0) == doctest::Approx(-0.6 / 2.0).epsilon(1e-14));
  CHECK(lg.grad(0, 1) == doctest::Approx(-0.4 / 2.0).epsilon(1e-14));
  CHECK(lg.grad(1, 0) == doctest::Approx(-0.1 * 0.8 / 2.0).epsilon(1e-14));
  CHECK(lg.grad(1, 1) == doctest::Approx(-0.1 * 0.2 / 2.0).epsilon(1e-14));
}

TEST_CASE("nrc matches an independent brute-force recomputation") {
  std::mt19937_64 rng(23);
  const int n = 12, fdim = 5, n_classes = 4, K = 3, M = 2;
  Banks banks;
  banks.Z = Matrix::Random(n, fdim);
  banks.S = random_prob_rows(n, n_classes, rng);
  banks.initialized = true;
  std::vector<int> batch{0, 4, 7, 11};
  Matrix probs = random_prob_rows(4, n_classes, rng);

  // Oracle: full similarity matrix plus stable_sort neighbor lists.
  Matrix zn = banks.Z;
  for (int i = 0; i < n; ++i) zn.row(i) /= zn.row(i).norm();
  Matrix sim = zn * zn.transpose();
  auto nn = [&](int i, int k) {
    std::vector<int> idx;
    for (int j = 0; j < n; ++j)
      if (j != i) idx.push_back(j);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return sim(i, a) > sim(i, b); });
    idx.resize(k);
    return idx;
  };
  double oracle = 0.0;
  Matrix ograd = Matrix::Zero(4, n_classes);
  for (int j = 0; j < 4; ++j) {
    for (int jp : nn(batch[j], K)) {
      auto back = nn(jp, M);
      const double a =
          std::find(back.begin(), back.end(), batch[j]) != back.end() ? 1.0
                                                                      : 0.1;
      oracle -= a * banks.S.row(jp).dot(probs.row(j)) / 4.0;
      ograd.row(j) -= a * banks.S.row(jp) / 4.0;
    }
  }

  LossGrad lg = nrc_loss(banks, batch, probs, K, M);
  CHECK(lg.loss == doctest::Approx(oracle).epsilon(1e-13));
  CHECK((lg.grad - ograd).cwiseAbs().maxCoeff() < 1e-13);

  // Linearity: the loss is exactly grad . probs.
  CHECK(lg.loss ==
        doctest::Approx(lg.grad.cwiseProduct(probs).sum()).epsilon(1e-13));
}

TEST_CASE("nrc validation") {
  Banks banks;
  banks.Z = Matrix::Random(4, 3);
  banks.S = Matrix::Random(4, 2);
  Matrix probs = Matrix::Constant(1, 2, 0.5);
  CHECK_THROWS_WITH(nrc_loss(banks, {0}, probs, 1, 1), "banks uninitialized");
  banks.initialized = true;
  CHECK_THROWS_AS(nrc_loss(banks, {0}, probs, 4, 1), std::invalid_argument);
  CHECK_THROWS_AS(nrc_loss(banks, {0}, probs, 1, 0), std::invalid_argument);
}
