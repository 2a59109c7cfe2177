#include <random>

#include <benchmark/benchmark.h>

#include "arpm/losses.hpp"
#include "arpm/reweight.hpp"

using namespace arpm;

namespace {

Vector random_scores(int m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Vector d(m);
  for (int i = 0; i < m; ++i) d(i) = g(rng);
  return d;
}

void BM_SolveWeights(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  Vector d = random_scores(m, 1);
  for (auto _ : state) benchmark::DoNotOptimize(solve_weights(d, 5.0));
  state.SetComplexityN(m);
}
BENCHMARK(BM_SolveWeights)->Range(64, 16384)->Complexity();

void BM_SolveWeightsGrouped(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  Vector d = random_scores(m, 2);
  for (auto _ : state)
    benchmark::DoNotOptimize(solve_weights_grouped(d, 5.0, 2048));
}
BENCHMARK(BM_SolveWeightsGrouped)->Range(4096, 65536);

void BM_DiscriminatorStep(benchmark::State& state) {
  Rng rng(3);
  const int n = static_cast<int>(state.range(0));
  Discriminator d = Discriminator::create(32, {256, 256}, rng);
  AdamState adam = AdamState::zeros_like(d);
  Matrix src = Matrix::Random(n, 32), tgt = Matrix::Random(n, 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(train_dual_discriminator(d, adam, src, tgt, 1));
  }
}
BENCHMARK(BM_DiscriminatorStep)->Range(64, 1024);

void BM_NrcLoss(benchmark::State& state) {
  std::mt19937_64 rng(4);
  const int n = static_cast<int>(state.range(0));
  Banks banks;
  banks.Z = Matrix::Random(n, 32);
  banks.S = Matrix::Random(n, 12).array().abs();
  banks.initialized = true;
  std::vector<int> batch;
  for (int i = 0; i < 64; ++i) batch.push_back(i % n);
  Matrix probs = Matrix::Random(64, 12).array().abs();
  for (Eigen::Index i = 0; i < probs.rows(); ++i) probs.row(i) /= probs.row(i).sum();
  for (auto _ : state)
    benchmark::DoNotOptimize(nrc_loss(banks, batch, probs, 4, 3));
  state.SetComplexityN(n);
}
BENCHMARK(BM_NrcLoss)->Range(256, 8192)->Complexity();

void BM_UncertaintyLoss(benchmark::State& state) {
  Matrix probs = Matrix::Random(256, 32).array().abs();
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    probs.row(i) /= probs.row(i).sum();
  UncertaintyLoss u{UncertaintyKind::AlphaPower, 6.0};
  for (auto _ : state) benchmark::DoNotOptimize(uncertainty_loss(probs, u));
}
BENCHMARK(BM_UncertaintyLoss);

}  // namespace

BENCHMARK_MAIN();
