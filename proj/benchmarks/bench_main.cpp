#include <benchmark/benchmark.h>

#include <random>

#include "cfrank/linalg.hpp"
#include "cfrank/losses.hpp"

namespace {

cfrank::Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  cfrank::Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = normal(rng);
  return m;
}

void BM_Uniformity(benchmark::State& state) {
  const auto t = gaussian(state.range(0), state.range(1), 1);
  for (auto _ : state) benchmark::DoNotOptimize(cfrank::uniform_loss_grad(t).value);
  state.SetComplexityN(state.range(0));
}

void BM_StableRankReg(benchmark::State& state) {
  const auto t = gaussian(state.range(0), state.range(1), 2);
  for (auto _ : state) benchmark::DoNotOptimize(cfrank::srank_reg_loss_grad(t).value);
  state.SetComplexityN(state.range(0));
}

void BM_TopSingular(benchmark::State& state) {
  const auto a = gaussian(state.range(0), state.range(1), 3);
  for (auto _ : state) benchmark::DoNotOptimize(cfrank::top_singular(a).sigma1);
}

}  // namespace

BENCHMARK(BM_Uniformity)->ArgsProduct({{1000, 2000, 4000, 8000}, {64}})->Unit(benchmark::kMillisecond)->Complexity();
BENCHMARK(BM_StableRankReg)->ArgsProduct({{1000, 2000, 4000, 8000}, {64}})->Unit(benchmark::kMillisecond)->Complexity();
BENCHMARK(BM_TopSingular)->ArgsProduct({{256, 4096}, {16, 64, 256}})->Unit(benchmark::kMicrosecond);
BENCHMARK_MAIN();
