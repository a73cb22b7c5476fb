#include <benchmark/benchmark.h>

#include <random>

#include "isdet/isb.hpp"
#include "isdet/layers.hpp"
#include "isdet/patch.hpp"
#include "isdet/tensor.hpp"

namespace {

using namespace isdet;

Tensor random_tensor(Shape shape, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> values(static_cast<size_t>(shape_numel(shape)));
  for (double& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values));
}

void BM_Conv2dForward(benchmark::State& state) {
  int64_t c = state.range(0);
  Tensor x = random_tensor({1, c, 32, 32}, 1);
  Tensor w = random_tensor({c, c, 3, 3}, 2);
  ConvSpec spec = ConvSpec::same(c, c, 3, 1, false);
  for (auto _ : state) {
    Tensor y = conv2d(x, w, Tensor(), spec);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetComplexityN(c);
}
BENCHMARK(BM_Conv2dForward)->RangeMultiplier(2)->Range(8, 64)->Complexity();

void BM_MatmulBatched(benchmark::State& state) {
  int64_t n = state.range(0);
  Tensor a = random_tensor({16, n, n}, 3);
  Tensor b = random_tensor({16, n, n}, 4);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetComplexityN(n);
}
BENCHMARK(BM_MatmulBatched)->RangeMultiplier(2)->Range(8, 64)->Complexity();

// Wall time should grow linearly with the input pixel count at fixed K and
// c2, mirroring the counted-FLOP claim.
void BM_AttentionOverPixels(benchmark::State& state) {
  int64_t side = state.range(0);
  Tensor q = random_tensor({1, 16, 8, (side / 4) * (side / 4)}, 5);
  Tensor k = random_tensor(q.shape(), 6);
  Tensor v = random_tensor(q.shape(), 7);
  for (auto _ : state) {
    Tensor f = fcgsa(q, k, v);
    benchmark::DoNotOptimize(f.values().data());
  }
  state.SetComplexityN(side * side);
}
BENCHMARK(BM_AttentionOverPixels)->RangeMultiplier(2)->Range(32, 256)->Complexity(benchmark::oN);

void BM_IsbBranchForward(benchmark::State& state) {
  int64_t c = state.range(0);
  std::mt19937_64 rng(8);
  IsbBranch branch(IsbConfig{c, 8, 4}, rng);
  Tensor x = random_tensor({1, c, 32, 32}, 9);
  for (auto _ : state) {
    Tensor y = branch.forward(x);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_IsbBranchForward)->Arg(16)->Arg(32)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
