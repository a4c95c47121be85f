// Reference (serial) vs OpenMP kernels at model-sized and batch-sized shapes.
#include <benchmark/benchmark.h>

#include <vector>

#include "ambl/kernels.hpp"
#include "ambl/rng.hpp"

namespace {

std::vector<float> random_vec(std::size_t n, uint64_t seed) {
  ambl::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(ambl::standard_normal(rng));
  return v;
}

template <bool Reference>
void BM_gemm(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0)), k = static_cast<int>(state.range(1)), n = static_cast<int>(state.range(2));
  const auto a = random_vec(std::size_t(m) * k, 1), b = random_vec(std::size_t(k) * n, 2);
  std::vector<float> c(std::size_t(m) * n);
  for (auto _ : state) {
    if constexpr (Reference) {
      ambl::kernels::reference::gemm<float>(a, b, c, m, k, n, false);
    } else {
      ambl::kernels::gemm<float>(a, b, c, m, k, n, false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(m) * k * n);
}

template <bool Reference>
void BM_gemm_bt(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0)), k = static_cast<int>(state.range(1)), n = static_cast<int>(state.range(2));
  const auto a = random_vec(std::size_t(m) * k, 3), b = random_vec(std::size_t(n) * k, 4);
  std::vector<float> c(std::size_t(m) * n);
  for (auto _ : state) {
    if constexpr (Reference) {
      ambl::kernels::reference::gemm_bt<float>(a, b, c, m, k, n, false);
    } else {
      ambl::kernels::gemm_bt<float>(a, b, c, m, k, n, false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(m) * k * n);
}

template <bool Reference>
void BM_softmax(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0));
  const auto s = random_vec(std::size_t(rows) * rows, 5);
  std::vector<float> out(s.size());
  for (auto _ : state) {
    if constexpr (Reference) {
      ambl::kernels::reference::causal_softmax<float>(s, out, rows, rows, 0);
    } else {
      ambl::kernels::causal_softmax<float>(s, out, rows, rows, 0);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Reference>
void BM_layer_norm(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0)), cols = 64;
  const auto x = random_vec(std::size_t(rows) * cols, 6);
  const std::vector<float> gain(cols, 1.0f), bias(cols, 0.0f);
  std::vector<float> y(x.size()), mean(rows), rstd(rows);
  for (auto _ : state) {
    if constexpr (Reference) {
      ambl::kernels::reference::layer_norm<float>(x, gain, bias, y, mean, rstd, rows, cols, 1e-5f);
    } else {
      ambl::kernels::layer_norm<float>(x, gain, bias, y, mean, rstd, rows, cols, 1e-5f);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

// One sequence (42 × 64 → 192 / 256), then a 64-sequence batch stacked along rows.
void gemm_shapes(benchmark::internal::Benchmark* b) {
  b->Args({42, 64, 192})->Args({42, 64, 256})->Args({42, 256, 64})->Args({2688, 64, 256})->Args({2688, 256, 64});
}

}  // namespace

BENCHMARK(BM_gemm<true>)->Name("gemm/reference")->Apply(gemm_shapes);
BENCHMARK(BM_gemm<false>)->Name("gemm/openmp")->Apply(gemm_shapes);
BENCHMARK(BM_gemm_bt<true>)->Name("gemm_bt/reference")->Apply(gemm_shapes);
BENCHMARK(BM_gemm_bt<false>)->Name("gemm_bt/openmp")->Apply(gemm_shapes);
BENCHMARK(BM_softmax<true>)->Name("causal_softmax/reference")->Arg(42)->Arg(512);
BENCHMARK(BM_softmax<false>)->Name("causal_softmax/openmp")->Arg(42)->Arg(512);
BENCHMARK(BM_layer_norm<true>)->Name("layer_norm/reference")->Arg(42)->Arg(2688);
BENCHMARK(BM_layer_norm<false>)->Name("layer_norm/openmp")->Arg(42)->Arg(2688);

BENCHMARK_MAIN();
