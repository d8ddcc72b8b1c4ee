// Serial reference kernels against their OpenMP counterparts. Thread count
// follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include "cadtext/kernels.hpp"
#include "cadtext/random.hpp"

using namespace cadtext;

namespace {

Matrix<float> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix<float> m(r, c);
  for (auto& x : m.values()) x = static_cast<float>(rng.uniform(-1, 1));
  return m;
}

// Shapes: sequence length x d_model times d_model x d_ff.
template <bool Parallel>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, 64, 1), b = random_matrix(64, 256, 2);
  Matrix<float> c(n, 256);
  for (auto _ : state) {
    c.fill(0);
    if constexpr (Parallel)
      kernels::matmul_acc(a, b, c);
    else
      kernels::serial::matmul_acc(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 64 * 256));
}

template <bool Parallel>
void BM_matmul_nt(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, 64, 3), b = random_matrix(n, 64, 4);
  Matrix<float> c(n, n);
  for (auto _ : state) {
    c.fill(0);
    if constexpr (Parallel)
      kernels::matmul_nt_acc(a, b, c);
    else
      kernels::serial::matmul_nt_acc(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
}

template <bool Parallel>
void BM_matmul_tn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, 64, 5), b = random_matrix(n, 256, 6);
  Matrix<float> c(64, 256);
  for (auto _ : state) {
    c.fill(0);
    if constexpr (Parallel)
      kernels::matmul_tn_acc(a, b, c);
    else
      kernels::serial::matmul_tn_acc(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
}

template <bool Parallel>
void BM_softmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto scores = random_matrix(n, n, 7);
  std::vector<std::uint8_t> mask(n, 1);
  for (std::size_t i = n - n / 4; i < n; ++i) mask[i] = 0;
  for (auto _ : state) {
    auto s = scores;
    if constexpr (Parallel)
      kernels::masked_softmax_rows<float>(s, mask);
    else
      kernels::serial::masked_softmax_rows<float>(s, mask);
    benchmark::DoNotOptimize(s.data());
  }
}

template <bool Parallel>
void BM_layer_norm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_matrix(n, 64, 8);
  Matrix<float> xhat(n, 64);
  std::vector<float> rstd(n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::layer_norm_rows<float>(x, 1e-5f, xhat, rstd);
    else
      kernels::serial::layer_norm_rows<float>(x, 1e-5f, xhat, rstd);
    benchmark::DoNotOptimize(xhat.data());
  }
}

}  // namespace

BENCHMARK(BM_matmul<false>)->Name("matmul/serial")->Arg(32)->Arg(128)->Arg(512);
BENCHMARK(BM_matmul<true>)->Name("matmul/omp")->Arg(32)->Arg(128)->Arg(512);
BENCHMARK(BM_matmul_nt<false>)->Name("matmul_nt/serial")->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_matmul_nt<true>)->Name("matmul_nt/omp")->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_matmul_tn<false>)->Name("matmul_tn/serial")->Arg(32)->Arg(128)->Arg(512);
BENCHMARK(BM_matmul_tn<true>)->Name("matmul_tn/omp")->Arg(32)->Arg(128)->Arg(512);
BENCHMARK(BM_softmax<false>)->Name("softmax/serial")->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_softmax<true>)->Name("softmax/omp")->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_layer_norm<false>)->Name("layer_norm/serial")->Arg(32)->Arg(128)->Arg(512);
BENCHMARK(BM_layer_norm<true>)->Name("layer_norm/omp")->Arg(32)->Arg(128)->Arg(512);

BENCHMARK_MAIN();
