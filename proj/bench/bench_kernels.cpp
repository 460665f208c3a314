// Serial reference vs OpenMP kernels. Thread count follows OMP_NUM_THREADS.
//
//   OMP_NUM_THREADS=4 ./build/bench/bench_kernels

#include <benchmark/benchmark.h>

#include <vector>

#include "sinbasis/kernels.hpp"
#include "sinbasis/rng.hpp"

using namespace sinbasis;
using namespace sinbasis::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t salt) {
  Rng rng(derive_seed(0, "bench", salt));
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// Square gemm of size N.
template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) parallel::gemm(false, false, n, n, n, a, b, c);
    else serial::gemm(false, false, n, n, n, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["threads"] = thread_count();
  state.SetItemsProcessed(state.iterations() * static_cast<long>(2 * n * n * n));
}

// A 3x3 convolution layer's im2col on a C x S x S image.
ConvGeometry conv_geometry(std::size_t channels, std::size_t size) {
  ConvGeometry g;
  g.channels = channels;
  g.in_h = g.in_w = size;
  g.kernel_h = g.kernel_w = 3;
  g.padding = 1;
  return g;
}

template <bool Parallel>
void BM_im2col(benchmark::State& state) {
  const ConvGeometry g = conv_geometry(static_cast<std::size_t>(state.range(0)), 32);
  const auto img = random_vec(g.channels * g.in_h * g.in_w, 3);
  std::vector<double> cols(g.patch_size() * g.windows());
  for (auto _ : state) {
    if constexpr (Parallel) parallel::im2col(g, img, cols);
    else serial::im2col(g, img, cols);
    benchmark::DoNotOptimize(cols.data());
  }
  state.counters["threads"] = thread_count();
}

template <bool Parallel>
void BM_col2im(benchmark::State& state) {
  const ConvGeometry g = conv_geometry(static_cast<std::size_t>(state.range(0)), 32);
  const auto cols = random_vec(g.patch_size() * g.windows(), 4);
  std::vector<double> img(g.channels * g.in_h * g.in_w);
  for (auto _ : state) {
    std::fill(img.begin(), img.end(), 0.0);
    if constexpr (Parallel) parallel::col2im(g, cols, img);
    else serial::col2im(g, cols, img);
    benchmark::DoNotOptimize(img.data());
  }
  state.counters["threads"] = thread_count();
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_im2col<false>)->Name("im2col/serial")->Arg(1)->Arg(16);
BENCHMARK(BM_im2col<true>)->Name("im2col/parallel")->Arg(1)->Arg(16);
BENCHMARK(BM_col2im<false>)->Name("col2im/serial")->Arg(1)->Arg(16);
BENCHMARK(BM_col2im<true>)->Name("col2im/parallel")->Arg(1)->Arg(16);

BENCHMARK_MAIN();
