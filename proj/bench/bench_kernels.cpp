// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

// Parallel kernels against their serial references. Run with
// OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "gleak/kernels.hpp"

namespace k = gleak::kernels;

namespace {

std::vector<double> randoms(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// im2col-like index: each source entry is read ~9 times, 1 in 10 padded.
std::vector<k::Index> indices(std::size_t n, std::size_t range, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<k::Index> u(-static_cast<k::Index>(range) / 9, static_cast<k::Index>(range) - 1);
  std::vector<k::Index> idx(n);
  for (auto& i : idx) i = std::max<k::Index>(-1, u(rng));
  return idx;
}

template <auto Gemm>
void BM_gemm(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto a = randoms(n * n, 1), b = randoms(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : st) {
    Gemm(false, true, n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * 2 * n * n * n));
}

template <auto Gather>
void BM_gather(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto x = randoms(n, 3);
  const auto idx = indices(9 * n, n, 4);
  std::vector<double> out(idx.size());
  for (auto _ : st) {
    Gather(x, idx, out);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetBytesProcessed(static_cast<std::int64_t>(st.iterations() * idx.size() * 16));
}

template <auto Scatter>
void BM_scatter_add(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto idx = indices(9 * n, n, 5);
  const auto g = randoms(idx.size(), 6);
  std::vector<double> out(n);
  for (auto _ : st) {
    std::fill(out.begin(), out.end(), 0.0);
    Scatter(g, idx, out);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetBytesProcessed(static_cast<std::int64_t>(st.iterations() * idx.size() * 16));
}

}  // namespace

BENCHMARK(BM_gemm<k::gemm>)->Name("gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<k::reference::gemm>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_gather<k::gather>)->Name("gather/parallel")->Arg(1 << 14)->Arg(1 << 18);
BENCHMARK(BM_gather<k::reference::gather>)->Name("gather/serial")->Arg(1 << 14)->Arg(1 << 18);
BENCHMARK(BM_scatter_add<k::scatter_add>)->Name("scatter_add/parallel")->Arg(1 << 14)->Arg(1 << 18);
BENCHMARK(BM_scatter_add<k::reference::scatter_add>)->Name("scatter_add/serial")->Arg(1 << 14)->Arg(1 << 18);

BENCHMARK_MAIN();
