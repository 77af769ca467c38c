// Serial reference kernels against their OpenMP-parallel counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "stylediff/kernels.hpp"

namespace {

using namespace stylediff;

std::vector<float> random_values(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> dist;
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::gemm(n, n, n, a.data(), b.data(), c.data(), false);
    } else {
      kernels::reference::gemm(n, n, n, a.data(), b.data(), c.data(), false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(2 * n * n * n));
}

template <bool Parallel>
void BM_GemmNT(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  const auto a = random_values(n * n, 3), b = random_values(n * n, 4);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::gemm_nt(n, n, n, a.data(), b.data(), c.data(), false);
    } else {
      kernels::reference::gemm_nt(n, n, n, a.data(), b.data(), c.data(), false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(2 * n * n * n));
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  kernels::AttentionShape shape;
  shape.segments = std::size_t(state.range(0));
  shape.query_len = shape.key_len = 64;
  shape.heads = 4;
  shape.model_dim = 64;
  const std::size_t rows = shape.segments * shape.query_len * shape.model_dim;
  const auto q = random_values(rows, 5), k = random_values(rows, 6), v = random_values(rows, 7);
  std::vector<float> out(rows), probs(shape.probs_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::attention_forward(shape, q.data(), k.data(), v.data(), out.data(), probs.data());
    } else {
      kernels::reference::attention_forward(shape, q.data(), k.data(), v.data(), out.data(), probs.data());
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_AttentionBackward(benchmark::State& state) {
  kernels::AttentionShape shape;
  shape.segments = std::size_t(state.range(0));
  shape.query_len = shape.key_len = 64;
  shape.heads = 4;
  shape.model_dim = 64;
  const std::size_t rows = shape.segments * shape.query_len * shape.model_dim;
  const auto q = random_values(rows, 8), k = random_values(rows, 9), v = random_values(rows, 10);
  const auto dout = random_values(rows, 11);
  std::vector<float> out(rows), probs(shape.probs_size()), dq(rows), dk(rows), dv(rows);
  kernels::reference::attention_forward(shape, q.data(), k.data(), v.data(), out.data(), probs.data());
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::attention_backward(shape, q.data(), k.data(), v.data(), probs.data(), dout.data(), dq.data(),
                                  dk.data(), dv.data());
    } else {
      kernels::reference::attention_backward(shape, q.data(), k.data(), v.data(), probs.data(), dout.data(),
                                             dq.data(), dk.data(), dv.data());
    }
    benchmark::DoNotOptimize(dq.data());
  }
}

BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_GemmNT<false>)->Name("gemm_nt/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_GemmNT<true>)->Name("gemm_nt/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_Attention<false>)->Name("attention/reference")->Arg(8)->Arg(32);
BENCHMARK(BM_Attention<true>)->Name("attention/parallel")->Arg(8)->Arg(32);
BENCHMARK(BM_AttentionBackward<false>)->Name("attention_backward/reference")->Arg(8)->Arg(32);
BENCHMARK(BM_AttentionBackward<true>)->Name("attention_backward/parallel")->Arg(8)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
