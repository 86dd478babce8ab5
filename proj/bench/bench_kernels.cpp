// SPDX-License-Identifier: Apache-2.0
//
// Serial reference kernels against their OpenMP counterparts. Thread count
// comes from FINEFORMER_THREADS (default 1), so on a single core both
// flavours should time alike.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fineformer/kernels.hpp"
#include "fineformer/threads.hpp"

namespace {

namespace k = fineformer::kernels;

std::vector<double> random_vector(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

template <auto Kernel>
void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    Kernel(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

k::AttentionShape attention_shape(benchmark::State& state) {
  return {static_cast<std::size_t>(state.range(0)), 13, 2, 16};
}

template <auto Kernel>
void bm_attention_forward(benchmark::State& state) {
  const auto shape = attention_shape(state);
  const auto q = random_vector(shape.rows() * shape.hidden(), 1);
  const auto kk = random_vector(shape.rows() * shape.hidden(), 2);
  const auto v = random_vector(shape.rows() * shape.hidden(), 3);
  std::vector<double> out(shape.rows() * shape.hidden()), probs(shape.prob_count());
  for (auto _ : state) {
    Kernel(shape, q, kk, v, out, probs);
    benchmark::DoNotOptimize(out.data());
  }
}

template <auto Kernel>
void bm_attention_backward(benchmark::State& state) {
  const auto shape = attention_shape(state);
  const std::size_t n = shape.rows() * shape.hidden();
  const auto q = random_vector(n, 1), kk = random_vector(n, 2), v = random_vector(n, 3), d = random_vector(n, 4);
  std::vector<double> out(n), probs(shape.prob_count()), dq(n), dk(n), dv(n);
  k::serial::attention_forward(shape, q, kk, v, out, probs);
  for (auto _ : state) {
    Kernel(shape, q, kk, v, probs, d, dq, dk, dv);
    benchmark::DoNotOptimize(dq.data());
  }
}

BENCHMARK(bm_matmul<k::serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul<k::parallel::matmul>)->Name("matmul/parallel")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul<k::serial::matmul_at_b>)->Name("matmul_at_b/serial")->Arg(128);
BENCHMARK(bm_matmul<k::parallel::matmul_at_b>)->Name("matmul_at_b/parallel")->Arg(128);
BENCHMARK(bm_matmul<k::serial::matmul_a_bt>)->Name("matmul_a_bt/serial")->Arg(128);
BENCHMARK(bm_matmul<k::parallel::matmul_a_bt>)->Name("matmul_a_bt/parallel")->Arg(128);
BENCHMARK(bm_attention_forward<k::serial::attention_forward>)->Name("attention_forward/serial")->Arg(32)->Arg(256);
BENCHMARK(bm_attention_forward<k::parallel::attention_forward>)->Name("attention_forward/parallel")->Arg(32)->Arg(256);
BENCHMARK(bm_attention_backward<k::serial::attention_backward>)->Name("attention_backward/serial")->Arg(32)->Arg(256);
BENCHMARK(bm_attention_backward<k::parallel::attention_backward>)->Name("attention_backward/parallel")->Arg(32)->Arg(256);

}  // namespace

int main(int argc, char** argv) {
  fineformer::configure_workers_from_env();
  benchmark::Initialize(&argc, argv);
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
