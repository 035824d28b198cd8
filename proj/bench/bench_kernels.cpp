// Parallel kernels against their serial references. Pass --benchmark_filter
// to pick one family; thread count follows OMP_NUM_THREADS.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "xabr/kernels.hpp"

namespace {

using xabr::Scalar;
namespace k = xabr::kernels;

std::vector<Scalar> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<Scalar> v(n);
  for (auto& x : v) x = Scalar(dist(rng));
  return v;
}

using GemmFn = void (*)(std::size_t, std::size_t, std::size_t, const Scalar*, const Scalar*, Scalar*);

template <GemmFn Fn>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<Scalar> c(n * n);
  for (auto _ : state) {
    Fn(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_gemm<k::gemm_nn>)->Name("gemm_nn/parallel")->RangeMultiplier(2)->Range(64, 256);
BENCHMARK(BM_gemm<k::reference::gemm_nn>)->Name("gemm_nn/reference")->RangeMultiplier(2)->Range(64, 256);
BENCHMARK(BM_gemm<k::gemm_nt>)->Name("gemm_nt/parallel")->RangeMultiplier(2)->Range(64, 256);
BENCHMARK(BM_gemm<k::reference::gemm_nt>)->Name("gemm_nt/reference")->RangeMultiplier(2)->Range(64, 256);

using SoftmaxFn = void (*)(std::size_t, std::size_t, const Scalar*, Scalar*);

template <SoftmaxFn Fn>
void BM_softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), n = std::size_t{259};
  const auto in = random_vec(rows * n, 3);
  std::vector<Scalar> out(rows * n);
  for (auto _ : state) {
    Fn(rows, n, in.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_softmax<k::softmax_rows>)->Name("softmax/parallel")->Arg(256)->Arg(2048);
BENCHMARK(BM_softmax<k::reference::softmax_rows>)->Name("softmax/reference")->Arg(256)->Arg(2048);

using AttnFn = void (*)(const k::AttentionShape&, const k::MaskRule&, const Scalar*, const Scalar*, const Scalar*,
                        Scalar*, Scalar*);

// Causal self-attention over a batch of 16, width 64, 4 heads.
template <AttnFn Fn>
void BM_attention(benchmark::State& state) {
  k::AttentionShape shape;
  shape.batch = 16;
  shape.q_len = shape.kv_len = static_cast<std::size_t>(state.range(0));
  shape.width = 64;
  shape.heads = 4;
  k::MaskRule mask;
  mask.causal = true;
  const std::size_t act = shape.batch * shape.q_len * shape.width;
  const auto q = random_vec(act, 4), kk = random_vec(act, 5), v = random_vec(act, 6);
  std::vector<Scalar> probs(shape.batch * shape.heads * shape.q_len * shape.kv_len), out(act);
  for (auto _ : state) {
    Fn(shape, mask, q.data(), kk.data(), v.data(), probs.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_attention<k::attention_forward>)->Name("attention/parallel")->Arg(64)->Arg(128);
BENCHMARK(BM_attention<k::reference::attention_forward>)->Name("attention/reference")->Arg(64)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
