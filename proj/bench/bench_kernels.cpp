// Parallel kernels vs the serial reference at shapes the toy model hits.
#include <benchmark/benchmark.h>

#include <algorithm>
#include <vector>

#include "tdit/attention.hpp"
#include "tdit/evalsuite.hpp"
#include "tdit/kernels.hpp"
#include "tdit/numerics.hpp"
#include "tdit/training.hpp"

namespace {

std::vector<double> filled(std::size_t n, tdit::Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

template <void (*Kernel)(const double*, const double*, double*, std::size_t, std::size_t,
                         std::size_t)>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  tdit::Rng rng(1);
  // Sized for every layout: tn writes C[k x n] from B[m x n], nt reads B[n x k].
  const auto a = filled(m * k, rng), b = filled(std::max({k * n, m * n, n * k}), rng);
  std::vector<double> c(std::max(m, k) * n);
  for (auto _ : state) {
    Kernel(a.data(), b.data(), c.data(), m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * m * k * n, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

void Shapes(benchmark::internal::Benchmark* b) {
  b->Args({96, 64, 64})->Args({96, 64, 256})->Args({96, 256, 64})->Args({24, 128, 128});
}

BENCHMARK_TEMPLATE(BM_Gemm, tdit::kernels::gemm_nn_acc)->Apply(Shapes);
BENCHMARK_TEMPLATE(BM_Gemm, tdit::kernels::reference::gemm_nn_acc)->Apply(Shapes);
BENCHMARK_TEMPLATE(BM_Gemm, tdit::kernels::gemm_tn_acc)->Apply(Shapes);
BENCHMARK_TEMPLATE(BM_Gemm, tdit::kernels::reference::gemm_tn_acc)->Apply(Shapes);
BENCHMARK_TEMPLATE(BM_Gemm, tdit::kernels::gemm_nt_acc)->Apply(Shapes);
BENCHMARK_TEMPLATE(BM_Gemm, tdit::kernels::reference::gemm_nt_acc)->Apply(Shapes);

void BM_Attention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  tdit::Rng rng(2);
  const auto q = tdit::randn({n, 64}, rng), k = tdit::randn({n, 64}, rng),
             v = tdit::randn({n, 64}, rng);
  tdit::AttentionCache cache;
  for (auto _ : state) {
    auto out = tdit::attention_forward(q, k, v, 2, nullptr, &cache);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Attention)->Arg(48)->Arg(96);

// One optimizer step of the training-check model at batch 16.
void BM_TrainStep(benchmark::State& state) {
  tdit::ModelConfig c;
  c.blocks = 2;
  c.model_dim = 96;
  c.heads = 3;
  c.head_dim = 32;
  c.text_dim = 32;
  c.vocab_size = 9;
  c.caption_len = 1;
  c.mlp_ratio = 2;
  const tdit::Corpus corpus = tdit::generate_corpus(tdit::CorpusConfig{});
  std::vector<tdit::TrainExample> data;
  for (const auto& r : corpus.records) data.push_back({tdit::pixels_to_latent(r.video, c.patch), r.script, {}});
  tdit::Rng rng(3);
  tdit::TrainState st{tdit::ToyDiT::init(c, rng), tdit::AdamW{}, 0};
  tdit::TrainConfig tc;
  tc.total_steps = 1u << 30;
  for (auto _ : state) benchmark::DoNotOptimize(tdit::train_step(st, data, tc).loss);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

// One randomized property trial batch of the ReRoPE suite.
void BM_PropertySuite(benchmark::State& state) {
  tdit::PropertySuiteConfig c;
  c.trials = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(tdit::verify_properties(c).bias.argmax.checks);
}
BENCHMARK(BM_PropertySuite)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
