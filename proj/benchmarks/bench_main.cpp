#include <benchmark/benchmark.h>

#include <random>

#include "tpmil/evaluation.hpp"
#include "tpmil/model.hpp"

namespace {

tpmil::Matrix random_bag(std::size_t m, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist;
  tpmil::Matrix x(m, d);
  for (double& v : x.values()) v = dist(gen);
  return x;
}

tpmil::ModelConfig config(std::size_t hidden, std::size_t attn) {
  tpmil::ModelConfig c;
  c.num_classes = 3;
  c.feature_dim = 1024;
  c.hidden_dim = hidden;
  c.attention_dim = attn;
  return c;
}

// args: instances, L, A
void BM_Forward(benchmark::State& state) {
  const auto cfg = config(static_cast<std::size_t>(state.range(1)), static_cast<std::size_t>(state.range(2)));
  const auto params = tpmil::ModelParams::initialize(cfg, 1);
  const auto x = random_bag(static_cast<std::size_t>(state.range(0)), cfg.feature_dim, 2);
  for (auto _ : state) benchmark::DoNotOptimize(tpmil::forward(params, x, 1, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Args({64, 512, 256})->Args({512, 512, 256})->Args({512, 64, 32})->Unit(benchmark::kMillisecond);

void BM_Backward(benchmark::State& state) {
  const auto cfg = config(static_cast<std::size_t>(state.range(1)), static_cast<std::size_t>(state.range(2)));
  const auto params = tpmil::ModelParams::initialize(cfg, 1);
  const auto x = random_bag(static_cast<std::size_t>(state.range(0)), cfg.feature_dim, 2);
  for (auto _ : state) benchmark::DoNotOptimize(tpmil::backward(params, x, 1, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Backward)->Args({64, 512, 256})->Args({512, 512, 256})->Args({512, 64, 32})->Unit(benchmark::kMillisecond);

void BM_AucBinary(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 gen(3);
  std::normal_distribution<double> dist;
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = dist(gen);
    labels[i] = static_cast<int>(i % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(tpmil::auc_binary(scores, labels));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_AucBinary)->RangeMultiplier(8)->Range(64, 1 << 18)->Complexity(benchmark::oNLogN);

}  // namespace

BENCHMARK_MAIN();
