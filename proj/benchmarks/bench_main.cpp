#include <benchmark/benchmark.h>

#include "nmsearch/dataset.hpp"
#include "nmsearch/nm.hpp"
#include "nmsearch/rng.hpp"
#include "nmsearch/sampling.hpp"
#include "nmsearch/supernet.hpp"

using namespace nmsearch;

namespace {

Matrix<float> random_weights(std::size_t rows, std::size_t cols) {
  Rng rng(1);
  Matrix<float> m(rows, cols);
  for (auto& v : m.flat()) v = static_cast<float>(standard_normal(rng));
  return m;
}

SearchSpace default_space() {
  return SearchSpace::make(ArchSpec{}, {SparsityLevel::make(1, 4), SparsityLevel::make(2, 4),
                                        SparsityLevel::make(4, 4)}, 0.6);
}

void BM_LayerMask(benchmark::State& state) {
  const auto w = random_weights(static_cast<std::size_t>(state.range(0)), 256);
  const auto level = SparsityLevel::make(2, 4);
  for (auto _ : state) benchmark::DoNotOptimize(layer_mask(w, level));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.size()));
}
BENCHMARK(BM_LayerMask)->Arg(64)->Arg(256);

void BM_EncodeDecode(benchmark::State& state) {
  const auto w = random_weights(256, 256);
  const auto level = SparsityLevel::make(2, 4);
  for (auto _ : state) {
    const auto blob = serialize_encoding(encode_sparse(w, level));
    benchmark::DoNotOptimize(decode_sparse(deserialize_encoding(blob)));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.size()));
}
BENCHMARK(BM_EncodeDecode);

void BM_SupernetForward(benchmark::State& state) {
  const auto space = default_space();
  const auto net = Supernet::from_pretrained(space, DenseModel{space.arch, VitParams<float>::init(space.arch, 2)});
  const auto data = synth_dataset({32, 4, 16, 0.1, 3});
  const auto config = uniform_level_config(space, SparsityLevel::make(2, 4));
  for (auto _ : state) benchmark::DoNotOptimize(forward(net, config, data.features));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_SupernetForward);

void BM_TwoStepSample(benchmark::State& state) {
  const auto space = default_space();
  const TwoStepSampler sampler(space, build_intervals(space, 9), ChoiceProbabilityTable::uniform(space));
  Rng rng(4);
  for (auto _ : state) benchmark::DoNotOptimize(sampler.sample(rng));
}
BENCHMARK(BM_TwoStepSample);

void BM_VanillaSample(benchmark::State& state) {
  const auto space = default_space();
  Rng rng(5);
  for (auto _ : state) benchmark::DoNotOptimize(vanilla_sample(space, rng));
}
BENCHMARK(BM_VanillaSample);

}  // namespace
BENCHMARK_MAIN();
