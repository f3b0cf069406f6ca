#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "agggp/bags.hpp"
#include "agggp/distreg.hpp"
#include "agggp/optim.hpp"
#include "agggp/variational.hpp"

using namespace agggp;

namespace {

// n regions, one 2-d resolution with `points` uniform points per region.
MultiResDataset make_dataset(Index n, Index points, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<MultiResBag> bags;
  for (Index i = 0; i < n; ++i) {
    MultiResBag mb;
    mb.region_id = "r" + std::to_string(i);
    Bag b;
    b.region_id = mb.region_id;
    b.points.resize(points, 2);
    for (Index t = 0; t < b.points.size(); ++t) b.points.data()[t] = unif(rng);
    b.weights = Eigen::VectorXd::Constant(points, 1.0 / static_cast<double>(points));
    mb.resolutions.push_back(std::move(b));
    mb.label = normal(rng);
    bags.push_back(std::move(mb));
  }
  return MultiResDataset::from_bags(bags, {{"space", KernelFamily::Matern32}});
}

void BM_ElboGrad(benchmark::State& state) {
  const Index inducing = state.range(0), batch_size = state.range(1);
  const auto data = make_dataset(inducing, 100);
  const auto model = initialize_model(data);
  std::vector<Index> batch;
  for (Index i = 0; i < batch_size; ++i) batch.push_back(i);
  for (auto _ : state) benchmark::DoNotOptimize(elbo_grad(model, data, batch, data.size()));
}
BENCHMARK(BM_ElboGrad)->Args({50, 16})->Args({100, 16})->Args({300, 16})->Unit(benchmark::kMillisecond);

void BM_AggregatedGram(benchmark::State& state) {
  const auto data = make_dataset(state.range(0), state.range(1));
  const KernelSpec k{KernelFamily::Matern32, 1.0, 0.3, 2};
  for (auto _ : state) benchmark::DoNotOptimize(aggregated_gram(k, data.resolution(0), data.resolution(0)));
}
BENCHMARK(BM_AggregatedGram)->Args({50, 100})->Args({100, 100})->Unit(benchmark::kMillisecond);

void BM_EmbeddingGram(benchmark::State& state) {
  const auto data = make_dataset(state.range(0), state.range(1));
  const auto specs = default_level1_specs(data);
  for (auto _ : state) benchmark::DoNotOptimize(embedding_gram(specs, data, data));
}
BENCHMARK(BM_EmbeddingGram)->Args({100, 100})->Args({300, 100})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
