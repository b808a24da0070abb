#include <benchmark/benchmark.h>

#include <vector>

#include "charm/retrieval.hpp"
#include "charm/rng.hpp"

namespace {

charm::TwoTierIndex random_index(std::size_t m, std::size_t n_fields, std::size_t d) {
  charm::Rng rng(1);
  auto fill = [&] {
    charm::Tensor<float> t(m, d);
    for (auto& x : t.values()) x = static_cast<float>(rng.normal());
    return t;
  };
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < m; ++i) ids.push_back("p" + std::to_string(i));
  std::vector<charm::Tensor<float>> fields;
  for (std::size_t f = 0; f < n_fields; ++f) fields.push_back(fill());
  return charm::TwoTierIndex(std::move(ids), fill(), std::move(fields));
}

std::vector<float> random_query(std::size_t d) {
  charm::Rng rng(2);
  std::vector<float> q(d);
  for (auto& x : q) x = static_cast<float>(rng.normal());
  return q;
}

void BM_TwoStage(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto index = random_index(m, 4, 64);
  const auto q = random_query(64);
  for (auto _ : state) benchmark::DoNotOptimize(index.two_stage_search(q, k, std::min<std::size_t>(k, 100)));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_TwoStage)->Args({2000, 100})->Args({20000, 100})->Args({20000, 1000});

void BM_FullFieldSearch(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto index = random_index(m, 4, 64);
  const auto q = random_query(64);
  for (auto _ : state) benchmark::DoNotOptimize(index.full_field_search(q, 100));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_FullFieldSearch)->Arg(2000)->Arg(20000);

}  // namespace
