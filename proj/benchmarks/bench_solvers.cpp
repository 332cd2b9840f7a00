#include <benchmark/benchmark.h>

#include "kpe/estimators.hpp"
#include "kpe/instances.hpp"
#include "kpe/kernels.hpp"

namespace {

kpe::Dataset make_data(int n) { return kpe::sample_dataset(kpe::singular_missing_data(2.0), n, 7); }

void BM_DenseFit(benchmark::State& state) {
  const auto data = make_data(static_cast<int>(state.range(0)));
  const auto kernel = kpe::KernelSpec::laplacian(2.0);
  for (auto _ : state) {
    auto model = kpe::krr_fit(data, kernel, 0.5 / data.size(), std::nullopt, kpe::SolvePath::kDense);
    benchmark::DoNotOptimize(model.dual_coefficients.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_DenseFit)->RangeMultiplier(2)->Range(100, 1600)->Complexity();

void BM_StructuredFit(benchmark::State& state) {
  const auto data = make_data(static_cast<int>(state.range(0)));
  const auto kernel = kpe::KernelSpec::laplacian(2.0);
  for (auto _ : state) {
    auto model = kpe::krr_fit(data, kernel, 0.5 / data.size(), std::nullopt, kpe::SolvePath::kStructured);
    benchmark::DoNotOptimize(model.dual_coefficients.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_StructuredFit)->RangeMultiplier(2)->Range(100, 12800)->Complexity();

void BM_CrossfitEstimate(benchmark::State& state) {
  const auto inst = kpe::singular_missing_data(2.0);
  const auto data = kpe::sample_dataset(inst, state.range(0), 11);
  const auto kernel = kpe::KernelSpec::laplacian(2.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(kpe::crossfit_two_stage(data, kernel, kpe::OptEmpiricalRidge{}, inst.omega));
  }
}
BENCHMARK(BM_CrossfitEstimate)->Arg(800)->Arg(12800);

void BM_PeriodicGram(benchmark::State& state) {
  const auto kernel = kpe::KernelSpec::periodic_sobolev(2.0, 1, 1, 400);
  const auto inst = kpe::continuum_bandit(1, 1, 2.0, kpe::PolicyMap::identity(), std::nullopt);
  const auto pts = kpe::sample_state_actions(inst, static_cast<int>(state.range(0)), 3);
  for (auto _ : state) {
    auto g = kpe::gram_matrix(kernel, pts);
    benchmark::DoNotOptimize(g.entries().data());
  }
}
BENCHMARK(BM_PeriodicGram)->Arg(200)->Arg(800);

}  // namespace

BENCHMARK_MAIN();
