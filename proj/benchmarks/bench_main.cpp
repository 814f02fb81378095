#include <benchmark/benchmark.h>

#include "hflow/bases.hpp"
#include "hflow/bench.hpp"
#include "hflow/fitting.hpp"
#include "hflow/geometry.hpp"
#include "hflow/subspace.hpp"

namespace {

using namespace hflow;

void BM_BuildBasis(benchmark::State& state) {
  const int w = static_cast<int>(state.range(0)), h = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(build(w, h));
}
BENCHMARK(BM_BuildBasis)->Args({64, 64})->Args({576, 320})->Unit(benchmark::kMillisecond);

void BM_SynthesizeAnalyze(benchmark::State& state) {
  const BasisSet b = build(576, 320);
  BasisWeights w;
  w.alpha = {1.0, -2.0, 3.0, 0.5, -0.5, 4.0, 0.2, -0.1};
  for (auto _ : state) {
    const FlowField f = synthesize(b, w);
    benchmark::DoNotOptimize(analyze(b, f));
  }
}
BENCHMARK(BM_SynthesizeAnalyze)->Unit(benchmark::kMillisecond);

void BM_WarpImage(benchmark::State& state) {
  BenchSpec spec;
  const BenchSample s = gen_sample(spec, 0);
  const FlowField f = homography_to_flow(s.gt, spec.width, spec.height);
  for (auto _ : state) benchmark::DoNotOptimize(warp_image(s.i_a, f));
}
BENCHMARK(BM_WarpImage)->Unit(benchmark::kMillisecond);

void BM_LrrProject(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const ProjectionBasis v = ProjectionBasis::random_gaussian(72, 40, k, 1);
  const ProjectionBasis src = ProjectionBasis::random_gaussian(72, 40, 64, 2);
  const FeatureMap m = FeatureMap::from_matrix(72, 40, src.v());
  for (auto _ : state) benchmark::DoNotOptimize(lrr_project(m, v));
}
BENCHMARK(BM_LrrProject)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_AlignDirect(benchmark::State& state) {
  BenchSpec spec;
  spec.noise_sigma = 2.0 / 255.0;
  const BenchSample s = gen_sample(spec, 0);
  const BasisSet b = build(spec.width, spec.height);
  for (auto _ : state) benchmark::DoNotOptimize(align_direct(s.i_a, s.i_b, b, AlignConfig{}));
}
BENCHMARK(BM_AlignDirect)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
