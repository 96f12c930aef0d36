// Micro benchmarks for the hot paths: Hough transform, single-pattern indexing, SSIM and a
// BPFA fit on a small map.

#include <benchmark/benchmark.h>

#include "cebsd/bpfa.hpp"
#include "cebsd/indexing.hpp"
#include "cebsd/metrics.hpp"
#include "cebsd/phantom.hpp"
#include "cebsd/sampling.hpp"

namespace {

using namespace cebsd;

const GrainMap& bench_phantom(std::size_t side) {
  static GrainMap gm64 = voronoi_phantom(ProbeGrid(64, 64), 8, 7);
  static GrainMap gm32 = voronoi_phantom(ProbeGrid(32, 32), 4, 7);
  return side == 64 ? gm64 : gm32;
}

void BM_HoughTransform(benchmark::State& state) {
  const PatternParams pp;
  const Pattern p = synth_pattern({0.1, 0.4, 0.7}, pp.height, pp.width, pp.n_bands,
                                  pp.band_width, pp.amplitude);
  const auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(hough_transform(p, n, n));
}
BENCHMARK(BM_HoughTransform)->Arg(40)->Arg(90);

void BM_IndexPattern(benchmark::State& state) {
  const auto& gm = bench_phantom(64);
  const PatternParams pp;
  const IndexingParams ip;
  const auto lib = build_library(gm.orientations(), pp, ip);
  const Pattern p = synth_probe_pattern(gm, boundary_flags(gm), 100, pp);
  for (auto _ : state) benchmark::DoNotOptimize(index_pattern(p, lib, ip));
}
BENCHMARK(BM_IndexPattern);

void BM_SsimRgb(benchmark::State& state) {
  const auto& gm = bench_phantom(64);
  const auto maps = phantom_maps(gm, 0.5);
  RgbMap est = maps.ipf;
  for (std::size_t c = 0; c < 3; ++c) est.set(c, 0, 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(maps.ipf, est));
}
BENCHMARK(BM_SsimRgb);

void BM_BpfaInpaintIpf(benchmark::State& state) {
  const auto& gm = bench_phantom(32);
  const auto maps = phantom_maps(gm, 0.5);
  const auto mask = uds_mask(gm.grid(), 0.25, 1);
  const auto observed = apply_mask(maps.ipf, mask);
  InpaintOptions opts;
  opts.patch = select_patch_shape(0.25, MapKind::ipf);
  opts.bpfa.seed = 1;
  for (auto _ : state) benchmark::DoNotOptimize(inpaint(observed, mask, opts));
}
BENCHMARK(BM_BpfaInpaintIpf)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
