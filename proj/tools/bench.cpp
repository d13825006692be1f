#include <benchmark/benchmark.h>

#include "featflow/aggregate.hpp"
#include "featflow/conv.hpp"
#include "featflow/correlation.hpp"
#include "featflow/reference.hpp"
#include "featflow/rng.hpp"
#include "featflow/warp.hpp"

// Parallel kernels against their serial reference implementations at sizes
// where the loops dominate.

namespace {

using namespace featflow;

Tensor make_tensor(uint64_t seed, int c, int h, int w) {
  Rng rng(seed);
  Tensor t(c, h, w);
  for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

struct ConvSetup {
  Tensor input = make_tensor(1, 32, 64, 64);
  Param w{"w", {32, 32, 3, 3}};
  Param b{"b", {32}};
  ConvSetup() {
    Rng rng(2);
    for (double& v : w.value) v = rng.uniform(-0.2, 0.2);
  }
};

void BM_conv2d_parallel(benchmark::State& state) {
  ConvSetup s;
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d_forward(s.input, s.w, s.b, 1, 1));
  }
}
BENCHMARK(BM_conv2d_parallel)->Unit(benchmark::kMillisecond);

void BM_conv2d_serial(benchmark::State& state) {
  ConvSetup s;
  for (auto _ : state) {
    benchmark::DoNotOptimize(reference::conv2d_forward(s.input, s.w, s.b, 1, 1));
  }
}
BENCHMARK(BM_conv2d_serial)->Unit(benchmark::kMillisecond);

struct WarpSetup {
  Tensor feature = make_tensor(3, 32, 128, 128);
  FlowMap flow;
  WarpSetup() {
    Rng rng(4);
    flow = FlowMap(2, 128, 128);
    for (double& v : flow.data) v = rng.uniform(-3.0, 3.0);
  }
};

void BM_warp_parallel(benchmark::State& state) {
  WarpSetup s;
  for (auto _ : state) {
    benchmark::DoNotOptimize(bilinear_warp(s.feature, s.flow));
  }
}
BENCHMARK(BM_warp_parallel)->Unit(benchmark::kMillisecond);

void BM_warp_serial(benchmark::State& state) {
  WarpSetup s;
  for (auto _ : state) {
    benchmark::DoNotOptimize(reference::bilinear_warp(s.feature, s.flow));
  }
}
BENCHMARK(BM_warp_serial)->Unit(benchmark::kMillisecond);

struct CorrSetup {
  Tensor a = make_tensor(5, 16, 64, 64);
  Tensor b = make_tensor(6, 16, 64, 64);
  CorrConfig cfg{4, 1};
};

void BM_correlation_parallel(benchmark::State& state) {
  CorrSetup s;
  for (auto _ : state) {
    benchmark::DoNotOptimize(correlation(s.a, s.b, s.cfg));
  }
}
BENCHMARK(BM_correlation_parallel)->Unit(benchmark::kMillisecond);

void BM_correlation_serial(benchmark::State& state) {
  CorrSetup s;
  for (auto _ : state) {
    benchmark::DoNotOptimize(reference::correlation(s.a, s.b, s.cfg));
  }
}
BENCHMARK(BM_correlation_serial)->Unit(benchmark::kMillisecond);

struct AggSetup {
  Tensor current = make_tensor(7, 32, 64, 64);
  std::vector<Tensor> neighbors{make_tensor(8, 32, 64, 64), make_tensor(9, 32, 64, 64)};
};

void BM_aggregate_parallel(benchmark::State& state) {
  AggSetup s;
  for (auto _ : state) {
    benchmark::DoNotOptimize(aggregate(s.current, s.neighbors));
  }
}
BENCHMARK(BM_aggregate_parallel)->Unit(benchmark::kMillisecond);

void BM_aggregate_serial(benchmark::State& state) {
  AggSetup s;
  for (auto _ : state) {
    benchmark::DoNotOptimize(reference::aggregate(s.current, s.neighbors));
  }
}
BENCHMARK(BM_aggregate_serial)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
