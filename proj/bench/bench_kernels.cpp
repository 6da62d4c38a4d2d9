// Serial reference kernels against their OpenMP versions.

#include "pdeinv/adjoint.hpp"
#include "pdeinv/metric.hpp"
#include "pdeinv/runner.hpp"

#include <benchmark/benchmark.h>

#include <memory>

namespace {

struct Fixture {
  pdeinv::Mesh mesh;
  pdeinv::ObservationSet obs;
  pdeinv::Vector u;

  explicit Fixture(int elements) : mesh(elements) {
    for (int j = 0; j <= 8; ++j) obs.locations.push_back(j / 8.0);
    obs.noise_std = 0.01;
    obs.data = pdeinv::Vector::Ones(static_cast<Eigen::Index>(obs.locations.size()));
    u = pdeinv::truth_field(mesh);
  }
};

pdeinv::Execution mode(const benchmark::State& state) {
  return state.range(1) == 0 ? pdeinv::Execution::serial : pdeinv::Execution::parallel;
}

void BM_AssembleFisher(benchmark::State& state) {
  Fixture f(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    pdeinv::DerivativeWorkspace ws(f.mesh, f.obs, pdeinv::kDefaultBiot);
    ws.set_point(f.u);
    benchmark::DoNotOptimize(ws.assemble_fisher(mode(state)));
  }
}

void BM_AssembleHessian(benchmark::State& state) {
  Fixture f(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    pdeinv::DerivativeWorkspace ws(f.mesh, f.obs, pdeinv::kDefaultBiot);
    ws.set_point(f.u);
    benchmark::DoNotOptimize(ws.assemble_hessian(mode(state)));
  }
}

void BM_MetricDerivatives(benchmark::State& state) {
  Fixture f(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    pdeinv::DerivativeWorkspace ws(f.mesh, f.obs, pdeinv::kDefaultBiot);
    ws.set_point(f.u);
    benchmark::DoNotOptimize(ws.metric_derivatives(mode(state)));
  }
}

}  // namespace

BENCHMARK(BM_AssembleFisher)->ArgsProduct({{64, 256, 1024}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AssembleHessian)->ArgsProduct({{64, 256, 1024}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MetricDerivatives)->ArgsProduct({{4, 16, 32}, {0, 1}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
