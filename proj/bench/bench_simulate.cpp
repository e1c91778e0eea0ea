// Parallel lift recursion against the serial direct reference on a fractional lift.

#include <benchmark/benchmark.h>

#include "volterra/kernels.hpp"
#include "volterra/problems.hpp"
#include "volterra/simulate.hpp"

using namespace volterra;

namespace {

struct Fixture {
  Fixture(std::size_t steps, std::size_t paths)
      : coeffs(problems::build(problems::preset("rates"))),
        k(kernels::build_fractional_lift(0.8, 0.9, 0.55, 1e-3, 1e5, 20, 1.0 / 3.0)),
        grid(1.0, steps),
        ens(grid, paths, 7),
        xi(constant_forcing(grid, std::vector<double>{1.0})),
        u(ControlPath::constant(steps, 0.0)) {}
  std::unique_ptr<PolyCoefficients> coeffs;
  kernels::DiscreteLaplaceKernel k;
  TimeGrid grid;
  BrownianEnsemble ens;
  std::vector<double> xi;
  ControlPath u;
};

void BM_lift_parallel(benchmark::State& st) {
  Fixture f(static_cast<std::size_t>(st.range(0)), 256);
  for (auto _ : st) benchmark::DoNotOptimize(simulate_sve(*f.coeffs, f.u, f.k, f.xi, f.ens).x.data());
}

void BM_lift_serial(benchmark::State& st) {
  Fixture f(static_cast<std::size_t>(st.range(0)), 256);
  SimOptions o;
  o.parallel = false;
  for (auto _ : st) benchmark::DoNotOptimize(simulate_sve(*f.coeffs, f.u, f.k, f.xi, f.ens, o).x.data());
}

void BM_direct_reference(benchmark::State& st) {
  Fixture f(static_cast<std::size_t>(st.range(0)), 256);
  for (auto _ : st) benchmark::DoNotOptimize(simulate_sve_reference(*f.coeffs, f.u, f.k, f.xi, f.ens).x.data());
}

}  // namespace

BENCHMARK(BM_lift_parallel)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_lift_serial)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_direct_reference)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
