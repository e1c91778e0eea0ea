#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "volterra/bsee.hpp"
#include "volterra/bsvie.hpp"
#include "volterra/kernels.hpp"
#include "volterra/problems.hpp"

using namespace volterra;
namespace kn = volterra::kernels;

namespace {

struct Case {
  problems::ProblemSpec spec;
  std::unique_ptr<PolyCoefficients> c;
  TimeGrid g;
  BrownianEnsemble ens;
  std::vector<double> xi;
  ControlPath u;
  StateEnsemble x;
  bsee::AdjointSolution adj;
};

Case make(problems::ProblemSpec spec, const kn::DiscreteLaplaceKernel& k, std::size_t N = 32,
          std::size_t paths = 20, bool second = false, bsee::AdjointOptions o = {}) {
  const TimeGrid g(1.0, N);
  Case c{spec, problems::build(spec), g, BrownianEnsemble(g, paths, 2),
         constant_forcing(g, std::vector<double>{spec.x0}), ControlPath::constant(N, spec.u_hat), {}, {}};
  c.x = simulate_sve(*c.c, c.u, k, c.xi, c.ens);
  c.adj = bsee::assemble_first_adjoint(*c.c, c.u, c.x, k, c.xi, c.ens, o);
  if (second) bsee::assemble_second_adjoint(*c.c, c.adj, k, c.u, c.x);
  return c;
}

problems::ProblemSpec zero_spec() {
  problems::ProblemSpec s;
  s.name = "zero";
  s.U = {0.0};
  return s;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

kn::DiscreteLaplaceKernel frac_lift() {
  return kn::build_fractional_lift(0.8, 0.9, kn::gamma_interval(0.8, 0.9, 1.0 / 3).midpoint(), 1e-3, 1e5, 10,
                                   1.0 / 3);
}

}  // namespace

TEST_CASE("zero problem gives a zero tuple and zero residuals") {
  const auto k = kn::exponential_kernel(1.0);
  auto z = make(zero_spec(), k, 32, 20, true);
  const auto t1 = bsvie::bsee_to_bsvie_first(z.adj, k);
  CHECK(t1.pV1.max_abs() == 0.0);
  CHECK(t1.pV2.max_abs() == 0.0);
  CHECK(max_abs(t1.qV1) == 0.0);
  CHECK(max_abs(t1.qV2) == 0.0);
  const auto r1 = bsvie::bsvie_residual_first(t1, *z.c, z.u, z.x, k, z.ens);
  CHECK(r1.line1 == 0.0);
  CHECK(r1.line2 == 0.0);
  CHECK(r1.m_constraint == 0.0);

  const auto t2 = bsvie::bsee_to_bsvie_second(z.adj, k);
  CHECK(max_abs(t2.PV1) == 0.0);
  CHECK(max_abs(t2.PV3) == 0.0);
  CHECK(max_abs(t2.sP) == 0.0);
  const auto r2 = bsvie::bsvie_residual_second(t2, *z.c, z.u, z.x, k);
  CHECK(std::max({r2.eq1, r2.eq2, r2.eq3, r2.eq4}) == 0.0);
}

TEST_CASE("first-order bridge on deterministic oracles") {
  for (const auto& k : {kn::exponential_kernel(1.0), kn::delta0_kernel(), kn::exponential_kernel(3.0)}) {
    auto c = make(problems::preset("lq"), k, 48, 30);
    const auto tup = bsvie::bsee_to_bsvie_first(c.adj, k);
    const auto res = bsvie::bsvie_residual_first(tup, *c.c, c.u, c.x, k, c.ens);
    CHECK(res.line1 <= 1e-8);
    CHECK(res.line2 <= 1e-8);
    CHECK(res.m_constraint <= 1e-8);
    CHECK(bsvie::first_roundtrip(tup, c.adj, k) <= 1e-8);
    CHECK_FALSE(res.rows.empty());
  }
}

TEST_CASE("first-order residual detects a perturbed tuple") {
  const auto k = kn::exponential_kernel(1.0);
  auto c = make(problems::preset("lq"), k, 48, 30);
  auto tup = bsvie::bsee_to_bsvie_first(c.adj, k);
  const double clean = bsvie::bsvie_residual_first(tup, *c.c, c.u, c.x, k, c.ens).line2;
  for (double& v : tup.pV2.v) v *= 1.01;
  const double bad = bsvie::bsvie_residual_first(tup, *c.c, c.u, c.x, k, c.ens).line2;
  CHECK(bad > 10.0 * clean);
  CHECK(bad > 1e-6);
}

TEST_CASE("first-order bridge on the Gaussian path") {
  const auto k = kn::exponential_kernel(1.0);
  auto c = make(problems::preset("statefree"), k, 32, 200);
  REQUIRE(c.adj.path == bsee::SolvePath::gaussian);
  const auto tup = bsvie::bsee_to_bsvie_first(c.adj, k);
  const auto res = bsvie::bsvie_residual_first(tup, *c.c, c.u, c.x, k, c.ens);
  CHECK(res.line1 <= 1e-8);
  CHECK(res.line2 <= 1e-8);
  CHECK(res.m_constraint <= 1e-8);
  CHECK(bsvie::first_roundtrip(tup, c.adj, k) <= 1e-8);
  // b_x = sigma_x = 0 on this path, so the second martingale integrand vanishes.
  CHECK(max_abs(tup.qV2) == 0.0);
}

TEST_CASE("bridge preconditions") {
  const auto frac = frac_lift();
  auto c = make(problems::preset("lq"), frac);
  CHECK_THROWS_AS(bsvie::bsee_to_bsvie_first(c.adj, frac), std::invalid_argument);
  bsvie::BridgeOptions allow;
  allow.allow_singular = true;
  CHECK_NOTHROW(bsvie::bsee_to_bsvie_first(c.adj, frac, allow));

  const auto k = kn::exponential_kernel(1.0);
  auto e = make(problems::preset("lq"), k, 32, 20, true);
  CHECK_THROWS_AS(bsvie::bsee_to_bsvie_first(e.adj, kn::exponential_kernel(2.0)), std::invalid_argument);
  bsvie::BridgeOptions coarse;
  coarse.r_subgrid = 3;
  CHECK_THROWS_AS(bsvie::bsee_to_bsvie_second(e.adj, k, coarse), std::invalid_argument);

  auto no_second = make(problems::preset("lq"), k);
  CHECK_THROWS_AS(bsvie::bsee_to_bsvie_second(no_second.adj, k), std::invalid_argument);

  bsee::AdjointOptions lsmc;
  lsmc.allow_lsmc = true;
  auto r = make(problems::preset("rates"), k, 32, 200, false, lsmc);
  REQUIRE(r.adj.path == bsee::SolvePath::lsmc);
  CHECK_THROWS_AS(bsvie::bsee_to_bsvie_first(r.adj, k), std::invalid_argument);
}

TEST_CASE("second-order bridge with the constant kernel and quadratic h") {
  auto spec = zero_spec();
  spec.params.h2 = 1.6;
  const auto k = kn::delta0_kernel();
  auto c = make(spec, k, 32, 5, true);
  const auto tup = bsvie::bsee_to_bsvie_second(c.adj, k);
  for (std::size_t m = 0; m <= 32; ++m) CHECK(tup.PV1[m] == doctest::Approx(-1.6));
  const auto res = bsvie::bsvie_residual_second(tup, *c.c, c.u, c.x, k);
  CHECK(std::max({res.eq1, res.eq2, res.eq3, res.eq4}) <= 1e-8);
  CHECK(bsvie::second_roundtrip(tup, c.adj, k) <= 1e-8);
}

TEST_CASE("second-order round trip with state-dependent coefficients") {
  const auto k = kn::exponential_kernel(1.5);
  auto c = make(problems::preset("det_sigma"), k, 64, 1, true);
  bsvie::BridgeOptions o;
  o.r_subgrid = 6;
  const auto tup = bsvie::bsee_to_bsvie_second(c.adj, k, o);
  CHECK(tup.r_points.size() == 6);
  const auto res = bsvie::bsvie_residual_second(tup, *c.c, c.u, c.x, k);
  CHECK(std::max({res.eq1, res.eq2, res.eq3, res.eq4}) <= 1e-8);
  CHECK(res.m_constraint == 0.0);
  CHECK(bsvie::second_roundtrip(tup, c.adj, k) <= 1e-8);

  auto bad = tup;
  for (double& v : bad.calP) v *= 1.01;
  CHECK(bsvie::second_roundtrip(bad, c.adj, k) > 1e-6);
}
