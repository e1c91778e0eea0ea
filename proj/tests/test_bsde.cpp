#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "volterra/bsde.hpp"

using namespace volterra;
using namespace volterra::bsde;

namespace {

double brownian(const BrownianEnsemble& ens, std::size_t p, std::size_t m) {
  double w = 0.0;
  for (std::size_t j = 0; j < m; ++j) w += ens.increment(p, j);
  return w;
}

double max_rel(const BSDESolution& a, const BSDESolution& b) {
  double d = 0.0, s = 0.0;
  for (std::size_t i = 0; i < a.p.size(); ++i) {
    d = std::max(d, std::abs(a.p[i] - b.p[i]));
    s = std::max(s, std::abs(b.p[i]));
  }
  return d / s;
}

}  // namespace

TEST_CASE("constant terminal decays exponentially") {
  const TimeGrid g(1.0, 50);
  const BrownianEnsemble ens(g, 3, 1);
  BSDEInstance inst;
  inst.kappa = 2.0;
  inst.terminal = Terminal::constant(1.5);
  const auto sol = solve_bsde_closedform(inst, ens);
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t m = 0; m <= 50; ++m) {
      CHECK(sol.P(p, m) == doctest::Approx(1.5 * std::exp(-2.0 * (1.0 - g.t(m)))).epsilon(1e-14));
      if (m < 50) CHECK(sol.Qv(p, m) == 0.0);
    }
}

TEST_CASE("terminal W_T gives the discounted Brownian motion") {
  const TimeGrid g(1.0, 40);
  const BrownianEnsemble ens(g, 5, 2);
  BSDEInstance inst;
  inst.kappa = 0.7;
  inst.terminal = Terminal::linear_w(1.0);
  const auto sol = solve_bsde_closedform(inst, ens);
  for (std::size_t p = 0; p < 5; ++p)
    for (std::size_t m = 0; m < 40; ++m) {
      const double disc = std::exp(-0.7 * (1.0 - g.t(m)));
      CHECK(sol.P(p, m) == doctest::Approx(disc * brownian(ens, p, m)).epsilon(1e-12).scale(1.0));
      CHECK(sol.Qv(p, m) == doctest::Approx(disc).epsilon(1e-14));
    }
}

TEST_CASE("unit generator integrates the discount exactly") {
  const TimeGrid g(2.0, 64);
  const BrownianEnsemble ens(g, 2, 3);
  BSDEInstance inst;
  inst.kappa = 3.0;
  inst.terminal = Terminal::constant(0.0);
  inst.generator.assign(64, 1.0);
  const auto sol = solve_bsde_closedform(inst, ens);
  for (std::size_t m = 0; m <= 64; ++m)
    CHECK(sol.P(0, m) == doctest::Approx((1.0 - std::exp(-3.0 * (2.0 - g.t(m)))) / 3.0).epsilon(1e-13).scale(1.0));
  CHECK(quad_weight(3.0, g.dt(), Quadrature::exponential) ==
        doctest::Approx((1.0 - std::exp(-3.0 * g.dt())) / 3.0));
  CHECK(quad_weight(3.0, g.dt(), Quadrature::left_point) == g.dt());
}

TEST_CASE("closed forms satisfy the discrete martingale identity") {
  const TimeGrid g(1.0, 64);
  const BrownianEnsemble ens(g, 300, 4);
  std::vector<double> integrand(64), gen(64);
  for (std::size_t j = 0; j < 64; ++j) {
    integrand[j] = 1.0 + g.t(j);
    gen[j] = std::sin(3.0 * g.t(j));
  }
  BSDEInstance inst;
  inst.kappa = 1.3;
  inst.terminal = Terminal::gaussian(0.8, integrand, -0.2);
  inst.generator = gen;
  for (auto q : {Quadrature::exponential, Quadrature::left_point}) {
    const auto sol = solve_bsde_closedform(inst, ens, q);
    const auto rep = martingale_residual(inst, sol, ens, q);
    CHECK(rep.max_abs <= 1e-10);
    CHECK(rep.passed);
  }
}

TEST_CASE("LSMC reproduces affine and deterministic solutions") {
  const TimeGrid g(1.0, 64);
  const BrownianEnsemble ens(g, 4000, 5);
  const std::vector<Regressor> regs{brownian_regressor(ens)};

  BSDEInstance lin;
  lin.kappa = 0.5;
  lin.terminal = Terminal::linear_w(0.7, 0.2);
  CHECK(max_rel(solve_bsde_lsmc(lin, ens, regs), solve_bsde_closedform(lin, ens, Quadrature::left_point)) <= 1e-3);

  BSDEInstance det;
  det.kappa = 1.0;
  det.terminal = Terminal::constant(2.0);
  det.generator.assign(64, 0.5);
  CHECK(max_rel(solve_bsde_lsmc(det, ens, regs), solve_bsde_closedform(det, ens, Quadrature::left_point)) <= 1e-12);

  BSDEInstance zero;
  zero.kappa = 1.0;
  const auto z = solve_bsde_lsmc(zero, ens, regs);
  CHECK(std::all_of(z.p.begin(), z.p.end(), [](double v) { return v == 0.0; }));
  CHECK(std::all_of(z.q.begin(), z.q.end(), [](double v) { return v == 0.0; }));

  LsmcOptions bad;
  bad.degree = 0;
  CHECK_THROWS_AS(solve_bsde_lsmc(lin, ens, regs, bad), std::invalid_argument);
}

TEST_CASE("regression-now LSMC error shrinks with the path count") {
  // Regressing the step targets on the time-t basis carries Monte Carlo error.
  const TimeGrid g(1.0, 32);
  BSDEInstance inst;
  inst.kappa = 0.5;
  inst.terminal = Terminal::linear_w(1.0);
  LsmcOptions o;
  o.regression_later = false;
  double e_small = 0.0, e_large = 0.0;
  for (std::uint64_t s = 0; s < 8; ++s) {
    for (std::size_t M : {1000ul, 4000ul}) {
      const BrownianEnsemble ens(g, M, 100 + s);
      const auto l = solve_bsde_lsmc(inst, ens, {brownian_regressor(ens)}, o);
      const auto c = solve_bsde_closedform(inst, ens, Quadrature::left_point);
      const double e = std::abs(l.P(0, 0) - c.P(0, 0));
      (M == 1000 ? e_small : e_large) += e * e;
    }
  }
  // RMS error ratio near 1/2; allow Monte Carlo slack.
  CHECK(std::sqrt(e_large / e_small) < 0.8);
}

TEST_CASE("a-priori ratio") {
  const TimeGrid g(1.0, 256);
  const BrownianEnsemble ens(g, 500, 6);
  BSDEInstance zero;
  zero.kappa = 5.0;
  const auto r0 = apriori_ratio(zero, solve_bsde_closedform(zero, ens), ens);
  CHECK(r0.trivially_satisfied);
  CHECK(r0.ratio == 0.0);

  BSDEInstance inst;
  inst.kappa = 4.0;
  inst.alpha = 1.0 / 3.0;
  inst.terminal = Terminal::linear_w(1.0, 0.3);
  inst.generator.assign(256, 0.7);
  const double base = apriori_ratio(inst, solve_bsde_closedform(inst, ens), ens).ratio;
  BSDEInstance scaled = inst;
  scaled.terminal = Terminal::linear_w(2.5, 0.75);
  scaled.generator.assign(256, 1.75);
  CHECK(apriori_ratio(scaled, solve_bsde_closedform(scaled, ens), ens).ratio == doctest::Approx(base).epsilon(1e-12));

  for (int which = 0; which < 2; ++which) {
    double lo = INFINITY, hi = 0.0;
    for (double kappa : {1.0, 10.0, 100.0, 1000.0}) {
      BSDEInstance i;
      i.kappa = kappa;
      if (which == 0) {
        i.terminal = Terminal::linear_w(1.0);
      } else {
        i.alpha = 1.0 / 3.0;
        i.generator.assign(256, 1.0);
      }
      const double r = apriori_ratio(i, solve_bsde_closedform(i, ens), ens).ratio;
      REQUIRE(std::isfinite(r));
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
    CHECK(hi / lo < 3.0);
  }
  BSDEInstance bad = inst;
  bad.kappa = 0.0;
  CHECK_THROWS_AS(apriori_ratio(bad, solve_bsde_closedform(inst, ens), ens), std::invalid_argument);
}
