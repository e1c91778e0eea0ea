#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "volterra/kernels.hpp"
#include "volterra/problems.hpp"
#include "volterra/variation.hpp"

using namespace volterra;
namespace kn = volterra::kernels;

namespace {

kn::DiscreteLaplaceKernel frac_lift(std::size_t nodes = 20) {
  return kn::build_fractional_lift(0.8, 0.9, kn::gamma_interval(0.8, 0.9, 1.0 / 3).midpoint(), 1e-3, 1e5, nodes,
                                   1.0 / 3);
}

struct Run {
  std::unique_ptr<PolyCoefficients> c;
  TimeGrid g;
  BrownianEnsemble ens;
  std::vector<double> xi;
  ControlPath u;
};

Run make(const problems::ProblemSpec& spec, std::size_t steps, std::size_t paths) {
  const TimeGrid g(1.0, steps);
  return {problems::build(spec), g, BrownianEnsemble(g, paths, 17),
          constant_forcing(g, std::vector<double>{spec.x0}), ControlPath::constant(steps, spec.u_hat)};
}

double max_abs(const StateEnsemble& e) {
  double m = 0.0;
  for (double v : e.x) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

TEST_CASE("spike application") {
  const TimeGrid g(1.0, 64);
  const auto u = ControlPath::constant(64, 0.0);
  CHECK(apply_spike(u, {0.25, 0.125, u}, g).values == u.values);
  const auto v = ControlPath::constant(64, 1.0);
  CHECK(apply_spike(u, {0.0, 1.0, v}, g).values == v.values);

  const auto w = snap_spike(0.25, g.dt(), g);
  CHECK(w.m0 == 16);
  CHECK(w.k == 1);
  const auto one = apply_spike(u, {0.25, g.dt(), v}, g);
  std::size_t changed = 0;
  for (std::size_t m = 0; m < 64; ++m) changed += one.values[m] != 0.0;
  CHECK(changed == 1);
  CHECK(one.values[16] == 1.0);
  CHECK_THROWS_AS(snap_spike(0.25, 0.1 * g.dt(), g), std::invalid_argument);
}

TEST_CASE("no variation when v equals u-hat") {
  auto spec = problems::preset("deltaj");
  auto r = make(spec, 64, 40);
  const auto b = simulate_bundle(*r.c, r.u, {0.25, 0.125, r.u}, frac_lift(), r.xi, r.ens);
  CHECK(max_abs(b.x1) == 0.0);
  CHECK(max_abs(b.x2) == 0.0);
  CHECK(b.x_v.x == b.x_hat.x);
  const auto j = compute_J12(*r.c, b, r.g);
  CHECK(j.mean == 0.0);
}

TEST_CASE("linear control-affine problem has no second variation") {
  auto spec = problems::preset("lq");
  auto r = make(spec, 64, 40);
  const auto v = ControlPath::constant(64, spec.v);
  const auto b = simulate_bundle(*r.c, r.u, {0.25, 0.125, v}, frac_lift(), r.xi, r.ens);
  CHECK(max_abs(b.x1) > 0.0);
  CHECK(max_abs(b.x2) == 0.0);
  // The state is linear, so the first variation is the exact state difference.
  CHECK(max_abs(b.dx1) <= 1e-12);
}

TEST_CASE("zero cost gives zero J12") {
  auto spec = problems::preset("deltaj");
  spec.params.phi = spec.params.q = spec.params.r = spec.params.ch = spec.params.h2 = 0.0;
  auto r = make(spec, 64, 40);
  const auto b = simulate_bundle(*r.c, r.u, {0.25, 0.125, ControlPath::constant(64, 1.0)}, frac_lift(), r.xi, r.ens);
  CHECK(compute_J12(*r.c, b, r.g).mean == 0.0);
}

TEST_CASE("J12 for linear h on state-free dynamics is the mean drift convolution") {
  auto spec = problems::preset("statefree");
  spec.params.r = 0.0;
  spec.params.h2 = 0.0;
  auto r = make(spec, 64, 20000);
  const auto k = frac_lift();
  const auto v = ControlPath::constant(64, spec.v);
  const auto b = simulate_bundle(*r.c, r.u, {0.25, 0.125, v}, k, r.xi, r.ens);
  const auto j = compute_J12(*r.c, b, r.g);
  // E[ch X1_N] = ch sum_{spike} K_b(T - t_j) b1 (v - u) dt; the diffusion part has mean zero.
  double expected = 0.0;
  for (std::size_t m = b.window.m0; m < b.window.m0 + b.window.k; ++m) {
    double kb = 0.0;
    kn::kernel_eval(k, kn::Which::b, r.g.T - r.g.t(m), {&kb, 1});
    expected += spec.params.ch * kb * spec.params.b1 * (spec.v - spec.u_hat) * r.g.dt();
  }
  CHECK(std::abs(j.mean - expected) <= 3.0 * j.se);
  CHECK(j.se < 0.1 * std::abs(expected));
}

TEST_CASE("variational recursion is the same under both convolvers") {
  auto spec = problems::preset("deltaj");
  auto r = make(spec, 96, 8);
  const auto k = frac_lift(15);
  const auto x = simulate_sve(*r.c, r.u, k, r.xi, r.ens);
  const auto v = ControlPath::constant(96, 1.0);
  const auto w = snap_spike(0.25, 0.25, r.g);
  const auto lags = LagTable::from(k, r.g);
  std::vector<double> dw(96), a1(97), b1(97), a2(97), b2(97);
  for (std::size_t p = 0; p < 8; ++p) {
    r.ens.increments(p, dw);
    LiftConvolver lc(k, r.g.dt());
    DirectConvolver dc(lags);
    variational_path(*r.c, r.u, v, w, r.g, dw, p, x.path(p), {}, 1, lc, a1);
    variational_path(*r.c, r.u, v, w, r.g, dw, p, x.path(p), {}, 1, dc, b1);
    variational_path(*r.c, r.u, v, w, r.g, dw, p, x.path(p), a1, 2, lc, a2);
    variational_path(*r.c, r.u, v, w, r.g, dw, p, x.path(p), a1, 2, dc, b2);
    for (std::size_t m = 0; m <= 96; ++m) {
      CHECK(a1[m] == doctest::Approx(b1[m]).epsilon(1e-10));
      CHECK(a2[m] == doctest::Approx(b2[m]).epsilon(1e-10));
    }
  }
}

TEST_CASE("remainder rates: exact zero and input validation") {
  auto spec = problems::preset("rates");
  auto r = make(spec, 128, 64);
  const std::vector<double> eps{0.25, 0.125, 0.0625, 0.03125};
  const auto z = remainder_rates(*r.c, frac_lift(), r.u, r.u, r.xi, 0.25, eps, 2.0, r.ens);
  CHECK(z.exact_zero);
  for (const auto& [q, v] : z.norms)
    for (double x : v) CHECK(x == 0.0);

  const auto v = ControlPath::constant(128, 1.0);
  CHECK_THROWS_AS(remainder_rates(*r.c, frac_lift(), r.u, v, r.xi, 0.25, {0.25, 0.125, 0.0625}, 2.0, r.ens),
                  std::invalid_argument);
  CHECK_THROWS_AS(remainder_rates(*r.c, frac_lift(), r.u, v, r.xi, 0.25, {0.25, 0.125, 0.1, 0.05}, 2.0, r.ens),
                  std::invalid_argument);
  CHECK_THROWS_AS(remainder_rates(*r.c, frac_lift(), r.u, v, r.xi, 0.25, {0.05, 0.025, 0.0125, 0.00625}, 2.0, r.ens),
                  std::invalid_argument);
}

TEST_CASE("remainder norms shrink with eps and fits are finite") {
  auto spec = problems::preset("rates");
  auto r = make(spec, 256, 500);
  const auto v = ControlPath::constant(256, spec.v);
  const std::vector<double> eps{0.25, 0.125, 0.0625, 0.03125};
  const auto res = remainder_rates(*r.c, frac_lift(), r.u, v, r.xi, 0.25, eps, 2.0, r.ens);
  for (const char* q : {"X1", "dX1"}) {
    const auto& n = res.norms.at(q);
    for (std::size_t e = 1; e < n.size(); ++e) CHECK(n[e] < n[e - 1]);
    CHECK(res.fit_eps.at(q).slope > 0.0);
  }
  // Second-order remainder is smaller than the first-order one at every eps.
  for (std::size_t e = 0; e < eps.size(); ++e) CHECK(res.norms.at("dX1")[e] < res.norms.at("X1")[e]);
}
