#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "volterra/coefficients.hpp"
#include "volterra/kernels.hpp"
#include "volterra/problems.hpp"
#include "volterra/simulate.hpp"

using namespace volterra;
namespace kn = volterra::kernels;

namespace {

PolyCoefficients poly(PolyParams p) { return PolyCoefficients(p, ControlDomain::grid({0.0, 1.0}), "test"); }

kn::DiscreteLaplaceKernel frac_lift(std::size_t nodes = 20) {
  return kn::build_fractional_lift(0.8, 0.9, kn::gamma_interval(0.8, 0.9, 1.0 / 3).midpoint(), 1e-3, 1e5, nodes,
                                   1.0 / 3);
}

StateEnsemble ones(const TimeGrid& g) {
  StateEnsemble e(1, g.n_steps, 1);
  std::fill(e.x.begin(), e.x.end(), 1.0);
  return e;
}

}  // namespace

TEST_CASE("Brownian increments are reproducible and correctly scaled") {
  const TimeGrid g(2.0, 64);
  const BrownianEnsemble a(g, 4000, 5), b(g, 4000, 5);
  std::vector<double> x(64), y(64);
  for (std::size_t p : {0ul, 17ul, 3999ul}) {
    a.increments(p, x);
    b.increments(p, y);
    CHECK(x == y);
    CHECK(a.increment(p, 10) == x[10]);
  }
  // Var(W_T) = T over paths.
  double sq = 0.0, sq4 = 0.0;
  for (std::size_t p = 0; p < a.n_paths(); ++p) {
    a.increments(p, x);
    double w = 0.0;
    for (double d : x) w += d;
    sq += w * w;
    sq4 += w * w * w * w;
  }
  const double P = static_cast<double>(a.n_paths());
  const double var = sq / P, se = std::sqrt((sq4 / P - var * var) / P);
  CHECK(std::abs(var - g.T) <= 4.0 * se);
  CHECK(brownian_sanity(a).passed);
}

TEST_CASE("distinct paths give uncorrelated increment sequences") {
  const TimeGrid g(1.0, 4096);
  const BrownianEnsemble e(g, 2, 9);
  std::vector<double> x(g.n_steps), y(g.n_steps);
  e.increments(0, x);
  e.increments(1, y);
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t j = 0; j < g.n_steps; ++j) {
    xy += x[j] * y[j];
    xx += x[j] * x[j];
    yy += y[j] * y[j];
  }
  CHECK(std::abs(xy / std::sqrt(xx * yy)) <= 5.0 / std::sqrt(static_cast<double>(g.n_steps)));
}

TEST_CASE("Volterra convolution of constants") {
  const TimeGrid g(1.0, 32);
  const auto c = volterra_convolve(kn::delta0_kernel(), kn::Which::b, ones(g), ConvolveMode::lebesgue, nullptr, g);
  for (std::size_t m = 0; m <= g.n_steps; ++m) CHECK(c.at(0, m)[0] == doctest::Approx(g.t(m)).epsilon(1e-14));

  StateEnsemble zero(1, g.n_steps, 1);
  const auto z = volterra_convolve(frac_lift(), kn::Which::b, zero, ConvolveMode::lebesgue, nullptr, g);
  for (double v : z.x) CHECK(v == 0.0);
}

TEST_CASE("fractional convolution of 1 converges to t^beta / Gamma(beta+1)") {
  // Left-point sums of a singular kernel converge like dt^beta.
  const double beta = 0.5, target = 1.0 / std::tgamma(1.5);
  kn::AnalyticPair k{kn::fractional(beta), kn::fractional(beta)};
  std::vector<double> err;
  for (std::size_t N : {256ul, 1024ul, 4096ul}) {
    const TimeGrid g(1.0, N);
    const auto c = volterra_convolve(k, kn::Which::b, ones(g), ConvolveMode::lebesgue, nullptr, g);
    err.push_back(std::abs(c.at(0, N)[0] - target));
  }
  CHECK(err[2] < 2e-2);
  CHECK(err[1] / err[0] == doctest::Approx(0.5).epsilon(0.1));
  CHECK(err[2] / err[1] == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("zero coefficients leave the forcing unchanged") {
  const auto c = poly({});
  const TimeGrid g(1.0, 16);
  const BrownianEnsemble ens(g, 8, 1);
  const auto xi = constant_forcing(g, std::vector<double>{0.7});
  const auto [lift, x] = simulate_lift(c, ControlPath::constant(16, 0.0), frac_lift(), xi, ens);
  for (double v : x.x) CHECK(v == 0.7);
  for (double v : lift.y) CHECK(v == 0.0);
}

TEST_CASE("constant kernel with linear drift solves the scalar ODE") {
  PolyParams p;
  p.a = 1.0;
  const auto c = poly(p);
  const TimeGrid g(1.0, 8192);
  const BrownianEnsemble ens(g, 1, 1);
  const auto x = simulate_sve(c, ControlPath::constant(g.n_steps, 0.0), kn::delta0_kernel(),
                              constant_forcing(g, std::vector<double>{1.0}), ens);
  CHECK(x.at(0, g.n_steps)[0] == doctest::Approx(std::exp(1.0)).epsilon(1e-3));
}

TEST_CASE("fractional kernel with unit drift") {
  PolyParams p;
  p.b0 = 1.0;
  const auto c = poly(p);
  const TimeGrid g(1.0, 4096);
  const BrownianEnsemble ens(g, 1, 1);
  kn::AnalyticPair k{kn::fractional(0.8), kn::fractional(0.9)};
  const auto x = simulate_sve(c, ControlPath::constant(g.n_steps, 0.0), k, constant_forcing(g, std::vector<double>{0.0}), ens);
  CHECK(x.at(0, g.n_steps)[0] == doctest::Approx(1.0 / std::tgamma(1.8)).epsilon(1e-2));
}

TEST_CASE("constant-kernel lift is the Euler-Maruyama scheme") {
  const auto c = problems::build(problems::preset("rates"));
  const TimeGrid g(1.0, 128);
  const BrownianEnsemble ens(g, 50, 3);
  const auto u = ControlPath::constant(g.n_steps, 1.0);
  const std::vector<double> x0{1.0};
  const auto lift = simulate_sve(*c, u, kn::delta0_kernel(), constant_forcing(g, x0), ens);
  const auto em = simulate_euler_maruyama(*c, u, x0, ens);
  for (std::size_t i = 0; i < lift.x.size(); ++i) CHECK(lift.x[i] == doctest::Approx(em.x[i]).epsilon(1e-12));
}

TEST_CASE("lift and direct recursions agree; parallel equals serial bitwise") {
  const auto c = problems::build(problems::preset("deltaj"));
  const TimeGrid g(1.0, 200);
  const BrownianEnsemble ens(g, 130, 21);
  const auto k = frac_lift(25);
  const auto u = ControlPath::constant(g.n_steps, 0.0);
  const auto xi = constant_forcing(g, std::vector<double>{1.0});
  const auto par = simulate_sve(*c, u, k, xi, ens);
  SimOptions serial;
  serial.parallel = false;
  const auto ser = simulate_sve(*c, u, k, xi, ens, serial);
  CHECK(par.x == ser.x);
  const auto ref = simulate_sve_reference(*c, u, k, xi, ens);
  double dev = 0.0;
  for (std::size_t i = 0; i < ref.x.size(); ++i) dev = std::max(dev, std::abs(ref.x[i] - par.x[i]));
  CHECK(dev <= 1e-10);
}

TEST_CASE("lift value is the weighted sum of the factors") {
  const auto c = problems::build(problems::preset("rates"));
  const TimeGrid g(1.0, 64);
  const BrownianEnsemble ens(g, 4, 2);
  const auto k = frac_lift(10);
  const auto xi = constant_forcing(g, std::vector<double>{1.0});
  const auto [lift, x] = simulate_lift(*c, ControlPath::constant(64, 0.0), k, xi, ens);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t m = 0; m <= 64; ++m) {
      double s = xi[m];
      for (std::size_t i = 0; i < k.size(); ++i) s += k.weights[i] * lift.at(p, m)[i];
      CHECK(x.at(p, m)[0] == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("C^p norms") {
  StateEnsemble z(1, 10, 5);
  CHECK(cnorm(z, 2.0) == 0.0);
  std::fill(z.x.begin(), z.x.end(), -1.5);
  CHECK(cnorm(z, 2.0) == doctest::Approx(1.5));

  // sigma = 1 with the constant kernel gives X = W.
  PolyParams p;
  p.s0 = 1.0;
  const auto c = poly(p);
  const TimeGrid g(1.0, 64);
  const BrownianEnsemble ens(g, 20000, 8);
  const auto x = simulate_sve(c, ControlPath::constant(64, 0.0), kn::delta0_kernel(),
                              constant_forcing(g, std::vector<double>{0.0}), ens);
  // E W_T^2 = 1 with standard error sqrt(2/M); the norm is its square root.
  CHECK(std::abs(cnorm(x, 2.0) - 1.0) <= 3.0 * 0.5 * std::sqrt(2.0 / 20000.0));
}

TEST_CASE("non-finite states are reported") {
  PolyParams p;
  p.c = 40.0;
  const auto c = poly(p);
  const TimeGrid g(1.0, 16);
  const BrownianEnsemble ens(g, 1, 1);
  CHECK_THROWS_AS(simulate_sve(c, ControlPath::constant(16, 0.0), kn::delta0_kernel(),
                               constant_forcing(g, std::vector<double>{10.0}), ens),
                  std::runtime_error);
}
