#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "volterra/kernels.hpp"

using namespace volterra::kernels;

namespace {

double eval1(const DiscreteLaplaceKernel& k, Which w, double t) {
  double out = 0.0;
  k.eval(w, t, {&out, 1});
  return out;
}

DiscreteLaplaceKernel frac_lift(double beta, std::size_t nodes, double alpha) {
  return build_fractional_lift(beta, beta, gamma_interval(beta, beta, alpha).midpoint(), 1e-3, 1e5, nodes, alpha);
}

std::vector<double> unit_times() {
  std::vector<double> ts;
  for (int i = 0; i < 100; ++i) ts.push_back(0.01 + 0.99 * i / 99.0);
  return ts;
}

}  // namespace

TEST_CASE("delta0 kernel is the constant kernel") {
  const auto k = delta0_kernel();
  for (double t : {0.0, 0.3, 1.0, 7.5}) {
    CHECK(eval1(k, Which::b, t) == 1.0);
    CHECK(eval1(k, Which::sigma, t) == 1.0);
  }
  const auto k2 = delta0_kernel(2, 2.0);
  std::vector<double> m(4);
  k2.eval(Which::b, 0.4, m);
  CHECK(m == std::vector<double>{2.0, 0.0, 0.0, 2.0});
}

TEST_CASE("two-node kernel is the two-term exponential sum") {
  DiscreteLaplaceKernel k;
  k.nodes = {0.5, 3.0};
  k.weights = {0.7, 0.7};
  k.mb = {1.0, 1.0};
  k.msigma = {1.0, 1.0};
  k.validate();
  for (double t : {0.0, 0.1, 0.9}) CHECK(eval1(k, Which::b, t) == doctest::Approx(0.7 * (std::exp(-0.5 * t) + std::exp(-3.0 * t))).epsilon(1e-15));
}

TEST_CASE("fractional lift approaches the analytic kernel") {
  // beta = 0.7 on both kernels needs alpha > 0.6 for a feasible gamma.
  const auto k = frac_lift(0.7, 200, 0.75);
  const double target = std::pow(0.5, -0.3) / std::tgamma(0.7);
  CHECK(eval1(k, Which::b, 0.5) == doctest::Approx(target).epsilon(1e-3));
}

TEST_CASE("analytic kernel degenerations") {
  CHECK(constant().scalar(0.3) == 1.0);
  for (double t : {0.01, 0.5, 2.0}) CHECK(fractional(1.0).scalar(t) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(exponential(2.0).scalar(0.5) == doctest::Approx(std::exp(-1.0)));
}

TEST_CASE("windowed kernel norms") {
  for (double e : {1.0, 0.25, 1e-3}) {
    CHECK(knorm_eps(constant(), 1.0, e) == doctest::Approx(e).epsilon(1e-14));
    const double closed = std::pow(e, 0.25) / (std::sqrt(0.5) * std::tgamma(0.75));
    CHECK(knorm_eps(fractional(0.75), 2.0, e) == doctest::Approx(closed).epsilon(1e-12));
    CHECK(knorm_eps_numeric(fractional(0.75), 2.0, e) == doctest::Approx(closed).epsilon(1e-8));
  }
  CHECK(fractional_in_lq(0.75, 2.0));
  CHECK_FALSE(fractional_in_lq(0.5, 2.0));
  CHECK_THROWS_AS(knorm_eps(fractional(0.5), 2.0, 0.1), std::invalid_argument);
}

TEST_CASE("Hoelder comparison of windowed norms") {
  for (double beta : {0.6, 0.75, 0.9})
    for (double q : {1.5, 2.0, 3.0}) {
      if (!fractional_in_lq(beta, q)) continue;
      for (double e : {0.5, 0.1, 0.01}) {
        const auto k = fractional(beta);
        CHECK(knorm_eps(k, 1.0, e) <= knorm_eps(k, q, e) * std::pow(e, 1.0 - 1.0 / q) * (1 + 1e-12));
      }
    }
}

TEST_CASE("quadrature error") {
  const auto ts = unit_times();
  CHECK(quadrature_error(delta0_kernel(), ts).sup_abs == 0.0);
  CHECK(quadrature_error(exponential_kernel(1.7), ts).sup_abs <= 1e-15);
  const double e100 = quadrature_error(frac_lift(0.7, 100, 0.75), ts).sup_rel;
  const double e200 = quadrature_error(frac_lift(0.7, 200, 0.75), ts).sup_rel;
  CHECK(e100 <= 1e-2);
  CHECK(e200 < e100);
}

TEST_CASE("discrete kernel evaluation matches the free function") {
  const auto k = build_fractional_lift(0.8, 0.9, gamma_interval(0.8, 0.9, 1.0 / 3).midpoint(), 1e-3, 1e5, 30, 1.0 / 3);
  for (double t : {0.05, 0.5}) {
    double a = 0.0, b = 0.0;
    kernel_eval(k, Which::sigma, t, {&a, 1});
    k.eval(Which::sigma, t, {&b, 1});
    CHECK(a == b);
  }
  // The analytic reference is recorded for the quadrature check.
  REQUIRE(k.analytic_ref.has_value());
  CHECK(k.analytic_ref->beta_sigma == 0.9);
}

TEST_CASE("lift construction rejects bad inputs") {
  CHECK_THROWS_AS(build_fractional_lift(0.8, 0.9, 0.45, 1e-3, 1e5, 20, 1.0 / 3), std::invalid_argument);
  CHECK_THROWS_AS(build_fractional_lift(0.8, 0.4, 0.55, 1e-3, 1e5, 20, 1.0 / 3), std::invalid_argument);
  CHECK_THROWS_AS(build_fractional_lift(0.8, 0.9, 0.55, 1e5, 1e-3, 20, 1.0 / 3), std::invalid_argument);
  CHECK_FALSE(gamma_interval(0.7, 0.7, 1.0 / 3).feasible());
  CHECK(gamma_interval(0.8, 0.9, 1.0 / 3).feasible());

  DiscreteLaplaceKernel k = delta0_kernel();
  k.weights = {-1.0};
  CHECK_THROWS_AS(k.validate(), std::invalid_argument);
  k = delta0_kernel();
  k.mb.push_back(0.0);
  CHECK_THROWS_AS(k.validate(), std::invalid_argument);
}

TEST_CASE("validator report on a single exponential node") {
  const auto rep = validate_report(exponential_kernel(4.0));
  CHECK(rep.sum_r_weights == doctest::Approx(0.5));
  CHECK(rep.mb_weighted > 0.0);
}
