#include "volterra/kernels.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "volterra/linalg.hpp"

namespace volterra::kernels {

std::string to_string(Family f) {
  switch (f) {
    case Family::fractional: return "fractional";
    case Family::constant: return "constant";
    case Family::exponential: return "exponential";
    case Family::mixture: return "mixture";
    case Family::custom: return "custom";
  }
  return "custom";
}

double AnalyticKernel::scalar(double t) const {
  switch (family) {
    case Family::fractional:
      if (t <= 0.0) throw std::domain_error("fractional kernel evaluated at t <= 0");
      return std::pow(t, beta - 1.0) / std::tgamma(beta);
    case Family::constant: return 1.0;
    case Family::exponential: return std::exp(-lambda * t);
    case Family::mixture: {
      double s = 0.0;
      for (std::size_t k = 0; k < mix_weights.size(); ++k)
        s += mix_weights[k] * std::exp(-mix_rates[k] * t);
      return s;
    }
    case Family::custom: break;
  }
  throw std::invalid_argument("analytic kernel family 'custom' has no closed form");
}

void AnalyticKernel::eval(double t, std::span<double> out) const {
  const double s = scalar(t);
  if (factor.empty()) {
    la::zero(out);
    for (std::size_t i = 0; i < n; ++i) out[i * n + i] = s;
  } else {
    for (std::size_t i = 0; i < n * n; ++i) out[i] = s * factor[i];
  }
}

AnalyticKernel fractional(double beta, std::size_t n) {
  if (!(beta > 0.0)) throw std::invalid_argument("fractional kernel needs beta > 0");
  AnalyticKernel k;
  k.family = Family::fractional;
  k.beta = beta;
  k.n = n;
  return k;
}

AnalyticKernel constant(std::size_t n) {
  AnalyticKernel k;
  k.family = Family::constant;
  k.n = n;
  return k;
}

AnalyticKernel exponential(double lambda, std::size_t n) {
  AnalyticKernel k;
  k.family = Family::exponential;
  k.lambda = lambda;
  k.n = n;
  return k;
}

void DiscreteLaplaceKernel::validate() const {
  const std::size_t m = nodes.size();
  if (m == 0) throw std::invalid_argument("kernel: empty node set");
  if (weights.size() != m) throw std::invalid_argument("kernel: weights/nodes size mismatch");
  if (mb.size() != m * n * n || msigma.size() != m * n * n)
    throw std::invalid_argument("kernel: M blocks must be n x n per node");
  for (std::size_t i = 0; i < m; ++i) {
    if (!std::isfinite(nodes[i]) || nodes[i] < 0.0)
      throw std::invalid_argument("kernel: nodes must be finite and >= 0");
    if (i > 0 && !(nodes[i] > nodes[i - 1]))
      throw std::invalid_argument("kernel: nodes must be strictly increasing");
    if (!(weights[i] > 0.0) || !std::isfinite(weights[i]))
      throw std::invalid_argument("kernel: weights must be strictly positive");
  }
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("kernel: alpha must lie in [0,1)");
}

void DiscreteLaplaceKernel::eval(Which w, double t, std::span<double> out) const {
  la::zero(out);
  for (std::size_t i = 0; i < nodes.size(); ++i)
    la::axpy(weights[i] * std::exp(-nodes[i] * t), std::span<const double>(m(w, i), n * n), out);
}

ValidatorReport validate_report(const DiscreteLaplaceKernel& k) {
  k.validate();
  ValidatorReport rep;
  const std::size_t nn = k.n * k.n;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double th = k.nodes[i];
    const double rw = r_weight(th) * k.weights[i];
    rep.sum_r_weights += rw;
    rep.mb_weighted += std::pow(1.0 + th, -k.alpha) * rw * la::sqnorm({k.m(Which::b, i), nn});
    rep.msigma_weighted +=
        std::pow(1.0 + th, 1.0 - k.alpha) * rw * la::sqnorm({k.m(Which::sigma, i), nn});
  }
  return rep;
}

GammaInterval gamma_interval(double beta_b, double beta_sigma, double alpha) {
  GammaInterval g;
  g.lo = 0.5;
  g.hi = std::min({alpha + 2.0 * beta_b - 0.5, alpha + 2.0 * beta_sigma - 1.5, 1.0});
  return g;
}

namespace {

double power_mass(double lo, double hi, double expo) {
  // int_lo^hi theta^{-expo} d theta for expo < 1
  return (std::pow(hi, 1.0 - expo) - std::pow(lo, 1.0 - expo)) / (1.0 - expo);
}

double m_scalar(double theta, double gamma, double beta) {
  return std::pow(theta, gamma - beta) / (std::tgamma(beta) * std::tgamma(1.0 - beta));
}

}  // namespace

DiscreteLaplaceKernel build_fractional_lift(double beta_b, double beta_sigma, double gamma,
                                            double theta_min, double theta_max, std::size_t n_nodes,
                                            double alpha) {
  if (!(beta_b > 0.0 && beta_b < 1.0)) throw std::invalid_argument("lift: need 0 < beta_b < 1");
  if (!(beta_sigma > 0.5 && beta_sigma < 1.0))
    throw std::invalid_argument("lift: need 1/2 < beta_sigma < 1");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("lift: need 0 <= alpha < 1");
  const GammaInterval gi = gamma_interval(beta_b, beta_sigma, alpha);
  if (!(gamma > gi.lo && gamma < gi.hi))
    throw std::invalid_argument(
        "lift: gamma must satisfy 1/2 < gamma < (alpha+2beta_b-1/2) ^ (alpha+2beta_sigma-3/2) ^ 1");
  if (!(theta_min > 0.0)) throw std::invalid_argument("lift: theta_min must be > 0");
  if (!(theta_max > theta_min)) throw std::invalid_argument("lift: theta_max must exceed theta_min");
  if (n_nodes < 2) throw std::invalid_argument("lift: n_nodes must be >= 2");

  DiscreteLaplaceKernel k;
  k.n = 1;
  k.alpha = alpha;
  k.analytic_ref = AnalyticRef{Family::fractional, beta_b, beta_sigma, 0.0};

  // Cell [0, theta_min]: node matches the K_b mass; M values are exact cell averages.
  const double w0 = std::pow(theta_min, 1.0 - gamma) / (1.0 - gamma);
  const double d = gamma - beta_b;
  const double node0 = std::abs(d) < 1e-12
                           ? theta_min * std::exp(-1.0 / (1.0 - gamma))
                           : theta_min * std::pow((1.0 - gamma) / (1.0 - beta_b), 1.0 / d);
  auto cell_avg = [&](double beta) {
    return std::pow(theta_min, 1.0 - beta) / ((1.0 - beta) * std::tgamma(beta) * std::tgamma(1.0 - beta)) / w0;
  };
  k.nodes.push_back(node0);
  k.weights.push_back(w0);
  k.mb.push_back(cell_avg(beta_b));
  k.msigma.push_back(cell_avg(beta_sigma));

  const std::size_t cells = n_nodes - 1;
  const double rho = std::pow(theta_max / theta_min, 1.0 / static_cast<double>(cells));
  double lo = theta_min;
  for (std::size_t c = 0; c < cells; ++c) {
    const double hi = c + 1 == cells ? theta_max : lo * rho;
    const double node = std::sqrt(lo * hi);
    k.nodes.push_back(node);
    k.weights.push_back(power_mass(lo, hi, gamma));
    k.mb.push_back(m_scalar(node, gamma, beta_b));
    k.msigma.push_back(m_scalar(node, gamma, beta_sigma));
    lo = hi;
  }
  k.validate();
  return k;
}

DiscreteLaplaceKernel delta0_kernel(std::size_t n, double scale) {
  DiscreteLaplaceKernel k;
  k.n = n;
  k.nodes = {0.0};
  k.weights = {1.0};
  k.mb = la::identity(n, scale);
  k.msigma = la::identity(n, scale);
  k.analytic_ref = AnalyticRef{Family::constant, 1.0, 1.0, 0.0};
  return k;
}

DiscreteLaplaceKernel exponential_kernel(double lambda, std::size_t n) {
  DiscreteLaplaceKernel k;
  k.n = n;
  k.nodes = {lambda};
  k.weights = {1.0};
  k.mb = la::identity(n);
  k.msigma = la::identity(n);
  k.analytic_ref = AnalyticRef{Family::exponential, 1.0, 1.0, lambda};
  return k;
}

void kernel_eval(const DiscreteLaplaceKernel& k, Which w, double t, std::span<double> out) {
  if (t < 0.0) throw std::domain_error("kernel_eval: t must be >= 0");
  k.eval(w, t, out);
}

void kernel_eval(const AnalyticPair& k, Which w, double t, std::span<double> out) {
  k.get(w).eval(t, out);
}

bool fractional_in_lq(double beta, double q) { return q * (beta - 1.0) + 1.0 > 0.0; }

namespace {

double factor_norm(const AnalyticKernel& k) {
  if (k.factor.empty()) return std::sqrt(static_cast<double>(k.n));
  return std::sqrt(la::sqnorm(k.factor));
}

double integrate_power(const std::function<double(double)>& f, double eps) {
  boost::math::quadrature::tanh_sinh<double> integrator;
  return integrator.integrate(f, 0.0, eps, 1e-12);
}

}  // namespace

double knorm_eps_numeric(const AnalyticKernel& k, double q, double eps) {
  if (!(q >= 1.0)) throw std::invalid_argument("knorm_eps: q must be >= 1");
  if (!(eps > 0.0)) throw std::invalid_argument("knorm_eps: eps must be > 0");
  if (k.family == Family::fractional && !fractional_in_lq(k.beta, q))
    throw std::invalid_argument("knorm_eps: fractional kernel not in L^q; need q(beta-1)+1 > 0");
  const double c = factor_norm(k);
  const double integral =
      integrate_power([&](double t) { return std::pow(std::abs(k.scalar(t)), q); }, eps);
  return c * std::pow(integral, 1.0 / q);
}

double knorm_eps(const AnalyticKernel& k, double q, double eps) {
  if (k.family != Family::fractional && k.family != Family::constant)
    return knorm_eps_numeric(k, q, eps);
  if (!(q >= 1.0)) throw std::invalid_argument("knorm_eps: q must be >= 1");
  if (!(eps > 0.0)) throw std::invalid_argument("knorm_eps: eps must be > 0");
  const double c = factor_norm(k);
  if (k.family == Family::constant) return c * std::pow(eps, 1.0 / q);
  if (!fractional_in_lq(k.beta, q))
    throw std::invalid_argument("knorm_eps: fractional kernel not in L^q; need q(beta-1)+1 > 0");
  const double e = q * (k.beta - 1.0) + 1.0;
  return c * std::pow(std::pow(eps, e) / e, 1.0 / q) / std::tgamma(k.beta);
}

double knorm_eps(const DiscreteLaplaceKernel& k, Which w, double q, double eps) {
  if (!(q >= 1.0)) throw std::invalid_argument("knorm_eps: q must be >= 1");
  if (!(eps > 0.0)) throw std::invalid_argument("knorm_eps: eps must be > 0");
  std::vector<double> buf(k.n * k.n);
  const double integral = integrate_power(
      [&](double t) {
        k.eval(w, t, buf);
        return std::pow(std::sqrt(la::sqnorm(buf)), q);
      },
      eps);
  return std::pow(integral, 1.0 / q);
}

AnalyticPair analytic_from_ref(const AnalyticRef& ref, std::size_t n) {
  switch (ref.family) {
    case Family::fractional: return {fractional(ref.beta_b, n), fractional(ref.beta_sigma, n)};
    case Family::constant: return {constant(n), constant(n)};
    case Family::exponential: return {exponential(ref.lambda, n), exponential(ref.lambda, n)};
    default: break;
  }
  throw std::invalid_argument("analytic_ref family has no closed form");
}

QuadratureReport quadrature_error(const DiscreteLaplaceKernel& k, std::span<const double> t_grid) {
  if (!k.analytic_ref) throw std::invalid_argument("quadrature_error: kernel has no analytic_ref");
  const AnalyticPair exact = analytic_from_ref(*k.analytic_ref, k.n);
  const std::size_t nn = k.n * k.n;
  std::vector<double> a(nn), e(nn);
  QuadratureReport rep;
  for (Which w : {Which::b, Which::sigma}) {
    for (double t : t_grid) {
      k.eval(w, t, a);
      exact.get(w).eval(t, e);
      double diff = 0.0, ref = 0.0;
      for (std::size_t i = 0; i < nn; ++i) {
        diff = std::max(diff, std::abs(a[i] - e[i]));
        ref = std::max(ref, std::abs(e[i]));
      }
      rep.sup_abs = std::max(rep.sup_abs, diff);
      rep.sup_rel = std::max(rep.sup_rel, ref > 0 ? diff / ref : diff);
    }
  }
  return rep;
}

}  // namespace volterra::kernels
