#include "volterra/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "volterra/linalg.hpp"

namespace volterra {

bool ControlDomain::contains(const double* u, double tol) const {
  if (is_interval) return u[0] >= lo - tol && u[0] <= hi + tol;
  for (std::size_t i = 0; i < size(); ++i) {
    bool same = true;
    for (std::size_t k = 0; k < dim; ++k) same = same && std::abs(point(i)[k] - u[k]) <= tol;
    if (same) return true;
  }
  return false;
}

ControlDomain ControlDomain::grid(std::vector<double> pts) {
  if (pts.empty()) throw std::invalid_argument("control grid must be non-empty");
  ControlDomain d;
  d.points = std::move(pts);
  return d;
}

ControlDomain ControlDomain::interval(double lo, double hi, std::size_t n_samples) {
  if (!(hi >= lo) || n_samples == 0) throw std::invalid_argument("control interval: need hi >= lo, n >= 1");
  ControlDomain d;
  d.is_interval = true;
  d.lo = lo;
  d.hi = hi;
  for (std::size_t i = 0; i < n_samples; ++i)
    d.points.push_back(n_samples == 1 ? lo : lo + (hi - lo) * double(i) / double(n_samples - 1));
  return d;
}

SelfTestReport finite_difference_self_test(const CoefficientSet& c, std::uint64_t seed,
                                           std::size_t samples, double tol) {
  const std::size_t n = c.n();
  const std::size_t d = c.control_dim();
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> ux(-1.5, 1.5), ut(0.0, 1.0);
  SelfTestReport rep;

  auto record = [&](double fd, double an, const char* what) {
    const double err = std::abs(fd - an) / std::max(1.0, std::abs(an));
    if (err > rep.max_rel_err) {
      rep.max_rel_err = err;
      rep.worst = what;
    }
  };

  std::vector<double> x(n), xp(n), xm(n), u(d), vp(n), vm(n), jac(n * n), hess(n * n * n),
      gp(n), gm(n), g(n), hm(n * n), jp(n * n), jm(n * n);
  for (std::size_t s = 0; s < samples; ++s) {
    const double t = ut(gen);
    for (auto& v : x) v = ux(gen);
    if (c.U.size() > 0) {
      const std::size_t idx = static_cast<std::size_t>(gen() % c.U.size());
      std::copy(c.U.point(idx), c.U.point(idx) + d, u.begin());
    } else {
      for (auto& v : u) v = ux(gen);
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double step = 1e-5 * std::max(1.0, std::abs(x[j]));
      xp = x;
      xm = x;
      xp[j] += step;
      xm[j] -= step;
      const double inv = 1.0 / (xp[j] - xm[j]);

      c.b(t, u.data(), xp.data(), vp.data());
      c.b(t, u.data(), xm.data(), vm.data());
      c.b_x(t, u.data(), x.data(), jac.data());
      for (std::size_t i = 0; i < n; ++i) record((vp[i] - vm[i]) * inv, jac[i * n + j], "b_x");
      c.b_x(t, u.data(), xp.data(), jp.data());
      c.b_x(t, u.data(), xm.data(), jm.data());
      c.b_xx(t, u.data(), x.data(), hess.data());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
          record((jp[i * n + k] - jm[i * n + k]) * inv, hess[(i * n + k) * n + j], "b_xx");

      c.sigma(t, u.data(), xp.data(), vp.data());
      c.sigma(t, u.data(), xm.data(), vm.data());
      c.sigma_x(t, u.data(), x.data(), jac.data());
      for (std::size_t i = 0; i < n; ++i) record((vp[i] - vm[i]) * inv, jac[i * n + j], "sigma_x");
      c.sigma_x(t, u.data(), xp.data(), jp.data());
      c.sigma_x(t, u.data(), xm.data(), jm.data());
      c.sigma_xx(t, u.data(), x.data(), hess.data());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
          record((jp[i * n + k] - jm[i * n + k]) * inv, hess[(i * n + k) * n + j], "sigma_xx");

      c.f_x(t, u.data(), x.data(), g.data());
      record((c.f(t, u.data(), xp.data()) - c.f(t, u.data(), xm.data())) * inv, g[j], "f_x");
      c.f_x(t, u.data(), xp.data(), gp.data());
      c.f_x(t, u.data(), xm.data(), gm.data());
      c.f_xx(t, u.data(), x.data(), hm.data());
      for (std::size_t k = 0; k < n; ++k) record((gp[k] - gm[k]) * inv, hm[k * n + j], "f_xx");

      c.h_x(x.data(), g.data());
      record((c.h(xp.data()) - c.h(xm.data())) * inv, g[j], "h_x");
      c.h_x(xp.data(), gp.data());
      c.h_x(xm.data(), gm.data());
      c.h_xx(x.data(), hm.data());
      for (std::size_t k = 0; k < n; ++k) record((gp[k] - gm[k]) * inv, hm[k * n + j], "h_xx");
    }
  }
  rep.passed = rep.max_rel_err <= tol;
  return rep;
}

PolyCoefficients::PolyCoefficients(PolyParams p, ControlDomain u, std::string name)
    : p_(p), name_(std::move(name)) {
  U = std::move(u);
  tags.control_affine = true;
  tags.linear_in_state = p_.c == 0.0 && p_.cs == 0.0;
  tags.state_free = tags.linear_in_state && p_.a == 0.0 && p_.e == 0.0 && p_.s1 == 0.0 && p_.es == 0.0;
  lipschitz_kappa = std::max({std::abs(p_.a) + std::abs(p_.e), std::abs(p_.s1) + std::abs(p_.es)});
}

void PolyCoefficients::b(double, const double* u, const double* x, double* out) const {
  const double v = x[0];
  out[0] = p_.b0 + p_.a * v + 0.5 * p_.c * v * v + u[0] * (p_.b1 + p_.e * v);
}
void PolyCoefficients::sigma(double, const double* u, const double* x, double* out) const {
  const double v = x[0];
  out[0] = p_.s0 + p_.s1 * v + 0.5 * p_.cs * v * v + u[0] * (p_.sb + p_.es * v);
}
double PolyCoefficients::f(double, const double* u, const double* x) const {
  return p_.phi * x[0] + 0.5 * p_.q * x[0] * x[0] + 0.5 * p_.r * u[0] * u[0];
}
double PolyCoefficients::h(const double* x) const { return p_.ch * x[0] + 0.5 * p_.h2 * x[0] * x[0]; }
void PolyCoefficients::b_x(double, const double* u, const double* x, double* out) const {
  out[0] = p_.a + p_.c * x[0] + u[0] * p_.e;
}
void PolyCoefficients::sigma_x(double, const double* u, const double* x, double* out) const {
  out[0] = p_.s1 + p_.cs * x[0] + u[0] * p_.es;
}
void PolyCoefficients::f_x(double, const double*, const double* x, double* out) const {
  out[0] = p_.phi + p_.q * x[0];
}
void PolyCoefficients::h_x(const double* x, double* out) const { out[0] = p_.ch + p_.h2 * x[0]; }
void PolyCoefficients::b_xx(double, const double*, const double*, double* out) const { out[0] = p_.c; }
void PolyCoefficients::sigma_xx(double, const double*, const double*, double* out) const {
  out[0] = p_.cs;
}
void PolyCoefficients::f_xx(double, const double*, const double*, double* out) const { out[0] = p_.q; }
void PolyCoefficients::h_xx(const double*, double* out) const { out[0] = p_.h2; }

namespace {

void require_size(const std::vector<double>& v, std::size_t want, const char* what) {
  if (v.size() != want)
    throw std::invalid_argument(std::string("linear coefficients: ") + what + " has wrong size");
}

}  // namespace

LinearCoefficients::LinearCoefficients(LinearParams p, ControlDomain u, std::string name)
    : p_(std::move(p)), name_(std::move(name)) {
  const std::size_t n = p_.n;
  auto fill = [](std::vector<double>& v, std::size_t k) {
    if (v.empty()) v.assign(k, 0.0);
  };
  fill(p_.A, n * n);
  fill(p_.B, n);
  fill(p_.S, n * n);
  fill(p_.s0, n);
  fill(p_.su, n);
  fill(p_.Q, n * n);
  fill(p_.phi, n);
  fill(p_.c, n);
  fill(p_.H, n * n);
  require_size(p_.A, n * n, "A");
  require_size(p_.B, n, "B");
  require_size(p_.S, n * n, "S");
  require_size(p_.s0, n, "s0");
  require_size(p_.su, n, "su");
  require_size(p_.Q, n * n, "Q");
  require_size(p_.phi, n, "phi");
  require_size(p_.c, n, "c");
  require_size(p_.H, n * n, "H");
  U = std::move(u);
  tags.linear_in_state = true;
  tags.control_affine = true;
  tags.state_free = la::max_abs(p_.A) == 0.0 && la::max_abs(p_.S) == 0.0;
}

void LinearCoefficients::b(double, const double* u, const double* x, double* out) const {
  const std::size_t n = p_.n;
  for (std::size_t i = 0; i < n; ++i) out[i] = p_.B[i] * u[0];
  la::gemv_acc(n, 1.0, p_.A.data(), x, out);
}
void LinearCoefficients::sigma(double, const double* u, const double* x, double* out) const {
  const std::size_t n = p_.n;
  for (std::size_t i = 0; i < n; ++i) out[i] = p_.s0[i] + p_.su[i] * u[0];
  la::gemv_acc(n, 1.0, p_.S.data(), x, out);
}
double LinearCoefficients::f(double, const double* u, const double* x) const {
  const std::size_t n = p_.n;
  return 0.5 * la::quad(n, p_.Q.data(), x, x) + la::dot({p_.phi.data(), n}, {x, n}) +
         0.5 * p_.r * u[0] * u[0];
}
double LinearCoefficients::h(const double* x) const {
  const std::size_t n = p_.n;
  return la::dot({p_.c.data(), n}, {x, n}) + 0.5 * la::quad(n, p_.H.data(), x, x);
}
void LinearCoefficients::b_x(double, const double*, const double*, double* out) const {
  std::copy(p_.A.begin(), p_.A.end(), out);
}
void LinearCoefficients::sigma_x(double, const double*, const double*, double* out) const {
  std::copy(p_.S.begin(), p_.S.end(), out);
}
void LinearCoefficients::f_x(double, const double*, const double* x, double* out) const {
  const std::size_t n = p_.n;
  std::copy(p_.phi.begin(), p_.phi.end(), out);
  // Q symmetric part: d/dx (x'Qx/2) = (Q + Q')x/2
  la::gemv_acc(n, 0.5, p_.Q.data(), x, out);
  la::gemv_t_acc(n, 0.5, p_.Q.data(), x, out);
}
void LinearCoefficients::h_x(const double* x, double* out) const {
  const std::size_t n = p_.n;
  std::copy(p_.c.begin(), p_.c.end(), out);
  la::gemv_acc(n, 0.5, p_.H.data(), x, out);
  la::gemv_t_acc(n, 0.5, p_.H.data(), x, out);
}
void LinearCoefficients::b_xx(double, const double*, const double*, double* out) const {
  std::fill(out, out + p_.n * p_.n * p_.n, 0.0);
}
void LinearCoefficients::sigma_xx(double, const double*, const double*, double* out) const {
  std::fill(out, out + p_.n * p_.n * p_.n, 0.0);
}
void LinearCoefficients::f_xx(double, const double*, const double*, double* out) const {
  const std::size_t n = p_.n;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = 0.5 * (p_.Q[i * n + j] + p_.Q[j * n + i]);
}
void LinearCoefficients::h_xx(const double*, double* out) const {
  const std::size_t n = p_.n;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = 0.5 * (p_.H[i * n + j] + p_.H[j * n + i]);
}

}  // namespace volterra
