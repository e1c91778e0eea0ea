#include "volterra/bsde.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

#include "volterra/parallel.hpp"

namespace volterra::bsde {

double quad_weight(double kappa, double dt, Quadrature q) {
  if (q == Quadrature::left_point || kappa * dt < 1e-12) return dt;
  return -std::expm1(-kappa * dt) / kappa;
}

Terminal Terminal::constant(double c) {
  Terminal t;
  t.kind = TerminalKind::constant;
  t.c = c;
  return t;
}

Terminal Terminal::linear_w(double a, double c) {
  Terminal t;
  t.kind = TerminalKind::linear_w;
  t.a = a;
  t.c = c;
  return t;
}

Terminal Terminal::gaussian(double a, std::vector<double> integrand, double c) {
  Terminal t;
  t.kind = TerminalKind::gaussian_functional;
  t.a = a;
  t.c = c;
  t.integrand = std::move(integrand);
  return t;
}

double Terminal::integrand_at(std::size_t j) const {
  switch (kind) {
    case TerminalKind::constant: return 0.0;
    case TerminalKind::linear_w: return 1.0;
    case TerminalKind::gaussian_functional: return integrand[j];
  }
  return 0.0;
}

namespace {

void check_instance(const BSDEInstance& inst, const BrownianEnsemble& ens) {
  const std::size_t N = ens.grid().n_steps;
  if (!(inst.kappa >= 0.0)) throw std::invalid_argument("bsde: kappa must be >= 0");
  if (!(inst.alpha >= 0.0 && inst.alpha < 1.0)) throw std::invalid_argument("bsde: alpha must lie in [0,1)");
  if (!inst.generator.empty() && inst.generator.size() != N)
    throw std::invalid_argument("bsde: deterministic generator must have n_steps entries");
  if (!inst.generator_paths.empty() && inst.generator_paths.size() != N * ens.n_paths())
    throw std::invalid_argument("bsde: adapted generator must have n_paths*n_steps entries");
  if (!inst.terminal_paths.empty() && inst.terminal_paths.size() != ens.n_paths())
    throw std::invalid_argument("bsde: per-path terminal must have n_paths entries");
  if (inst.terminal.kind == TerminalKind::gaussian_functional && inst.terminal.integrand.size() != N)
    throw std::invalid_argument("bsde: gaussian terminal integrand must have n_steps entries");
}

}  // namespace

double terminal_value(const BSDEInstance& inst, std::span<const double> dw, std::size_t path) {
  if (!inst.terminal_paths.empty()) return inst.terminal_paths[path];
  double s = 0.0;
  if (inst.terminal.kind != TerminalKind::constant)
    for (std::size_t j = 0; j < dw.size(); ++j) s += inst.terminal.integrand_at(j) * dw[j];
  return inst.terminal.c + inst.terminal.a * s;
}

double generator_value(const BSDEInstance& inst, std::size_t n_steps, std::size_t path, std::size_t j) {
  double g = inst.generator.empty() ? 0.0 : inst.generator[j];
  if (!inst.generator_paths.empty()) g += inst.generator_paths[path * n_steps + j];
  return g;
}

namespace {

double gen_at(const BSDEInstance& inst, std::size_t N, std::size_t path, std::size_t j) {
  return generator_value(inst, N, path, j);
}

}  // namespace

BSDESolution solve_bsde_closedform(const BSDEInstance& inst, const BrownianEnsemble& ens,
                                   Quadrature quad) {
  check_instance(inst, ens);
  if (!inst.generator_paths.empty() || !inst.terminal_paths.empty())
    throw std::invalid_argument("bsde closed form: adapted generators or tabulated terminals need LSMC");
  const std::size_t N = ens.grid().n_steps;
  const double dt = ens.grid().dt();
  const double k = inst.kappa;
  const double w = quad_weight(k, dt, quad);
  const double decay = std::exp(-k * dt);
  // Deterministic part: G_m = sum_{j>=m} e^{-k(j-m)dt} g_j w.
  std::vector<double> G(N + 1, 0.0), disc(N + 1, 1.0);
  for (std::size_t m = N; m-- > 0;) G[m] = decay * G[m + 1] + (inst.generator.empty() ? 0.0 : inst.generator[m]) * w;
  for (std::size_t m = 0; m <= N; ++m) disc[m] = std::exp(-k * dt * static_cast<double>(N - m));
  BSDESolution sol(N, ens.n_paths());
  const Terminal& term = inst.terminal;
  par::for_chunks(ens.n_paths(), [&](std::size_t lo, std::size_t hi, std::size_t) {
    std::vector<double> dw(N);
    for (std::size_t path = lo; path < hi; ++path) {
      ens.increments(path, dw);
      double S = 0.0;
      for (std::size_t m = 0; m <= N; ++m) {
        sol.P(path, m) = disc[m] * (term.c + term.a * S) + G[m];
        if (m < N) {
          sol.Qv(path, m) = disc[m] * term.a * term.integrand_at(m);
          S += term.integrand_at(m) * dw[m];
        }
      }
    }
  });
  return sol;
}

Regressor brownian_regressor(const BrownianEnsemble& ens) {
  const std::size_t N = ens.grid().n_steps;
  Regressor r;
  r.values.assign((N + 1) * ens.n_paths(), 0.0);
  r.loading.assign(N * ens.n_paths(), 1.0);
  std::vector<double> dw(N);
  for (std::size_t p = 0; p < ens.n_paths(); ++p) {
    ens.increments(p, dw);
    for (std::size_t m = 0; m < N; ++m) r.values[p * (N + 1) + m + 1] = r.values[p * (N + 1) + m] + dw[m];
  }
  return r;
}

namespace {

std::vector<std::vector<int>> monomials(std::size_t vars, int degree) {
  std::vector<std::vector<int>> out;
  std::vector<int> e(vars, 0);
  // Enumerate exponent vectors with total degree <= degree in graded order.
  for (int d = 0; d <= degree; ++d) {
    std::function<void(std::size_t, int)> rec = [&](std::size_t i, int left) {
      if (i + 1 == vars) {
        e[i] = left;
        out.push_back(e);
        return;
      }
      for (int k = left; k >= 0; --k) {
        e[i] = k;
        rec(i + 1, left - k);
      }
    };
    if (vars == 0) {
      out.push_back({});
      break;
    }
    rec(0, d);
  }
  return out;
}

double eval_monomial(const std::vector<int>& e, const double* r) {
  double v = 1.0;
  for (std::size_t i = 0; i < e.size(); ++i)
    for (int k = 0; k < e[i]; ++k) v *= r[i];
  return v;
}

// E[Z^j] for Z ~ N(0, dt).
double gaussian_moment(int j, double dt) {
  if (j % 2 == 1) return 0.0;
  double v = 1.0;
  for (int k = j - 1; k > 0; k -= 2) v *= k;
  return v * std::pow(dt, j / 2);
}

// E[prod_i (A_i + c_i Z)^{e_i} Z^extra] for Z ~ N(0, dt).
double conditional_moment(const std::vector<int>& e, const double* A, const double* c, int extra,
                          double dt) {
  std::vector<double> poly{1.0};
  for (std::size_t i = 0; i < e.size(); ++i)
    for (int k = 0; k < e[i]; ++k) {
      std::vector<double> next(poly.size() + 1, 0.0);
      for (std::size_t j = 0; j < poly.size(); ++j) {
        next[j] += poly[j] * A[i];
        next[j + 1] += poly[j] * c[i];
      }
      poly.swap(next);
    }
  double s = 0.0;
  for (std::size_t j = 0; j < poly.size(); ++j) s += poly[j] * gaussian_moment(static_cast<int>(j) + extra, dt);
  return s;
}

Eigen::VectorXd least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::size_t step) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < X.cols()) {
    const auto R = qr.matrixR();
    const double cond = std::abs(R(0, 0)) / std::max(1e-300, std::abs(R(X.cols() - 1, X.cols() - 1)));
    throw std::runtime_error("lsmc: rank-deficient design at step " + std::to_string(step) + " (rank " +
                             std::to_string(qr.rank()) + " of " + std::to_string(X.cols()) +
                             ", condition estimate " + std::to_string(cond) + ")");
  }
  return qr.solve(y);
}

}  // namespace

BSDESolution solve_bsde_lsmc(const BSDEInstance& inst, const BrownianEnsemble& ens,
                             const std::vector<Regressor>& regs, LsmcOptions opts) {
  check_instance(inst, ens);
  if (opts.degree < 1) throw std::invalid_argument("lsmc: basis degree must be >= 1");
  const std::size_t N = ens.grid().n_steps;
  const std::size_t P = ens.n_paths();
  const double dt = ens.grid().dt();
  for (const auto& r : regs)
    if (r.values.size() != (N + 1) * P || r.loading.size() != N * P)
      throw std::invalid_argument("lsmc: regressor table shape does not match the ensemble");
  const std::size_t R = regs.size();
  const auto basis = monomials(R, opts.degree);
  const std::size_t B = basis.size();
  const double decay = std::exp(-inst.kappa * dt);
  const double w = quad_weight(inst.kappa, dt, opts.quad);

  BSDESolution sol(N, P);
  std::vector<double> dws(N * P);
  for (std::size_t p = 0; p < P; ++p) {
    ens.increments(p, {dws.data() + p * N, N});
    sol.P(p, N) = terminal_value(inst, {dws.data() + p * N, N}, p);
  }
  auto reg_at = [&](std::size_t p, std::size_t m, double* out) {
    for (std::size_t i = 0; i < R; ++i) out[i] = regs[i].values[p * (N + 1) + m];
  };

  Eigen::MatrixXd X(P, B);
  Eigen::VectorXd y(P), yq(P);
  std::vector<double> r(R), A(R), c(R);
  for (std::size_t m = N; m-- > 0;) {
    if (opts.regression_later) {
      for (std::size_t p = 0; p < P; ++p) {
        reg_at(p, m + 1, r.data());
        for (std::size_t k = 0; k < B; ++k) X(p, k) = eval_monomial(basis[k], r.data());
        y(p) = sol.P(p, m + 1);
      }
      const Eigen::VectorXd beta = least_squares(X, y, m + 1);
      for (std::size_t p = 0; p < P; ++p) {
        const double dw = dws[p * N + m];
        for (std::size_t i = 0; i < R; ++i) {
          c[i] = regs[i].loading[p * N + m];
          A[i] = regs[i].values[p * (N + 1) + m + 1] - c[i] * dw;
        }
        double ep = 0.0, eq = 0.0;
        for (std::size_t k = 0; k < B; ++k) {
          ep += beta(k) * conditional_moment(basis[k], A.data(), c.data(), 0, dt);
          eq += beta(k) * conditional_moment(basis[k], A.data(), c.data(), 1, dt);
        }
        sol.P(p, m) = decay * ep + gen_at(inst, N, p, m) * w;
        sol.Qv(p, m) = decay * eq / dt;
      }
    } else {
      for (std::size_t p = 0; p < P; ++p) {
        const double dw = dws[p * N + m];
        y(p) = decay * sol.P(p, m + 1) + gen_at(inst, N, p, m) * w;
        yq(p) = decay * sol.P(p, m + 1) * dw / dt;
      }
      if (m == 0) {
        // F_0 is trivial: the conditional expectation is the sample mean.
        const double mp = y.mean(), mq = yq.mean();
        for (std::size_t p = 0; p < P; ++p) {
          sol.P(p, 0) = mp;
          sol.Qv(p, 0) = mq;
        }
        continue;
      }
      for (std::size_t p = 0; p < P; ++p) {
        reg_at(p, m, r.data());
        for (std::size_t k = 0; k < B; ++k) X(p, k) = eval_monomial(basis[k], r.data());
      }
      const Eigen::VectorXd bp = least_squares(X, y, m);
      const Eigen::VectorXd bq = least_squares(X, yq, m);
      const Eigen::VectorXd fp = X * bp, fq = X * bq;
      for (std::size_t p = 0; p < P; ++p) {
        sol.P(p, m) = fp(p);
        sol.Qv(p, m) = fq(p);
      }
    }
  }
  return sol;
}

MartingaleReport martingale_residual(const BSDEInstance& inst, const BSDESolution& sol,
                                     const BrownianEnsemble& ens, Quadrature quad) {
  const std::size_t N = ens.grid().n_steps;
  const double dt = ens.grid().dt();
  const double decay = std::exp(-inst.kappa * dt);
  const double w = quad_weight(inst.kappa, dt, quad);
  par::OrderedSum acc(ens.n_paths(), 2 * N + 1);
  par::for_chunks(ens.n_paths(), [&](std::size_t lo, std::size_t hi, std::size_t ch) {
    double* s = acc.part(ch);
    std::vector<double> dw(N);
    for (std::size_t p = lo; p < hi; ++p) {
      ens.increments(p, dw);
      for (std::size_t m = 0; m < N; ++m) {
        const double r = decay * sol.P(p, m + 1) - sol.P(p, m) + gen_at(inst, N, p, m) * w -
                         sol.Qv(p, m) * dw[m];
        s[2 * m] += r;
        s[2 * m + 1] += r * r;
        s[2 * N] = std::max(s[2 * N], std::abs(r));
      }
    }
  });
  // The max slot is combined with max rather than the ordered sum.
  MartingaleReport rep;
  const auto tot = acc.total();
  double mx = 0.0;
  for (std::size_t c = 0; c < par::chunk_count(ens.n_paths()); ++c) mx = std::max(mx, acc.part(c)[2 * N]);
  rep.max_abs = mx;
  bool all_within = true;
  for (std::size_t m = 0; m < N; ++m) {
    const auto ms = stats::mean_se_from_sums(tot[2 * m], tot[2 * m + 1], ens.n_paths());
    const double z = ms.se > 0 ? std::abs(ms.mean) / ms.se : (ms.mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
    rep.worst_z = std::max(rep.worst_z, z);
    all_within = all_within && std::abs(ms.mean) <= 3.0 * ms.se;
  }
  rep.passed = rep.max_abs <= 1e-10 || all_within;
  return rep;
}

AprioriReport apriori_ratio(const BSDEInstance& inst, const BSDESolution& sol,
                            const BrownianEnsemble& ens) {
  const double k = inst.kappa;
  const double a = inst.alpha;
  if (!(k > 0.0)) throw std::invalid_argument("apriori_ratio: kappa must be > 0");
  const std::size_t N = ens.grid().n_steps;
  const double dt = ens.grid().dt();
  const double T = ens.grid().T;
  std::vector<double> wa(N + 1);
  for (std::size_t m = 0; m <= N; ++m) wa[m] = std::pow(T - ens.grid().t(m), a);
  if (a == 0.0) std::fill(wa.begin(), wa.end(), 1.0);
  par::OrderedSum acc(ens.n_paths(), 8);
  par::for_chunks(ens.n_paths(), [&](std::size_t lo, std::size_t hi, std::size_t ch) {
    double* s = acc.part(ch);
    std::vector<double> dw(N);
    for (std::size_t p = lo; p < hi; ++p) {
      ens.increments(p, dw);
      double sup = 0, supw = 0, ip = 0, iq = 0, ipw = 0, iqw = 0, ig = 0;
      for (std::size_t m = 0; m <= N; ++m) {
        const double p2 = sol.P(p, m) * sol.P(p, m);
        sup = std::max(sup, p2);
        supw = std::max(supw, wa[m] * p2);
        if (m < N) {
          const double q2 = sol.Qv(p, m) * sol.Qv(p, m);
          const double g = gen_at(inst, N, p, m);
          ip += p2 * dt;
          iq += q2 * dt;
          ipw += wa[m] * p2 * dt;
          iqw += wa[m] * q2 * dt;
          ig += wa[m] * g * g * dt;
        }
      }
      const double h = terminal_value(inst, dw, p);
      s[0] += sup;
      s[1] += k * ip;
      s[2] += iq;
      s[3] += std::pow(k, a) * supw;
      s[4] += std::pow(k, 1.0 + a) * ipw;
      s[5] += std::pow(k, a) * iqw;
      s[6] += h * h;
      s[7] += std::tgamma(1.0 - a) / std::pow(k, 1.0 - a) * ig;
    }
  });
  const auto tot = acc.total();
  const double P = static_cast<double>(ens.n_paths());
  AprioriReport rep;
  for (int i = 0; i < 6; ++i) {
    rep.terms[i] = tot[i] / P;
    rep.lhs += rep.terms[i];
  }
  rep.rhs = (tot[6] + tot[7]) / P;
  if (rep.rhs == 0.0) {
    rep.trivially_satisfied = rep.lhs == 0.0;
    rep.ratio = rep.lhs == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  } else {
    rep.ratio = rep.lhs / rep.rhs;
  }
  return rep;
}

}  // namespace volterra::bsde
