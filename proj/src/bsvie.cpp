#include "volterra/bsvie.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "volterra/linalg.hpp"
#include "volterra/parallel.hpp"

namespace volterra::bsvie {

using kernels::Which;

namespace {

void check_regime(const bsee::AdjointSolution& adj, const kernels::DiscreteLaplaceKernel& k,
                  const BridgeOptions& opts) {
  if (adj.grid.alpha > 0.0 && !opts.allow_singular)
    throw std::invalid_argument("bsvie bridge: alpha > 0 needs the allow_singular override");
  if (adj.path == bsee::SolvePath::lsmc)
    throw std::invalid_argument("bsvie bridge: LSMC adjoints carry no martingale representation");
  if (k.size() != adj.grid.size() || k.n != adj.n || k.nodes != adj.grid.nodes || k.weights != adj.grid.weights)
    throw std::invalid_argument("bsvie bridge: kernel does not match the adjoints");
}

// K(l dt) for l = 0..N (index 0 unused), n x n each.
std::vector<double> lag_table(const kernels::DiscreteLaplaceKernel& k, Which w, const TimeGrid& g) {
  const std::size_t nn = k.n * k.n;
  std::vector<double> out((g.n_steps + 1) * nn, 0.0);
  for (std::size_t l = 1; l <= g.n_steps; ++l)
    kernels::kernel_eval(k, w, static_cast<double>(l) * g.dt(), {out.data() + l * nn, nn});
  return out;
}

struct PathDerivs {
  std::vector<double> bx, sx, fx, bxx, sxx, fxx;
  std::vector<double> hx, hxx;
};

PathDerivs derivs_on_path0(const CoefficientSet& c, const ControlPath& u, const StateEnsemble& x,
                           const TimeGrid& g) {
  const std::size_t n = c.n(), nn = n * n, N = g.n_steps;
  PathDerivs d;
  d.bx.resize(N * nn);
  d.sx.resize(N * nn);
  d.fx.resize(N * n);
  d.bxx.resize(N * n * nn);
  d.sxx.resize(N * n * nn);
  d.fxx.resize(N * nn);
  for (std::size_t m = 0; m < N; ++m) {
    const double t = g.t(m);
    const double* um = u.at(0, m);
    const double* xm = x.at(0, m);
    c.b_x(t, um, xm, d.bx.data() + m * nn);
    c.sigma_x(t, um, xm, d.sx.data() + m * nn);
    c.f_x(t, um, xm, d.fx.data() + m * n);
    c.b_xx(t, um, xm, d.bxx.data() + m * n * nn);
    c.sigma_xx(t, um, xm, d.sxx.data() + m * n * nn);
    c.f_xx(t, um, xm, d.fxx.data() + m * nn);
  }
  d.hx.resize(n);
  d.hxx.resize(nn);
  c.h_x(x.at(0, N), d.hx.data());
  c.h_xx(x.at(0, N), d.hxx.data());
  return d;
}

double max_diff(const double* a, const double* b, std::size_t len) {
  double m = 0.0;
  for (std::size_t i = 0; i < len; ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

FirstTuple bsee_to_bsvie_first(const bsee::AdjointSolution& adj, const kernels::DiscreteLaplaceKernel& k,
                               BridgeOptions opts) {
  check_regime(adj, k, opts);
  const std::size_t n = adj.n, nn = n * n, N = adj.tgrid.n_steps, K = adj.basis.K;
  FirstTuple tup;
  tup.tgrid = adj.tgrid;
  tup.n = n;
  tup.basis = adj.basis;
  tup.pV1 = bsee::FieldTable(N + 1, 1, n, K);
  tup.pV2 = bsee::FieldTable(N, 1, n, K);
  // p^V_1(t) = E_t[p_N]: the terminal coefficients, read at S_t.
  for (std::size_t m = 0; m <= N; ++m)
    for (std::size_t col = 0; col <= K; ++col)
      std::copy(adj.p.at(N, 0, col), adj.p.at(N, 0, col) + n, tup.pV1.at(m, 0, col));
  // p^V_2 = b_x' pb + s_x' qs - f_x, column-wise.
  const auto& d = adj.deriv;
  for (std::size_t m = 0; m < N; ++m)
    for (std::size_t col = 0; col <= K; ++col) {
      double* g = tup.pV2.at(m, 0, col);
      la::gemv_t_acc(n, 1.0, d.bx.data() + m * nn, adj.pb.at(m, 0, col), g);
      la::gemv_t_acc(n, 1.0, d.sx.data() + m * nn, adj.qs.at(m, 0, col), g);
      if (col == 0)
        for (std::size_t r = 0; r < n; ++r) g[r] -= d.fx[m * n + r];
    }
  // Martingale parts: the D-columns against the Gaussian integrands.
  tup.qV1.assign(N * n, 0.0);
  tup.qV2.assign(N * N * n, 0.0);
  for (std::size_t m = 0; m < N; ++m)
    for (std::size_t kk = 0; kk < K; ++kk) {
      const double a = adj.basis.a[m * K + kk];
      for (std::size_t r = 0; r < n; ++r) tup.qV1[m * n + r] += tup.pV1.at(N, 0, kk + 1)[r] * a;
    }
  for (std::size_t s = 0; s < N; ++s)
    for (std::size_t t = 0; t < s; ++t)
      for (std::size_t kk = 0; kk < K; ++kk) {
        const double a = adj.basis.a[t * K + kk];
        for (std::size_t r = 0; r < n; ++r) tup.qV2[(s * N + t) * n + r] += tup.pV2.at(s, 0, kk + 1)[r] * a;
      }
  return tup;
}

FirstResiduals bsvie_residual_first(const FirstTuple& tup, const CoefficientSet& c,
                                    const ControlPath& u_hat, const StateEnsemble& x_hat,
                                    const kernels::DiscreteLaplaceKernel& k, const BrownianEnsemble& ens) {
  const TimeGrid& g = tup.tgrid;
  const std::size_t n = tup.n, nn = n * n, N = g.n_steps, K = tup.basis.K;
  const double dt = g.dt();
  if (ens.grid().n_steps != N || x_hat.n_steps != N || x_hat.n_paths != ens.n_paths())
    throw std::invalid_argument("bsvie residual: grids do not match");
  const PathDerivs d = derivs_on_path0(c, u_hat, x_hat, g);
  const auto kb = lag_table(k, Which::b, g);
  const auto ks = lag_table(k, Which::sigma, g);
  FirstResiduals res;

  // Line 2, coefficient-wise: E_t of every term is the same affine column.
  std::vector<double> inner(n), rhs(n);
  for (std::size_t m = 0; m < N; ++m) {
    double worst = 0.0;
    for (std::size_t col = 0; col <= K; ++col) {
      std::fill(inner.begin(), inner.end(), 0.0);
      la::gemv_t_acc(n, 1.0, kb.data() + (N - m) * nn, tup.pV1.at(m, 0, col), inner.data());
      for (std::size_t j = m + 1; j < N; ++j)
        la::gemv_t_acc(n, dt, kb.data() + (j - m) * nn, tup.pV2.at(j, 0, col), inner.data());
      std::fill(rhs.begin(), rhs.end(), 0.0);
      la::gemv_t_acc(n, 1.0, d.bx.data() + m * nn, inner.data(), rhs.data());
      if (col == 0) {
        std::fill(inner.begin(), inner.end(), 0.0);
        la::gemv_t_acc(n, 1.0, ks.data() + (N - m) * nn, tup.qV1.data() + m * n, inner.data());
        for (std::size_t j = m + 1; j < N; ++j)
          la::gemv_t_acc(n, dt, ks.data() + (j - m) * nn, tup.qV2.data() + (j * N + m) * n, inner.data());
        la::gemv_t_acc(n, 1.0, d.sx.data() + m * nn, inner.data(), rhs.data());
        for (std::size_t r = 0; r < n; ++r) rhs[r] -= d.fx[m * n + r];
      }
      worst = std::max(worst, max_diff(rhs.data(), tup.pV2.at(m, 0, col), n));
    }
    res.line2 = std::max(res.line2, worst);
    res.rows.push_back({"line2", g.t(m), g.t(m), worst});
  }

  // Line 1 and the M-constraint, pathwise. Per-step maxima are order-independent.
  const std::size_t P = ens.n_paths();
  std::vector<double> l1(par::chunk_count(P) * (N + 1), 0.0), mc(par::chunk_count(P) * N, 0.0);
  par::for_chunks(P, [&](std::size_t lo, std::size_t hi, std::size_t ch) {
    std::vector<double> dw(N), val(n), tail(n), hx(n), mart(n);
    for (std::size_t p = lo; p < hi; ++p) {
      ens.increments(p, dw);
      const auto S = tup.basis.path_values(ens, p);
      c.h_x(x_hat.at(p, N), hx.data());
      std::fill(tail.begin(), tail.end(), 0.0);
      for (std::size_t m = N + 1; m-- > 0;) {
        if (m < N)
          for (std::size_t r = 0; r < n; ++r) tail[r] += tup.qV1[m * n + r] * dw[m];
        tup.pV1.eval(0, m, 0, K ? S.data() + m * K : nullptr, val.data());
        double e = 0.0;
        for (std::size_t r = 0; r < n; ++r) e = std::max(e, std::abs(val[r] + tail[r] + hx[r]));
        l1[ch * (N + 1) + m] = std::max(l1[ch * (N + 1) + m], e);
      }
      for (std::size_t s = 0; s < N; ++s) {
        tup.pV2.eval(0, s, 0, K ? S.data() + s * K : nullptr, val.data());
        std::copy(tup.pV2.at(s, 0, 0), tup.pV2.at(s, 0, 0) + n, mart.begin());
        for (std::size_t t = 0; t < s; ++t)
          for (std::size_t r = 0; r < n; ++r) mart[r] += tup.qV2[(s * N + t) * n + r] * dw[t];
        mc[ch * N + s] = std::max(mc[ch * N + s], max_diff(val.data(), mart.data(), n));
      }
    }
  });
  for (std::size_t m = 0; m <= N; ++m) {
    double e = 0.0;
    for (std::size_t ch = 0; ch < par::chunk_count(P); ++ch) e = std::max(e, l1[ch * (N + 1) + m]);
    res.line1 = std::max(res.line1, e);
    res.rows.push_back({"line1", g.t(m), g.t(m), e});
  }
  for (std::size_t s = 0; s < N; ++s) {
    double e = 0.0;
    for (std::size_t ch = 0; ch < par::chunk_count(P); ++ch) e = std::max(e, mc[ch * N + s]);
    res.m_constraint = std::max(res.m_constraint, e);
    res.rows.push_back({"m_constraint", g.t(s), g.t(s), e});
  }
  return res;
}

double first_roundtrip(const FirstTuple& tup, const bsee::AdjointSolution& adj,
                       const kernels::DiscreteLaplaceKernel& k) {
  const std::size_t n = tup.n, N = tup.tgrid.n_steps, K = tup.basis.K, L = k.size();
  const double dt = tup.tgrid.dt();
  double worst = 0.0;
  std::vector<double> v(n);
  for (std::size_t i = 0; i < L; ++i) {
    const double th = k.nodes[i];
    for (std::size_t m = 0; m <= N; ++m) {
      for (std::size_t col = 0; col <= K; ++col) {
        std::fill(v.begin(), v.end(), 0.0);
        la::axpy(std::exp(-th * static_cast<double>(N - m) * dt), {tup.pV1.at(m, 0, col), n}, v);
        for (std::size_t j = m; j < N; ++j)
          la::axpy(std::exp(-th * static_cast<double>(j - m) * dt) * dt, {tup.pV2.at(j, 0, col), n}, v);
        worst = std::max(worst, max_diff(v.data(), adj.p.at(m, i, col), n));
      }
      if (m == N) continue;
      std::fill(v.begin(), v.end(), 0.0);
      la::axpy(std::exp(-th * static_cast<double>(N - m) * dt), {tup.qV1.data() + m * n, n}, v);
      for (std::size_t j = m + 1; j < N; ++j)
        la::axpy(std::exp(-th * static_cast<double>(j - m) * dt) * dt, {tup.qV2.data() + (j * N + m) * n, n}, v);
      worst = std::max(worst, max_diff(v.data(), adj.q.at(m, i, 0), n));
      for (std::size_t col = 1; col <= K; ++col) worst = std::max(worst, la::max_abs({adj.q.at(m, i, col), n}));
    }
  }
  return worst;
}

SecondTuple bsee_to_bsvie_second(const bsee::AdjointSolution& adj, const kernels::DiscreteLaplaceKernel& k,
                                 BridgeOptions opts) {
  check_regime(adj, k, opts);
  if (adj.path != bsee::SolvePath::deterministic || !adj.has_second)
    throw std::invalid_argument("bsvie second bridge: needs deterministic second-order adjoints");
  const TimeGrid& g = adj.tgrid;
  const std::size_t n = adj.n, nn = n * n, N = g.n_steps, L = k.size();
  if (opts.r_subgrid < 4) throw std::invalid_argument("bsvie second bridge: r sub-grid needs at least 4 points");
  const double dt = g.dt();
  const auto& d = adj.deriv;
  const auto kb = lag_table(k, Which::b, g);
  std::vector<double> decay(L);
  for (std::size_t i = 0; i < L; ++i) decay[i] = std::exp(-k.nodes[i] * dt);

  SecondTuple tup;
  tup.tgrid = g;
  tup.n = n;
  tup.nodes = L;
  const std::size_t R = std::min(opts.r_subgrid, N);
  for (std::size_t j = 0; j < R; ++j) {
    const auto r = static_cast<std::size_t>(std::llround(static_cast<double>(j * (N - 1)) / static_cast<double>(R - 1)));
    if (tup.r_points.empty() || tup.r_points.back() != r) tup.r_points.push_back(r);
  }
  tup.PV1.resize((N + 1) * nn);
  for (std::size_t m = 0; m <= N; ++m)
    for (std::size_t r = 0; r < nn; ++r) tup.PV1[m * nn + r] = -d.hxx[r];
  tup.PV2.assign(N * nn, 0.0);
  tup.PV3.assign(N * nn, 0.0);
  tup.PV4.assign(N * N * nn, 0.0);
  tup.calP.assign((N + 1) * L * nn, 0.0);
  tup.F.assign(N * L * nn, 0.0);
  tup.sP.assign(N * (N + 1) * L * nn, 0.0);
  auto sp = [&](std::size_t r, std::size_t m, std::size_t i) {
    return tup.sP.data() + ((r * (N + 1) + m) * L + i) * nn;
  };

  // P3 = H_xx + s_x' C s_x from the solved first- and second-order adjoints.
  std::vector<double> tmp(nn);
  for (std::size_t m = 0; m < N; ++m) {
    double* p3 = tup.PV3.data() + m * nn;
    const double* pb = adj.pb.at(m, 0, 0);
    const double* qs = adj.qs.at(m, 0, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < nn; ++r)
        p3[r] += pb[i] * d.bxx[m * n * nn + i * nn + r] + qs[i] * d.sxx[m * n * nn + i * nn + r];
    for (std::size_t r = 0; r < nn; ++r) p3[r] -= d.fxx[m * nn + r];
    std::fill(tmp.begin(), tmp.end(), 0.0);
    la::gemm_acc(n, 1.0, adj.C.at(m, 0, 0), false, d.sx.data() + m * nn, false, tmp.data());
    la::gemm_acc(n, 1.0, d.sx.data() + m * nn, true, tmp.data(), false, p3);
  }

  // b_x' mu[M_b' e^{-th dt} X(th)] for a node field X.
  std::vector<double> mu(nn);
  auto bx_contract = [&](std::size_t m, auto field, double* out) {
    std::fill(mu.begin(), mu.end(), 0.0);
    for (std::size_t i = 0; i < L; ++i)
      la::gemm_acc(n, k.weights[i] * decay[i], k.m(Which::b, i), true, field(i), false, mu.data());
    la::gemm_acc(n, 1.0, d.bx.data() + m * nn, true, mu.data(), false, out);
  };

  for (std::size_t i = 0; i < L; ++i)
    std::copy(tup.PV1.begin(), tup.PV1.begin() + nn, tup.calP.begin() + (N * L + i) * nn);
  std::vector<double> acc(nn);
  for (std::size_t m = N; m-- > 0;) {
    const double* bx = d.bx.data() + m * nn;
    double* p2 = tup.PV2.data() + m * nn;
    bx_contract(m, [&](std::size_t i) { return tup.calP.data() + ((m + 1) * L + i) * nn; }, p2);
    for (std::size_t i = 0; i < L; ++i) {
      const double* nx = tup.calP.data() + ((m + 1) * L + i) * nn;
      double* cur = tup.calP.data() + (m * L + i) * nn;
      for (std::size_t r = 0; r < nn; ++r) cur[r] = decay[i] * nx[r] + p2[r] * dt;
    }
    for (std::size_t s = m + 1; s < N; ++s) {
      double* p4 = tup.PV4.data() + (s * N + m) * nn;
      bx_contract(m, [&](std::size_t i) { return sp(s, m + 1, i); }, p4);
      for (std::size_t i = 0; i < L; ++i) {
        const double* nx = sp(s, m + 1, i);
        double* cur = sp(s, m, i);
        for (std::size_t r = 0; r < nn; ++r) cur[r] = decay[i] * nx[r] + p4[r] * dt;
      }
    }
    // F_m(th) = e^{-th dt}[calP_{m+1}(th) Kb(T - t_m) + sum_{s>m} sP^s_{m+1}(th) Kb(t_s - t_m) dt] b_x
    for (std::size_t i = 0; i < L; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      la::gemm_acc(n, decay[i], tup.calP.data() + ((m + 1) * L + i) * nn, false, kb.data() + (N - m) * nn, false,
                   acc.data());
      for (std::size_t s = m + 1; s < N; ++s)
        la::gemm_acc(n, decay[i] * dt, sp(s, m + 1, i), false, kb.data() + (s - m) * nn, false, acc.data());
      double* f = tup.F.data() + (m * L + i) * nn;
      la::gemm_acc(n, 1.0, acc.data(), false, bx, false, f);
      double* diag = sp(m, m, i);
      for (std::size_t r = 0; r < nn; ++r) diag[r] = tup.PV3[m * nn + r] + f[r];
    }
  }
  return tup;
}

SecondResiduals bsvie_residual_second(const SecondTuple& tup, const CoefficientSet& c,
                                      const ControlPath& u_hat, const StateEnsemble& x_hat,
                                      const kernels::DiscreteLaplaceKernel& k) {
  const TimeGrid& g = tup.tgrid;
  const std::size_t n = tup.n, nn = n * n, N = g.n_steps, L = tup.nodes;
  const double dt = g.dt();
  const PathDerivs d = derivs_on_path0(c, u_hat, x_hat, g);
  const auto kb = lag_table(k, Which::b, g);
  SecondResiduals res;
  std::vector<double> inner(nn), rhs(nn), acc(nn), rec(nn);
  auto Fp = [&](std::size_t m, std::size_t i) { return tup.F.data() + (m * L + i) * nn; };
  auto P4 = [&](std::size_t r, std::size_t m) { return tup.PV4.data() + (r * N + m) * nn; };
  auto ex = [&](std::size_t i, std::size_t lag) { return std::exp(-k.nodes[i] * static_cast<double>(lag) * dt); };

  for (std::size_t m = 0; m <= N; ++m) {
    double e = 0.0;
    for (std::size_t r = 0; r < nn; ++r) e = std::max(e, std::abs(tup.PV1[m * nn + r] + d.hxx[r]));
    res.eq1 = std::max(res.eq1, e);
    res.rows.push_back({"eq1", g.t(m), g.t(m), e});
  }
  for (std::size_t m = 0; m < N; ++m) {
    std::fill(inner.begin(), inner.end(), 0.0);
    la::gemm_acc(n, 1.0, kb.data() + (N - m) * nn, true, tup.PV1.data() + m * nn, false, inner.data());
    for (std::size_t j = m + 1; j < N; ++j)
      la::gemm_acc(n, dt, kb.data() + (j - m) * nn, true, tup.PV2.data() + j * nn, false, inner.data());
    std::fill(rhs.begin(), rhs.end(), 0.0);
    la::gemm_acc(n, 1.0, d.bx.data() + m * nn, true, inner.data(), false, rhs.data());
    const double e = max_diff(rhs.data(), tup.PV2.data() + m * nn, nn);
    res.eq2 = std::max(res.eq2, e);
    res.rows.push_back({"eq2", g.t(m), g.t(m), e});
  }

  // Volterra forms of calP_m(th) and sP^s_m(th) rebuilt from the tuple alone.
  auto calP_rec = [&](std::size_t m, std::size_t i, double* out) {
    std::fill(out, out + nn, 0.0);
    la::axpy(ex(i, N - m), {tup.PV1.data() + m * nn, nn}, {out, nn});
    for (std::size_t j = m; j < N; ++j) la::axpy(ex(i, j - m) * dt, {tup.PV2.data() + j * nn, nn}, {out, nn});
  };
  auto sP_rec = [&](std::size_t s, std::size_t m, std::size_t i, double* out) {
    std::fill(out, out + nn, 0.0);
    la::axpy(ex(i, s - m), {tup.PV3.data() + s * nn, nn}, {out, nn});
    la::axpy(ex(i, s - m), {Fp(s, i), nn}, {out, nn});
    for (std::size_t j = m; j < s; ++j) la::axpy(ex(i, j - m) * dt, {P4(s, j), nn}, {out, nn});
  };

  for (std::size_t r : tup.r_points) {
    double e3 = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      calP_rec(r + 1, i, rec.data());
      la::gemm_acc(n, ex(i, 1), rec.data(), false, kb.data() + (N - r) * nn, false, acc.data());
      for (std::size_t s = r + 1; s < N; ++s) {
        sP_rec(s, r + 1, i, rec.data());
        la::gemm_acc(n, ex(i, 1) * dt, rec.data(), false, kb.data() + (s - r) * nn, false, acc.data());
      }
      std::fill(rhs.begin(), rhs.end(), 0.0);
      la::gemm_acc(n, 1.0, acc.data(), false, d.bx.data() + r * nn, false, rhs.data());
      e3 = std::max(e3, max_diff(rhs.data(), Fp(r, i), nn));
    }
    res.eq3 = std::max(res.eq3, e3);
    res.rows.push_back({"eq3", g.t(r), g.t(r), e3});

    for (std::size_t m = 0; m < r; ++m) {
      std::fill(inner.begin(), inner.end(), 0.0);
      la::gemm_acc(n, 1.0, kb.data() + (r - m) * nn, true, tup.PV3.data() + r * nn, false, inner.data());
      for (std::size_t i = 0; i < L; ++i)
        la::gemm_acc(n, k.weights[i] * ex(i, r - m), k.m(Which::b, i), true, Fp(r, i), false, inner.data());
      for (std::size_t s = m + 1; s < r; ++s)
        la::gemm_acc(n, dt, kb.data() + (s - m) * nn, true, P4(r, s), false, inner.data());
      std::fill(rhs.begin(), rhs.end(), 0.0);
      la::gemm_acc(n, 1.0, d.bx.data() + m * nn, true, inner.data(), false, rhs.data());
      const double e4 = max_diff(rhs.data(), P4(r, m), nn);
      res.eq4 = std::max(res.eq4, e4);
      res.rows.push_back({"eq4", g.t(m), g.t(r), e4});
    }
  }
  res.rows.push_back({"m_constraint", 0.0, 0.0, res.m_constraint});
  return res;
}

double second_roundtrip(const SecondTuple& tup, const bsee::AdjointSolution& adj,
                        const kernels::DiscreteLaplaceKernel& k) {
  const std::size_t nn = tup.n * tup.n, N = tup.tgrid.n_steps, L = tup.nodes;
  const double dt = tup.tgrid.dt();
  std::vector<double> v(nn);
  double worst = 0.0;
  for (std::size_t m = 0; m <= N; ++m)
    for (std::size_t i1 = 0; i1 < L; ++i1)
      for (std::size_t i2 = 0; i2 < L; ++i2) {
        const double th2 = k.nodes[i2];
        std::fill(v.begin(), v.end(), 0.0);
        la::axpy(std::exp(-th2 * static_cast<double>(N - m) * dt),
                 {tup.calP.data() + (m * L + i1) * nn, nn}, v);
        for (std::size_t r = m; r < N; ++r)
          la::axpy(std::exp(-th2 * static_cast<double>(r - m) * dt) * dt, {tup.sp(r, m, i1), nn}, v);
        worst = std::max(worst, max_diff(v.data(), adj.P.at(m, i1 * L + i2, 0), nn));
      }
  return worst;
}

}  // namespace volterra::bsvie
