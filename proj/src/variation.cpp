#include "volterra/variation.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "volterra/parallel.hpp"

namespace volterra {

SpikeWindow snap_spike(double tau, double eps, const TimeGrid& grid) {
  if (!(tau >= 0.0 && tau < grid.T)) throw std::invalid_argument("spike: tau must lie in [0, T)");
  if (!(eps > 0.0)) throw std::invalid_argument("spike: eps must be > 0");
  if (tau + eps > grid.T * (1.0 + 1e-12)) throw std::invalid_argument("spike: tau + eps exceeds T");
  SpikeWindow w;
  w.m0 = static_cast<std::size_t>(std::llround(tau / grid.dt()));
  w.k = static_cast<std::size_t>(std::llround(eps / grid.dt()));
  if (w.k == 0) throw std::invalid_argument("spike: eps is shorter than one grid step");
  if (w.m0 + w.k > grid.n_steps) throw std::invalid_argument("spike: snapped window exceeds the grid");
  return w;
}

ControlPath apply_spike(const ControlPath& u_hat, const SpikeSpec& spike, const TimeGrid& grid) {
  const SpikeWindow w = snap_spike(spike.tau, spike.eps, grid);
  if (u_hat.n_steps != grid.n_steps || spike.v.n_steps != grid.n_steps || u_hat.dim != spike.v.dim)
    throw std::invalid_argument("apply_spike: control grids are incompatible");
  if (!u_hat.deterministic() && !spike.v.deterministic() && u_hat.n_paths != spike.v.n_paths)
    throw std::invalid_argument("apply_spike: per-path controls disagree on path count");
  ControlPath out;
  out.dim = u_hat.dim;
  out.n_steps = u_hat.n_steps;
  out.n_paths = u_hat.deterministic() ? spike.v.n_paths : u_hat.n_paths;
  const std::size_t paths = out.deterministic() ? 1 : out.n_paths;
  out.values.resize(paths * out.n_steps * out.dim);
  for (std::size_t p = 0; p < paths; ++p)
    for (std::size_t m = 0; m < out.n_steps; ++m) {
      const double* src = w.contains(m) ? spike.v.at(p, m) : u_hat.at(p, m);
      std::copy(src, src + out.dim, out.values.data() + (p * out.n_steps + m) * out.dim);
    }
  return out;
}

namespace {

void derive_bundle(VariationBundle& b) {
  b.x12 = b.x1;
  b.dx = b.x_v;
  for (std::size_t i = 0; i < b.x12.x.size(); ++i) {
    b.x12.x[i] += b.x2.x[i];
    b.dx.x[i] -= b.x_hat.x[i];
  }
  b.dx1 = b.dx;
  for (std::size_t i = 0; i < b.dx1.x.size(); ++i) b.dx1.x[i] -= b.x1.x[i];
  b.dx12 = b.dx1;
  for (std::size_t i = 0; i < b.dx12.x.size(); ++i) b.dx12.x[i] -= b.x2.x[i];
}

template <class MakeConv>
void bundle_paths(const CoefficientSet& c, const SpikeSpec& spike, std::span<const double> xi,
                  const BrownianEnsemble& ens, bool parallel, VariationBundle& b, MakeConv make) {
  const TimeGrid& g = ens.grid();
  par::for_chunks(
      ens.n_paths(),
      [&](std::size_t lo, std::size_t hi, std::size_t) {
        auto conv = make();
        std::vector<double> dw(g.n_steps);
        for (std::size_t p = lo; p < hi; ++p) {
          ens.increments(p, dw);
          sve_path(c, b.u_hat, xi, g, dw, p, conv, b.x_hat.path(p));
          sve_path(c, b.u_spiked, xi, g, dw, p, conv, b.x_v.path(p));
          variational_path(c, b.u_hat, spike.v, b.window, g, dw, p, b.x_hat.path(p), {}, 1, conv,
                           b.x1.path(p), b.window.m0);
          variational_path(c, b.u_hat, spike.v, b.window, g, dw, p, b.x_hat.path(p),
                           b.x1.path(p), 2, conv, b.x2.path(p), b.window.m0);
        }
      },
      parallel);
}

}  // namespace

VariationBundle simulate_bundle(const CoefficientSet& c, const ControlPath& u_hat,
                                const SpikeSpec& spike, const kernels::DiscreteLaplaceKernel& k,
                                std::span<const double> xi, const BrownianEnsemble& ens,
                                SimOptions opts) {
  const TimeGrid& g = ens.grid();
  if (k.n != c.n()) throw std::invalid_argument("bundle: kernel dimension differs from state dimension");
  if (xi.size() != (g.n_steps + 1) * c.n()) throw std::invalid_argument("bundle: forcing table size");
  VariationBundle b;
  b.window = snap_spike(spike.tau, spike.eps, g);
  b.u_hat = u_hat;
  b.u_spiked = apply_spike(u_hat, spike, g);
  const std::size_t n = c.n(), N = g.n_steps, P = ens.n_paths();
  b.x_hat = StateEnsemble(n, N, P);
  b.x_v = StateEnsemble(n, N, P);
  b.x1 = StateEnsemble(n, N, P);
  b.x2 = StateEnsemble(n, N, P);
  if (opts.engine == Engine::lift) {
    bundle_paths(c, spike, xi, ens, opts.parallel, b, [&] { return LiftConvolver(k, g.dt()); });
  } else {
    const LagTable lags = LagTable::from(k, g);
    bundle_paths(c, spike, xi, ens, opts.parallel, b, [&] { return DirectConvolver(lags); });
  }
  derive_bundle(b);
  return b;
}

StateEnsemble simulate_variational(const CoefficientSet& c, const ControlPath& u_hat,
                                   const StateEnsemble& x_hat, const SpikeSpec& spike,
                                   const kernels::DiscreteLaplaceKernel& k,
                                   const BrownianEnsemble& ens, int order,
                                   const StateEnsemble* x1, SimOptions opts) {
  const TimeGrid& g = ens.grid();
  if (order != 1 && order != 2) throw std::invalid_argument("simulate_variational: order must be 1 or 2");
  if (x_hat.n_paths != ens.n_paths() || x_hat.n_steps != g.n_steps || x_hat.n != c.n())
    throw std::invalid_argument("simulate_variational: X-hat ensemble does not match the Brownian ensemble");
  if (order == 2 && (x1 == nullptr || x1->n_paths != ens.n_paths() || x1->n_steps != g.n_steps))
    throw std::invalid_argument("simulate_variational: order 2 needs the matching order-1 ensemble");
  const SpikeWindow w = snap_spike(spike.tau, spike.eps, g);
  StateEnsemble out(c.n(), g.n_steps, ens.n_paths());
  auto run = [&](auto make) {
    par::for_chunks(
        ens.n_paths(),
        [&](std::size_t lo, std::size_t hi, std::size_t) {
          auto conv = make();
          std::vector<double> dw(g.n_steps);
          for (std::size_t p = lo; p < hi; ++p) {
            ens.increments(p, dw);
            std::span<const double> y1 = order == 2 ? x1->path(p) : std::span<const double>{};
            variational_path(c, u_hat, spike.v, w, g, dw, p, x_hat.path(p), y1, order, conv,
                             out.path(p), w.m0);
          }
        },
        opts.parallel);
  };
  if (opts.engine == Engine::lift) {
    run([&] { return LiftConvolver(k, g.dt()); });
  } else {
    const LagTable lags = LagTable::from(k, g);
    run([&] { return DirectConvolver(lags); });
  }
  return out;
}

namespace {

double path_cost(const CoefficientSet& c, const ControlPath& u, std::span<const double> x,
                 std::size_t path, const TimeGrid& g) {
  const std::size_t n = c.n();
  double s = 0.0;
  for (std::size_t m = 0; m < g.n_steps; ++m) s += c.f(g.t(m), u.at(path, m), x.data() + m * n);
  return s * g.dt() + c.h(x.data() + g.n_steps * n);
}

// Pathwise J^{1,2} integrand.
double path_j12(const CoefficientSet& c, const ControlPath& u_hat, const ControlPath& u_sp,
                const SpikeWindow& w, std::span<const double> xh, std::span<const double> x1,
                std::span<const double> x12, std::size_t path, const TimeGrid& g) {
  const std::size_t n = c.n();
  const std::size_t N = g.n_steps;
  std::vector<double> fx(n), fxx(n * n);
  double s = 0.0;
  for (std::size_t m = 0; m < N; ++m) {
    const double t = g.t(m);
    const double* um = u_hat.at(path, m);
    const double* xm = xh.data() + m * n;
    c.f_x(t, um, xm, fx.data());
    c.f_xx(t, um, xm, fxx.data());
    s += la::dot(fx, {x12.data() + m * n, n}) +
         0.5 * la::quad(n, fxx.data(), x1.data() + m * n, x1.data() + m * n);
    if (w.contains(m)) s += c.f(t, u_sp.at(path, m), xm) - c.f(t, um, xm);
  }
  s *= g.dt();
  const double* xN = xh.data() + N * n;
  c.h_x(xN, fx.data());
  c.h_xx(xN, fxx.data());
  s += la::dot(fx, {x12.data() + N * n, n}) +
       0.5 * la::quad(n, fxx.data(), x1.data() + N * n, x1.data() + N * n);
  return s;
}

}  // namespace

stats::MeanSE cost_functional(const CoefficientSet& c, const ControlPath& u, const StateEnsemble& x,
                              const TimeGrid& grid) {
  par::OrderedSum acc(x.n_paths, 2);
  par::for_chunks(x.n_paths, [&](std::size_t lo, std::size_t hi, std::size_t ch) {
    double* s = acc.part(ch);
    for (std::size_t p = lo; p < hi; ++p) {
      const double v = path_cost(c, u, x.path(p), p, grid);
      s[0] += v;
      s[1] += v * v;
    }
  });
  const auto t = acc.total();
  return stats::mean_se_from_sums(t[0], t[1], x.n_paths);
}

stats::MeanSE compute_J12(const CoefficientSet& c, const VariationBundle& b, const TimeGrid& grid) {
  const std::size_t P = b.x_hat.n_paths;
  par::OrderedSum acc(P, 2);
  par::for_chunks(P, [&](std::size_t lo, std::size_t hi, std::size_t ch) {
    double* s = acc.part(ch);
    for (std::size_t p = lo; p < hi; ++p) {
      const double v = path_j12(c, b.u_hat, b.u_spiked, b.window, b.x_hat.path(p), b.x1.path(p),
                                b.x12.path(p), p, grid);
      s[0] += v;
      s[1] += v * v;
    }
  });
  const auto t = acc.total();
  return stats::mean_se_from_sums(t[0], t[1], P);
}

namespace {

stats::SlopeFit safe_fit(const std::vector<double>& x, const std::vector<double>& y) {
  try {
    return stats::loglog_fit(x, y);
  } catch (const std::invalid_argument&) {
    stats::SlopeFit f;
    f.slope = f.intercept = f.r2 = f.slope_se = std::numeric_limits<double>::quiet_NaN();
    return f;
  }
}

}  // namespace

RatesResult remainder_rates(const CoefficientSet& c, const kernels::DiscreteLaplaceKernel& k,
                            const ControlPath& u_hat, const ControlPath& v,
                            std::span<const double> xi, double tau,
                            const std::vector<double>& eps_list, double p,
                            const BrownianEnsemble& ens, bool with_delta_j) {
  const TimeGrid& g = ens.grid();
  const std::size_t E = eps_list.size();
  if (E < 4) throw std::invalid_argument("remainder_rates: need at least 4 eps values");
  if (!(p >= 2.0)) throw std::invalid_argument("remainder_rates: p must be >= 2");
  std::vector<SpikeWindow> windows;
  for (std::size_t e = 0; e < E; ++e) {
    const double steps = eps_list[e] / g.dt();
    if (std::abs(steps - std::round(steps)) > 1e-9 * std::max(1.0, steps))
      throw std::invalid_argument("remainder_rates: every eps must be a multiple of dt");
    if (e > 0) {
      const double r0 = eps_list[1] / eps_list[0];
      if (std::abs(eps_list[e] / eps_list[e - 1] - r0) > 1e-9 * r0)
        throw std::invalid_argument("remainder_rates: eps_list must be geometric");
    }
    windows.push_back(snap_spike(tau, eps_list[e], g));
  }
  std::size_t min_steps = windows[0].k;
  for (const auto& w : windows) min_steps = std::min(min_steps, w.k);
  if (min_steps < 4) throw std::invalid_argument("remainder_rates: smallest eps must span >= 4 steps");

  const std::size_t n = c.n(), N = g.n_steps, M = N + 1;
  const std::size_t m0 = windows[0].m0;
  constexpr std::size_t Q = 5;  // dX, X1, dX1, X2, dX12
  const std::size_t width = E * (Q * M + 2);
  par::OrderedSum acc(ens.n_paths(), width);

  std::vector<ControlPath> spiked;
  for (std::size_t e = 0; e < E; ++e) spiked.push_back(apply_spike(u_hat, SpikeSpec{tau, eps_list[e], v}, g));

  par::for_chunks(ens.n_paths(), [&](std::size_t lo, std::size_t hi, std::size_t ch) {
    double* s = acc.part(ch);
    LiftConvolver conv(k, g.dt());
    std::vector<double> dw(N), xh(M * n), xv(M * n), x1(M * n), x2(M * n), x12(M * n);
    for (std::size_t path = lo; path < hi; ++path) {
      ens.increments(path, dw);
      conv.reset();
      std::copy(xi.begin(), xi.begin() + n, xh.begin());
      sve_path_from(c, u_hat, xi, g, dw, path, conv, xh, 0);
      // Lift state at the spike start: replays the X-hat pushes up to m0.
      LiftConvolver snap(k, g.dt());
      {
        std::vector<double> bv(n), sv(n);
        for (std::size_t m = 0; m < m0; ++m) {
          c.b(g.t(m), u_hat.at(path, m), xh.data() + m * n, bv.data());
          c.sigma(g.t(m), u_hat.at(path, m), xh.data() + m * n, sv.data());
          for (std::size_t i = 0; i < n; ++i) {
            bv[i] *= g.dt();
            sv[i] *= dw[m];
          }
          snap.push(bv.data(), sv.data());
        }
      }
      const double j_hat = with_delta_j ? path_cost(c, u_hat, xh, path, g) : 0.0;
      for (std::size_t e = 0; e < E; ++e) {
        std::copy(xh.begin(), xh.begin() + (m0 + 1) * n, xv.begin());
        LiftConvolver cv = snap;
        sve_path_from(c, spiked[e], xi, g, dw, path, cv, xv, m0);
        variational_path(c, u_hat, v, windows[e], g, dw, path, xh, {}, 1, conv, x1, m0);
        variational_path(c, u_hat, v, windows[e], g, dw, path, xh, x1, 2, conv, x2, m0);
        double* se = s + e * (Q * M + 2);
        for (std::size_t m = 0; m < M; ++m) {
          double d[Q] = {0, 0, 0, 0, 0};
          for (std::size_t i = 0; i < n; ++i) {
            const double dx = xv[m * n + i] - xh[m * n + i];
            const double a1 = x1[m * n + i], a2 = x2[m * n + i];
            d[0] += dx * dx;
            d[1] += a1 * a1;
            d[2] += (dx - a1) * (dx - a1);
            d[3] += a2 * a2;
            d[4] += (dx - a1 - a2) * (dx - a1 - a2);
          }
          for (std::size_t q = 0; q < Q; ++q) se[q * M + m] += std::pow(d[q], 0.5 * p);
        }
        if (with_delta_j) {
          for (std::size_t i = 0; i < M * n; ++i) x12[i] = x1[i] + x2[i];
          const double dj = path_cost(c, spiked[e], xv, path, g) - j_hat -
                            path_j12(c, u_hat, spiked[e], windows[e], xh, x1, x12, path, g);
          se[Q * M] += dj;
          se[Q * M + 1] += dj * dj;
        }
      }
    }
  });

  const auto tot = acc.total();
  RatesResult r;
  r.eps = eps_list;
  r.quantities = {"dX", "X1", "dX1", "X2", "dX12"};
  r.delta_j_computed = with_delta_j;
  const double P = static_cast<double>(ens.n_paths());
  bool all_zero = true;
  for (std::size_t e = 0; e < E; ++e) {
    r.knorm_combo.push_back(kernels::knorm_eps(k, kernels::Which::b, 1.0, eps_list[e]) +
                            kernels::knorm_eps(k, kernels::Which::sigma, 2.0, eps_list[e]));
    const double* se = tot.data() + e * (Q * M + 2);
    for (std::size_t q = 0; q < Q; ++q) {
      double best = 0.0;
      for (std::size_t m = 0; m < M; ++m) best = std::max(best, std::pow(se[q * M + m] / P, 1.0 / p));
      r.norms[r.quantities[q]].push_back(best);
      if (best != 0.0) all_zero = false;
    }
    if (with_delta_j) r.delta_j.push_back(stats::mean_se_from_sums(se[Q * M], se[Q * M + 1], ens.n_paths()));
  }
  r.exact_zero = all_zero;
  if (!all_zero) {
    for (const auto& q : r.quantities) {
      r.fit_eps[q] = safe_fit(r.eps, r.norms[q]);
      r.fit_knorm[q] = safe_fit(r.knorm_combo, r.norms[q]);
    }
  }
  if (with_delta_j) {
    std::vector<double> mags;
    for (const auto& d : r.delta_j) mags.push_back(std::abs(d.mean));
    r.delta_j_fit = safe_fit(r.eps, mags);
  }
  return r;
}

}  // namespace volterra
