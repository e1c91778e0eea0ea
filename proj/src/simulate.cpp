#include "volterra/simulate.hpp"

#include <cmath>
#include <cstdlib>
#include <omp.h>

#include "volterra/parallel.hpp"

namespace volterra {

namespace par {

int configure_threads_from_env() {
  if (const char* env = std::getenv("VOLTERRA_SMP_THREADS")) {
    const int k = std::atoi(env);
    if (k > 0) omp_set_num_threads(k);
  }
  return omp_get_max_threads();
}

}  // namespace par

BrownianEnsemble::BrownianEnsemble(TimeGrid grid, std::size_t n_paths, std::uint64_t seed)
    : grid_(grid), n_paths_(n_paths), seed_(seed), gen_(seed), sqrt_dt_(std::sqrt(grid.dt())) {
  grid_.validate();
  if (n_paths == 0) throw std::invalid_argument("brownian ensemble: n_paths must be >= 1");
}

void BrownianEnsemble::increments(std::size_t path, std::span<double> out) const {
  const std::size_t N = grid_.n_steps;
  for (std::size_t j = 0; j < N; j += 2) {
    const auto z = rng::normal_pair(gen_, path, static_cast<std::uint32_t>(j / 2), 0);
    out[j] = sqrt_dt_ * z[0];
    if (j + 1 < N) out[j + 1] = sqrt_dt_ * z[1];
  }
}

double BrownianEnsemble::increment(std::size_t path, std::size_t j) const {
  const auto z = rng::normal_pair(gen_, path, static_cast<std::uint32_t>(j / 2), 0);
  return sqrt_dt_ * z[j % 2];
}

BrownianEnsemble sample_brownian(const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed) {
  return BrownianEnsemble(grid, n_paths, seed);
}

BrownianSanity brownian_sanity(const BrownianEnsemble& ens) {
  const std::size_t N = ens.grid().n_steps;
  par::OrderedSum acc(ens.n_paths(), 2);
  par::for_chunks(ens.n_paths(), [&](std::size_t b, std::size_t e, std::size_t c) {
    std::vector<double> dw(N);
    double* s = acc.part(c);
    for (std::size_t p = b; p < e; ++p) {
      ens.increments(p, dw);
      for (double v : dw) {
        s[0] += v;
        s[1] += v * v;
      }
    }
  });
  const auto tot = acc.total();
  const double cnt = static_cast<double>(N * ens.n_paths());
  BrownianSanity r;
  r.mean = tot[0] / cnt;
  r.var_ratio = (tot[1] / cnt - r.mean * r.mean) / ens.grid().dt();
  r.mean_bound = 5.0 * std::sqrt(ens.grid().dt() / cnt);
  r.passed = std::abs(r.mean) <= r.mean_bound && std::abs(r.var_ratio - 1.0) <= 5.0 * std::sqrt(2.0 / cnt);
  return r;
}

ControlPath ControlPath::constant(std::size_t n_steps, double value, std::size_t dim) {
  ControlPath c;
  c.dim = dim;
  c.n_steps = n_steps;
  c.values.assign(n_steps * dim, value);
  return c;
}

ControlPath ControlPath::table(std::size_t n_steps, std::vector<double> values, std::size_t dim) {
  if (values.size() != n_steps * dim) throw std::invalid_argument("control table: size != n_steps*dim");
  ControlPath c;
  c.dim = dim;
  c.n_steps = n_steps;
  c.values = std::move(values);
  return c;
}

void ControlPath::validate(const ControlDomain& U) const {
  if (dim != U.dim) throw std::invalid_argument("control path: dimension differs from U");
  for (std::size_t k = 0; k + dim <= values.size(); k += dim)
    if (!U.contains(values.data() + k, 1e-12))
      throw std::invalid_argument("control path: value outside the control domain U");
}

std::vector<double> constant_forcing(const TimeGrid& grid, std::span<const double> x0) {
  std::vector<double> xi;
  xi.reserve((grid.n_steps + 1) * x0.size());
  for (std::size_t m = 0; m <= grid.n_steps; ++m) xi.insert(xi.end(), x0.begin(), x0.end());
  return xi;
}

LagTable LagTable::from(const kernels::DiscreteLaplaceKernel& k, const TimeGrid& grid) {
  LagTable t;
  t.n = k.n;
  t.n_steps = grid.n_steps;
  const std::size_t nn = k.n * k.n;
  t.kb.assign((grid.n_steps + 1) * nn, 0.0);
  t.ks.assign((grid.n_steps + 1) * nn, 0.0);
  for (std::size_t l = 1; l <= grid.n_steps; ++l) {
    k.eval(kernels::Which::b, grid.t(l), {t.kb.data() + l * nn, nn});
    k.eval(kernels::Which::sigma, grid.t(l), {t.ks.data() + l * nn, nn});
  }
  return t;
}

LagTable LagTable::from(const kernels::AnalyticPair& k, const TimeGrid& grid) {
  LagTable t;
  t.n = k.b.n;
  t.n_steps = grid.n_steps;
  const std::size_t nn = t.n * t.n;
  t.kb.assign((grid.n_steps + 1) * nn, 0.0);
  t.ks.assign((grid.n_steps + 1) * nn, 0.0);
  for (std::size_t l = 1; l <= grid.n_steps; ++l) {
    k.b.eval(grid.t(l), {t.kb.data() + l * nn, nn});
    k.sigma.eval(grid.t(l), {t.ks.data() + l * nn, nn});
  }
  return t;
}

namespace {

void check_inputs(const CoefficientSet& c, const ControlPath& u, std::span<const double> xi,
                  const BrownianEnsemble& ens, std::size_t kernel_n) {
  const std::size_t N = ens.grid().n_steps;
  if (kernel_n != c.n()) throw std::invalid_argument("simulate: kernel dimension differs from state dimension");
  if (u.n_steps != N) throw std::invalid_argument("simulate: control table length differs from n_steps");
  if (!u.deterministic() && u.n_paths != ens.n_paths())
    throw std::invalid_argument("simulate: per-path control has a different path count");
  if (xi.size() != (N + 1) * c.n()) throw std::invalid_argument("simulate: forcing table must be (n_steps+1)*n");
}

template <class MakeConv>
StateEnsemble run_paths(const CoefficientSet& c, const ControlPath& u, std::span<const double> xi,
                        const BrownianEnsemble& ens, bool parallel, MakeConv make) {
  const std::size_t N = ens.grid().n_steps;
  StateEnsemble out(c.n(), N, ens.n_paths());
  par::for_chunks(
      ens.n_paths(),
      [&](std::size_t b, std::size_t e, std::size_t) {
        auto conv = make();
        std::vector<double> dw(N);
        for (std::size_t p = b; p < e; ++p) {
          ens.increments(p, dw);
          sve_path(c, u, xi, ens.grid(), dw, p, conv, out.path(p));
        }
      },
      parallel);
  return out;
}

}  // namespace

StateEnsemble simulate_sve(const CoefficientSet& c, const ControlPath& u,
                           const kernels::DiscreteLaplaceKernel& k, std::span<const double> xi,
                           const BrownianEnsemble& ens, SimOptions opts) {
  check_inputs(c, u, xi, ens, k.n);
  if (opts.engine == Engine::lift) {
    const double dt = ens.grid().dt();
    return run_paths(c, u, xi, ens, opts.parallel, [&] { return LiftConvolver(k, dt); });
  }
  const LagTable lags = LagTable::from(k, ens.grid());
  return run_paths(c, u, xi, ens, opts.parallel, [&] { return DirectConvolver(lags); });
}

StateEnsemble simulate_sve(const CoefficientSet& c, const ControlPath& u,
                           const kernels::AnalyticPair& k, std::span<const double> xi,
                           const BrownianEnsemble& ens, SimOptions opts) {
  check_inputs(c, u, xi, ens, k.b.n);
  const LagTable lags = LagTable::from(k, ens.grid());
  return run_paths(c, u, xi, ens, opts.parallel, [&] { return DirectConvolver(lags); });
}

StateEnsemble simulate_sve_reference(const CoefficientSet& c, const ControlPath& u,
                                     const kernels::DiscreteLaplaceKernel& k,
                                     std::span<const double> xi, const BrownianEnsemble& ens) {
  return simulate_sve(c, u, k, xi, ens, SimOptions{Engine::direct, false});
}

std::pair<LiftEnsemble, StateEnsemble> simulate_lift(const CoefficientSet& c, const ControlPath& u,
                                                     const kernels::DiscreteLaplaceKernel& k,
                                                     std::span<const double> xi,
                                                     const BrownianEnsemble& ens) {
  check_inputs(c, u, xi, ens, k.n);
  const std::size_t N = ens.grid().n_steps;
  const std::size_t n = c.n();
  const std::size_t nodes = k.size();
  LiftEnsemble lift(n, N, ens.n_paths(), nodes);
  StateEnsemble x(n, N, ens.n_paths());
  const double dt = ens.grid().dt();
  par::for_chunks(ens.n_paths(), [&](std::size_t b, std::size_t e, std::size_t) {
    LiftConvolver conv(k, dt);
    std::vector<double> dw(N), bv(n), sv(n), val(n);
    for (std::size_t p = b; p < e; ++p) {
      ens.increments(p, dw);
      conv.reset();
      std::copy(xi.begin(), xi.begin() + n, x.at(p, 0));
      for (std::size_t m = 0; m < N; ++m) {
        const double* xm = x.at(p, m);
        c.b(ens.grid().t(m), u.at(p, m), xm, bv.data());
        c.sigma(ens.grid().t(m), u.at(p, m), xm, sv.data());
        for (std::size_t i = 0; i < n; ++i) {
          bv[i] *= dt;
          sv[i] *= dw[m];
        }
        conv.push(bv.data(), sv.data());
        conv.value(val.data());
        const auto st = conv.state();
        std::copy(st.begin(), st.end(), lift.at(p, m + 1));
        double* xn = x.at(p, m + 1);
        for (std::size_t i = 0; i < n; ++i) {
          xn[i] = xi[(m + 1) * n + i] + val[i];
          if (!std::isfinite(xn[i]))
            throw std::runtime_error("simulate_lift: non-finite state at path " + std::to_string(p));
        }
      }
    }
  });
  return {std::move(lift), std::move(x)};
}

StateEnsemble simulate_euler_maruyama(const CoefficientSet& c, const ControlPath& u,
                                      std::span<const double> x0, const BrownianEnsemble& ens) {
  const std::size_t N = ens.grid().n_steps;
  const std::size_t n = c.n();
  const double dt = ens.grid().dt();
  StateEnsemble x(n, N, ens.n_paths());
  std::vector<double> dw(N), bv(n), sv(n);
  for (std::size_t p = 0; p < ens.n_paths(); ++p) {
    ens.increments(p, dw);
    std::copy(x0.begin(), x0.end(), x.at(p, 0));
    for (std::size_t m = 0; m < N; ++m) {
      c.b(ens.grid().t(m), u.at(p, m), x.at(p, m), bv.data());
      c.sigma(ens.grid().t(m), u.at(p, m), x.at(p, m), sv.data());
      for (std::size_t i = 0; i < n; ++i) x.at(p, m + 1)[i] = x.at(p, m)[i] + bv[i] * dt + sv[i] * dw[m];
    }
  }
  return x;
}

namespace {

StateEnsemble convolve_impl(const LagTable& lags, kernels::Which which, const StateEnsemble& g,
                            ConvolveMode mode, const BrownianEnsemble* ens, const TimeGrid& grid) {
  if (mode == ConvolveMode::ito && ens == nullptr)
    throw std::invalid_argument("volterra_convolve: ito mode needs a Brownian ensemble");
  if (g.n_steps != grid.n_steps) throw std::invalid_argument("volterra_convolve: integrand grid mismatch");
  if (ens && (ens->n_paths() < g.n_paths || ens->grid().n_steps != grid.n_steps))
    throw std::invalid_argument("volterra_convolve: ensemble does not cover the integrand");
  const std::size_t n = g.n;
  const std::size_t N = grid.n_steps;
  const double dt = grid.dt();
  StateEnsemble out(n, N, g.n_paths);
  par::for_chunks(g.n_paths, [&](std::size_t b, std::size_t e, std::size_t) {
    std::vector<double> dw(N, 0.0);
    for (std::size_t p = b; p < e; ++p) {
      if (mode == ConvolveMode::ito) ens->increments(p, dw);
      for (std::size_t m = 1; m <= N; ++m) {
        double* o = out.at(p, m);
        for (std::size_t j = 0; j < m; ++j) {
          const double* kk = which == kernels::Which::b ? lags.b(m - j) : lags.s(m - j);
          const double w = mode == ConvolveMode::ito ? dw[j] : dt;
          la::gemv_acc(n, w, kk, g.at(p, j), o);
        }
      }
    }
  });
  return out;
}

}  // namespace

StateEnsemble volterra_convolve(const kernels::DiscreteLaplaceKernel& k, kernels::Which which,
                                const StateEnsemble& g, ConvolveMode mode,
                                const BrownianEnsemble* ens, const TimeGrid& grid) {
  return convolve_impl(LagTable::from(k, grid), which, g, mode, ens, grid);
}

StateEnsemble volterra_convolve(const kernels::AnalyticPair& k, kernels::Which which,
                                const StateEnsemble& g, ConvolveMode mode,
                                const BrownianEnsemble* ens, const TimeGrid& grid) {
  return convolve_impl(LagTable::from(k, grid), which, g, mode, ens, grid);
}

std::vector<double> moment_profile(const StateEnsemble& x, double p) {
  if (x.n_paths == 0) throw std::invalid_argument("moment_profile: empty ensemble");
  const std::size_t M = x.n_steps + 1;
  par::OrderedSum acc(x.n_paths, M);
  par::for_chunks(x.n_paths, [&](std::size_t b, std::size_t e, std::size_t c) {
    double* s = acc.part(c);
    for (std::size_t path = b; path < e; ++path)
      for (std::size_t m = 0; m < M; ++m) {
        const double r = std::sqrt(la::sqnorm({x.at(path, m), x.n}));
        s[m] += std::pow(r, p);
      }
  });
  auto tot = acc.total();
  for (double& v : tot) v /= static_cast<double>(x.n_paths);
  return tot;
}

double cnorm(const StateEnsemble& x, double p) {
  if (!(p >= 2.0)) throw std::invalid_argument("cnorm: p must be >= 2");
  double best = 0.0;
  for (double v : moment_profile(x, p)) best = std::max(best, std::pow(v, 1.0 / p));
  return best;
}

}  // namespace volterra
