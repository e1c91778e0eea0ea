#include "volterra/bsee.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "volterra/linalg.hpp"
#include "volterra/parallel.hpp"

namespace volterra::bsee {

using kernels::Which;

ThetaGrid ThetaGrid::from(const kernels::DiscreteLaplaceKernel& k) {
  k.validate();
  ThetaGrid g;
  g.nodes = k.nodes;
  g.weights = k.weights;
  g.n = k.n;
  g.alpha = k.alpha;
  g.r.resize(k.size());
  for (std::size_t i = 0; i < k.size(); ++i) g.r[i] = kernels::r_weight(k.nodes[i]);
  return g;
}

double ThetaGrid::varpi(int order, std::size_t site) const {
  if (order == 1) return nodes[site];
  return nodes[site / size()] + nodes[site % size()];
}

double ThetaGrid::nu(int order, std::size_t site) const {
  if (order == 1) return r[site] * weights[site];
  const std::size_t i = site / size(), j = site % size();
  return r[i] * r[j] * weights[i] * weights[j];
}

std::vector<double> GaussianBasis::cov(std::size_t m, double dt) const {
  std::vector<double> c(K * K, 0.0);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t l = 0; l < K; ++l) c[k * K + l] += a[j * K + k] * a[j * K + l] * dt;
  return c;
}

std::vector<double> GaussianBasis::path_values(const BrownianEnsemble& ens, std::size_t path) const {
  std::vector<double> s((n_steps + 1) * K, 0.0);
  if (K == 0) return s;
  std::vector<double> dw(n_steps);
  ens.increments(path, dw);
  for (std::size_t m = 0; m < n_steps; ++m)
    for (std::size_t k = 0; k < K; ++k) s[(m + 1) * K + k] = s[m * K + k] + a[m * K + k] * dw[m];
  return s;
}

void FieldTable::eval(std::size_t path, std::size_t t, std::size_t s, const double* S,
                      double* out) const {
  if (paths > 0) {
    const double* v0 = at_path(path, t, s);
    std::copy(v0, v0 + dim, out);
    return;
  }
  const double* c0 = at(t, s, 0);
  std::copy(c0, c0 + dim, out);
  for (std::size_t k = 0; k < K; ++k) {
    const double* dk = at(t, s, k + 1);
    for (std::size_t r = 0; r < dim; ++r) out[r] += dk[r] * S[k];
  }
}

double FieldTable::max_abs() const { return la::max_abs(v); }

double hnorm(std::span<const double> values, const ThetaGrid& grid, int order, double beta) {
  const std::size_t S = grid.sites(order);
  if (S == 0) return 0.0;
  const std::size_t d = values.size() / S;
  double s = 0.0;
  for (std::size_t i = 0; i < S; ++i)
    s += std::pow(1.0 + grid.varpi(order, i), beta) * grid.nu(order, i) *
         la::sqnorm(values.subspan(i * d, d));
  return std::sqrt(s);
}

namespace {

// E|c + D S|^2 summed over the entry's dim components, given Cov(S).
double entry_sq(const FieldTable& f, std::size_t t, std::size_t s, const std::vector<double>& cov) {
  const std::size_t d = f.dim, K = f.K;
  double e = la::sqnorm({f.at(t, s, 0), d});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t l = 0; l < K; ++l) {
      const double ckl = cov[k * K + l];
      if (ckl == 0.0) continue;
      e += ckl * la::dot({f.at(t, s, k + 1), d}, {f.at(t, s, l + 1), d});
    }
  return e;
}

double slice_sq(const FieldTable& f, std::size_t t, const ThetaGrid& grid, int order, double beta,
                const std::vector<double>& cov) {
  double s = 0.0;
  if (f.paths > 0) {
    for (std::size_t p = 0; p < f.paths; ++p)
      for (std::size_t i = 0; i < f.sites; ++i)
        s += std::pow(1.0 + grid.varpi(order, i), beta) * grid.nu(order, i) *
             la::sqnorm({f.at_path(p, t, i), f.dim});
    return s / static_cast<double>(f.paths);
  }
  for (std::size_t i = 0; i < f.sites; ++i)
    s += std::pow(1.0 + grid.varpi(order, i), beta) * grid.nu(order, i) * entry_sq(f, t, i, cov);
  return s;
}

FieldTable difference(const FieldTable& a, const FieldTable& b) {
  FieldTable d = a;
  for (std::size_t i = 0; i < d.v.size(); ++i) d.v[i] -= b.v[i];
  return d;
}

void check_shape(const FieldTable& f, std::size_t times, std::size_t sites, std::size_t dim,
                 std::size_t K, const char* what) {
  if (f.paths != 0 || f.times != times || f.sites != sites || f.dim != dim || f.K != K)
    throw std::invalid_argument(std::string("bsee: ") + what + " table has the wrong shape");
}

}  // namespace

double expected_hnorm_sq(const FieldTable& f, std::size_t t, const ThetaGrid& grid, int order,
                         double beta, const GaussianBasis& basis, double dt) {
  const auto cov = f.paths > 0 ? std::vector<double>{} : basis.cov(t, dt);
  return slice_sq(f, t, grid, order, beta, cov);
}

BseeSolution trivial_bsee_solve(const FieldTable& terminal, const FieldTable& G,
                                const ThetaGrid& grid, int order, const GaussianBasis& basis,
                                const TimeGrid& tgrid) {
  const std::size_t N = tgrid.n_steps;
  const std::size_t S = grid.sites(order);
  const std::size_t d = terminal.dim;
  const std::size_t K = basis.K;
  const double dt = tgrid.dt();
  if (basis.n_steps != N && K > 0) throw std::invalid_argument("bsee: basis/time grid mismatch");
  check_shape(terminal, 1, S, d, K, "terminal");
  check_shape(G, N, S, d, K, "generator");
  BseeSolution sol{FieldTable(N + 1, S, d, K), FieldTable(N, S, d, K), FieldTable(N, S, d, K)};
  std::copy(terminal.v.begin(), terminal.v.end(), sol.P.at(N, 0, 0));
  const std::size_t cols = K + 1;
  par::for_chunks(S, [&](std::size_t lo, std::size_t hi, std::size_t) {
    for (std::size_t s = lo; s < hi; ++s) {
      const double e = std::exp(-grid.varpi(order, s) * dt);
      for (std::size_t m = N; m-- > 0;) {
        for (std::size_t col = 0; col < cols; ++col) {
          const double* pn = sol.P.at(m + 1, s, col);
          double* c = sol.cont.at(m, s, col);
          double* p = sol.P.at(m, s, col);
          const double* g = G.at(m, s, col);
          for (std::size_t r = 0; r < d; ++r) {
            c[r] = e * pn[r];
            p[r] = c[r] + g[r] * dt;
          }
        }
        double* q = sol.Q.at(m, s, 0);
        for (std::size_t k = 0; k < K; ++k) {
          const double ak = basis.a[m * K + k];
          const double* dk = sol.P.at(m + 1, s, k + 1);
          for (std::size_t r = 0; r < d; ++r) q[r] += e * dk[r] * ak;
        }
      }
    }
  });
  return sol;
}

double st_alpha_distance(const BseeSolution& a, const BseeSolution& b, const ThetaGrid& grid,
                         int order, const GaussianBasis& basis, const TimeGrid& tgrid) {
  const std::size_t N = tgrid.n_steps;
  const double dt = tgrid.dt();
  const double al = grid.alpha;
  const FieldTable dP = difference(a.P, b.P);
  const FieldTable dQ = difference(a.Q, b.Q);
  std::vector<double> cov(basis.K * basis.K, 0.0);
  double s = 0.0;
  for (std::size_t m = 0; m < N; ++m) {
    const double w = al == 0.0 ? 1.0 : std::pow(tgrid.T - tgrid.t(m), al);
    s += dt * w * (slice_sq(dP, m, grid, order, 1.0 + al, cov) + slice_sq(dQ, m, grid, order, al, cov));
    // Cov(S_{m+1}) = Cov(S_m) + a_m a_m' dt.
    for (std::size_t k = 0; k < basis.K; ++k)
      for (std::size_t l = 0; l < basis.K; ++l)
        cov[k * basis.K + l] += basis.a[m * basis.K + k] * basis.a[m * basis.K + l] * dt;
  }
  return std::sqrt(s);
}

namespace {

// Symmetrizes an order-2 table in place: entry (i1,i2) and the transpose of (i2,i1).
// Returns the largest pre-symmetrization deviation.
double symmetrize(FieldTable& f, std::size_t nodes, std::size_t n) {
  double worst = 0.0;
  for (std::size_t t = 0; t < f.times; ++t)
    for (std::size_t col = 0; col < f.cols(); ++col)
      for (std::size_t i1 = 0; i1 < nodes; ++i1)
        for (std::size_t i2 = i1; i2 < nodes; ++i2) {
          double* a = f.at(t, i1 * nodes + i2, col);
          double* b = f.at(t, i2 * nodes + i1, col);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) {
              if (i1 == i2 && c < r) continue;
              const double x = a[r * n + c], y = b[c * n + r];
              worst = std::max(worst, std::abs(x - y));
              const double mval = 0.5 * (x + y);
              a[r * n + c] = mval;
              b[c * n + r] = mval;
            }
        }
  return worst;
}

}  // namespace

PicardResult picard_bsee_solve(const FieldTable& terminal, const GeneratorMap& gen,
                               const ThetaGrid& grid, int order, const GaussianBasis& basis,
                               const TimeGrid& tgrid, PicardOptions opts) {
  const std::size_t N = tgrid.n_steps;
  const std::size_t S = grid.sites(order);
  const std::size_t d = terminal.dim;
  const std::size_t K = basis.K;
  PicardResult res;
  FieldTable G(N, S, d, K);
  auto sym = [&](BseeSolution& s) {
    if (!(opts.symmetrize && order == 2)) return;
    const double scale = std::max(1.0, s.P.max_abs());
    double worst = symmetrize(s.P, grid.size(), grid.n);
    worst = std::max(worst, symmetrize(s.cont, grid.size(), grid.n));
    worst = std::max(worst, symmetrize(s.Q, grid.size(), grid.n));
    res.max_asymmetry = std::max(res.max_asymmetry, worst / scale);
    if (worst > opts.symmetry_tol * scale)
      throw std::runtime_error("bsee: second-order iterate asymmetry " + std::to_string(worst / scale) +
                               " exceeds tolerance");
  };
  {
    const FieldTable zc(N, S, d, K), zq(N, S, d, K);
    gen(zc, zq, G);
  }
  BseeSolution cur = trivial_bsee_solve(terminal, G, grid, order, basis, tgrid);
  sym(cur);
  int rising = 0;
  for (std::size_t it = 1; it <= opts.max_iter; ++it) {
    std::fill(G.v.begin(), G.v.end(), 0.0);
    gen(cur.cont, cur.Q, G);
    BseeSolution next = trivial_bsee_solve(terminal, G, grid, order, basis, tgrid);
    sym(next);
    const double dist = st_alpha_distance(next, cur, grid, order, basis, tgrid);
    if (!res.distances.empty() && dist >= res.distances.back() && dist > 0.0)
      ++rising;
    else
      rising = 0;
    res.distances.push_back(dist);
    cur = std::move(next);
    if (dist < opts.tol) {
      res.iterations = it;
      res.sol = std::move(cur);
      return res;
    }
    if (rising >= 3)
      throw std::runtime_error("bsee: Picard iteration is not contracting (distance " +
                               std::to_string(dist) + " after " + std::to_string(it) + " iterations)");
  }
  throw std::runtime_error("bsee: Picard iteration did not converge within max_iter (last distance " +
                           std::to_string(res.distances.back()) + ")");
}

std::string to_string(SolvePath p) {
  switch (p) {
    case SolvePath::deterministic: return "deterministic";
    case SolvePath::gaussian: return "gaussian";
    case SolvePath::lsmc: return "lsmc";
  }
  return "unknown";
}

namespace {

struct Probe {
  DerivTables ref;
  bool all_equal = true;       // every used table agrees across paths
  bool f_equal = true;         // f_x (and f_xx) agree across paths
  bool hxx_equal = true;       // h_xx agrees across paths
  bool dynamics_zero = true;   // b_x, sigma_x (and second derivatives) vanish everywhere
};

bool close(double a, double b) { return std::abs(a - b) <= 1e-12 * (1.0 + std::abs(b)); }

DerivTables tables_on_path(const CoefficientSet& c, const ControlPath& u, const StateEnsemble& x,
                           const TimeGrid& tg, std::size_t path, int order) {
  const std::size_t n = c.n(), N = tg.n_steps;
  DerivTables d;
  d.bx.resize(N * n * n);
  d.sx.resize(N * n * n);
  d.fx.resize(N * n);
  if (order == 2) {
    d.bxx.resize(N * n * n * n);
    d.sxx.resize(N * n * n * n);
    d.fxx.resize(N * n * n);
  }
  for (std::size_t m = 0; m < N; ++m) {
    const double t = tg.t(m);
    const double* um = u.at(path, m);
    const double* xm = x.at(path, m);
    c.b_x(t, um, xm, d.bx.data() + m * n * n);
    c.sigma_x(t, um, xm, d.sx.data() + m * n * n);
    c.f_x(t, um, xm, d.fx.data() + m * n);
    if (order == 2) {
      c.b_xx(t, um, xm, d.bxx.data() + m * n * n * n);
      c.sigma_xx(t, um, xm, d.sxx.data() + m * n * n * n);
      c.f_xx(t, um, xm, d.fxx.data() + m * n * n);
    }
  }
  d.hx.resize(n);
  d.hxx.resize(n * n);
  c.h_x(x.at(path, N), d.hx.data());
  c.h_xx(x.at(path, N), d.hxx.data());
  return d;
}

bool equal(const std::vector<double>& a, const std::vector<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!close(a[i], b[i])) return false;
  return true;
}

bool zero(const std::vector<double>& a) { return la::max_abs(a) == 0.0; }

Probe probe(const CoefficientSet& c, const ControlPath& u, const StateEnsemble& x,
            const TimeGrid& tg, int order) {
  Probe p;
  p.ref = tables_on_path(c, u, x, tg, 0, order);
  p.dynamics_zero = zero(p.ref.bx) && zero(p.ref.sx) && zero(p.ref.bxx) && zero(p.ref.sxx);
  for (std::size_t path = 1; path < x.n_paths; ++path) {
    const DerivTables d = tables_on_path(c, u, x, tg, path, order);
    const bool dyn = equal(d.bx, p.ref.bx) && equal(d.sx, p.ref.sx) && equal(d.bxx, p.ref.bxx) &&
                     equal(d.sxx, p.ref.sxx);
    const bool f = equal(d.fx, p.ref.fx) && equal(d.fxx, p.ref.fxx);
    const bool hxx = equal(d.hxx, p.ref.hxx);
    const bool hx = equal(d.hx, p.ref.hx);
    p.dynamics_zero = p.dynamics_zero && zero(d.bx) && zero(d.sx) && zero(d.bxx) && zero(d.sxx);
    p.f_equal = p.f_equal && f;
    p.hxx_equal = p.hxx_equal && hxx;
    p.all_equal = p.all_equal && dyn && f && hxx && hx;
  }
  return p;
}

}  // namespace

SolvePath select_solve_path(const CoefficientSet& c, const ControlPath& u_hat,
                            const StateEnsemble& x_hat, const TimeGrid& tgrid, int order,
                            bool allow_lsmc, std::string* diagnostic) {
  const Probe p = probe(c, u_hat, x_hat, tgrid, order);
  if (p.all_equal) return SolvePath::deterministic;
  if (p.dynamics_zero && p.f_equal && p.hxx_equal && u_hat.deterministic()) return SolvePath::gaussian;
  std::string why = "coefficient structure of '" + c.name() + "' (tags: linear_in_state=" +
                    std::to_string(c.tags.linear_in_state) + ", state_free=" +
                    std::to_string(c.tags.state_free) + ", control_affine=" +
                    std::to_string(c.tags.control_affine) + ")";
  if (!p.dynamics_zero) why += " has random b_x/sigma_x along X-hat";
  if (!p.f_equal) why += "; f-derivatives are random";
  if (!p.hxx_equal) why += "; h_x is not affine";
  if (!u_hat.deterministic()) why += "; control is random";
  if (diagnostic) *diagnostic = why;
  if (allow_lsmc && order == 1) return SolvePath::lsmc;
  throw std::invalid_argument("adjoint: no supported solve path: " + why +
                              (order == 2 ? " (LSMC covers first order only)" : " (LSMC not enabled)"));
}

namespace {

// Contractions of a first-order affine slice: out_col = sum_i w_i M(i)' f(m, i, col).
void contract1(const kernels::DiscreteLaplaceKernel& k, Which w, const FieldTable& f, std::size_t m,
               std::size_t col, double* out) {
  const std::size_t n = k.n;
  std::fill(out, out + n, 0.0);
  for (std::size_t i = 0; i < k.size(); ++i) la::gemv_t_acc(n, k.weights[i], k.m(w, i), f.at(m, i, col), out);
}

struct Contractions2 {
  std::vector<double> Ab, Bb, As, Bs;  // nodes x n x n
  std::vector<double> C, Cb, Cbs;      // n x n
};

void contract2(const kernels::DiscreteLaplaceKernel& k, const FieldTable& cont, const FieldTable& Q,
               std::size_t m, std::size_t col, Contractions2& out) {
  const std::size_t n = k.n, nn = n * n, L = k.size();
  out.Ab.assign(L * nn, 0.0);
  out.Bb.assign(L * nn, 0.0);
  out.As.assign(L * nn, 0.0);
  out.Bs.assign(L * nn, 0.0);
  out.C.assign(nn, 0.0);
  out.Cb.assign(nn, 0.0);
  out.Cbs.assign(nn, 0.0);
  std::vector<double> Ss(L * nn, 0.0);  // mu[M_s' Pc(., th2)]
  std::vector<double> Sq(L * nn, 0.0);  // mu[M_b' Q(., th2)]
  for (std::size_t i1 = 0; i1 < L; ++i1)
    for (std::size_t i2 = 0; i2 < L; ++i2) {
      const std::size_t s = i1 * L + i2;
      const double* pc = cont.at(m, s, col);
      const double* q = Q.at(m, s, col);
      la::gemm_acc(n, k.weights[i1], k.m(Which::b, i1), true, pc, false, out.Ab.data() + i2 * nn);
      la::gemm_acc(n, k.weights[i2], pc, false, k.m(Which::b, i2), false, out.Bb.data() + i1 * nn);
      la::gemm_acc(n, k.weights[i1], k.m(Which::sigma, i1), true, q, false, out.As.data() + i2 * nn);
      la::gemm_acc(n, k.weights[i2], q, false, k.m(Which::sigma, i2), false, out.Bs.data() + i1 * nn);
      la::gemm_acc(n, k.weights[i1], k.m(Which::sigma, i1), true, pc, false, Ss.data() + i2 * nn);
      la::gemm_acc(n, k.weights[i1], k.m(Which::b, i1), true, q, false, Sq.data() + i2 * nn);
    }
  for (std::size_t i2 = 0; i2 < L; ++i2) {
    la::gemm_acc(n, k.weights[i2], Ss.data() + i2 * nn, false, k.m(Which::sigma, i2), false, out.C.data());
    la::gemm_acc(n, k.weights[i2], out.Ab.data() + i2 * nn, false, k.m(Which::b, i2), false, out.Cb.data());
    la::gemm_acc(n, k.weights[i2], Sq.data() + i2 * nn, false, k.m(Which::sigma, i2), false, out.Cbs.data());
  }
}

std::vector<double> deterministic_mean_terminal(const CoefficientSet& c, const StateEnsemble& x_hat,
                                                const GaussianBasis& basis, const BrownianEnsemble& ens) {
  // X_N = m_N + S_N on every path, so m_N = X_N - S_N on the reference path.
  const std::size_t n = c.n(), N = basis.n_steps;
  const auto S = basis.path_values(ens, 0);
  std::vector<double> mN(x_hat.at(0, N), x_hat.at(0, N) + n);
  for (std::size_t i = 0; i < n; ++i) mN[i] -= S[N * basis.K + i];
  return mN;
}

AdjointSolution first_lsmc(const CoefficientSet& c, const ControlPath& u_hat, const StateEnsemble& x_hat,
                           const kernels::DiscreteLaplaceKernel& k, std::span<const double> xi,
                           const BrownianEnsemble& ens, const AdjointOptions& opts, AdjointSolution adj) {
  if (opts.lsmc_degree != 1) throw std::invalid_argument("adjoint LSMC: only degree-1 lift bases are supported");
  const std::size_t n = c.n(), N = adj.tgrid.n_steps, P = ens.n_paths(), L = k.size();
  if (static_cast<double>(P) * static_cast<double>(N + 1) * static_cast<double>(L * n) > 5e7)
    throw std::invalid_argument("adjoint LSMC: paths x steps x nodes too large for per-path tables");
  const double dt = adj.tgrid.dt();
  const auto lifted = simulate_lift(c, u_hat, k, xi, ens);
  const LiftEnsemble& Y = lifted.first;
  adj.p = FieldTable(N + 1, L, n, 0, P);
  adj.q = FieldTable(N, L, n, 0, P);
  adj.cont = FieldTable(N, L, n, 0, P);
  adj.pb = FieldTable(N, 1, n, 0, P);
  adj.qs = FieldTable(N, 1, n, 0, P);
  std::vector<double> hx(n);
  for (std::size_t p = 0; p < P; ++p) {
    c.h_x(x_hat.at(p, N), hx.data());
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t r = 0; r < n; ++r) adj.p.at_path(p, N, i)[r] = -hx[r];
  }
  std::vector<double> decay(L);
  for (std::size_t i = 0; i < L; ++i) decay[i] = std::exp(-k.nodes[i] * dt);
  std::vector<double> dws(P * N);
  for (std::size_t p = 0; p < P; ++p) ens.increments(p, {dws.data() + p * N, N});
  const std::size_t B = 1 + L * n, R = L * n;
  Eigen::MatrixXd X(P, B), Yc(P, R), Yq(P, R);
  for (std::size_t m = N; m-- > 0;) {
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t r = 0; r < n; ++r) {
          const double v = decay[i] * adj.p.at_path(p, m + 1, i)[r];
          Yc(p, i * n + r) = v;
          Yq(p, i * n + r) = v * dws[p * N + m] / dt;
        }
    Eigen::MatrixXd fc, fq;
    if (m == 0) {
      fc = Yc.colwise().mean().replicate(P, 1);
      fq = Yq.colwise().mean().replicate(P, 1);
    } else {
      for (std::size_t p = 0; p < P; ++p) {
        X(p, 0) = 1.0;
        const double* y = Y.at(p, m);
        for (std::size_t j = 0; j < L * n; ++j) X(p, 1 + j) = y[j];
      }
      // Standardize the lift columns; the fitted values are the projection either way.
      for (std::size_t j = 1; j < B; ++j) {
        const double mu = X.col(j).mean();
        const double sd = std::sqrt((X.col(j).array() - mu).square().mean());
        if (sd > 0)
          X.col(j) = ((X.col(j).array() - mu) / sd).matrix();
        else
          X.col(j).setZero();
      }
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
      qr.setThreshold(1e-10);
      fc = X * qr.solve(Yc);
      fq = X * qr.solve(Yq);
    }
    std::vector<double> bx(n * n), sx(n * n), fx(n), pb(n), qs(n);
    for (std::size_t p = 0; p < P; ++p) {
      const double t = adj.tgrid.t(m);
      c.b_x(t, u_hat.at(p, m), x_hat.at(p, m), bx.data());
      c.sigma_x(t, u_hat.at(p, m), x_hat.at(p, m), sx.data());
      c.f_x(t, u_hat.at(p, m), x_hat.at(p, m), fx.data());
      std::fill(pb.begin(), pb.end(), 0.0);
      std::fill(qs.begin(), qs.end(), 0.0);
      for (std::size_t i = 0; i < L; ++i) {
        double* cv = adj.cont.at_path(p, m, i);
        double* qv = adj.q.at_path(p, m, i);
        for (std::size_t r = 0; r < n; ++r) {
          cv[r] = fc(p, i * n + r);
          qv[r] = fq(p, i * n + r);
        }
        la::gemv_t_acc(n, k.weights[i], k.m(Which::b, i), cv, pb.data());
        la::gemv_t_acc(n, k.weights[i], k.m(Which::sigma, i), qv, qs.data());
      }
      std::copy(pb.begin(), pb.end(), adj.pb.at_path(p, m, 0));
      std::copy(qs.begin(), qs.end(), adj.qs.at_path(p, m, 0));
      std::vector<double> g(n, 0.0);
      la::gemv_t_acc(n, 1.0, bx.data(), pb.data(), g.data());
      la::gemv_t_acc(n, 1.0, sx.data(), qs.data(), g.data());
      for (std::size_t r = 0; r < n; ++r) g[r] -= fx[r];
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t r = 0; r < n; ++r)
          adj.p.at_path(p, m, i)[r] = adj.cont.at_path(p, m, i)[r] + g[r] * dt;
    }
  }
  // The discrete generator reads only the continuation, so one backward sweep is the fixed point.
  adj.first_iterations = 1;
  return adj;
}

}  // namespace

AdjointSolution assemble_first_adjoint(const CoefficientSet& c, const ControlPath& u_hat,
                                       const StateEnsemble& x_hat,
                                       const kernels::DiscreteLaplaceKernel& k,
                                       std::span<const double> xi, const BrownianEnsemble& ens,
                                       AdjointOptions opts) {
  const TimeGrid& tg = ens.grid();
  const std::size_t n = c.n(), N = tg.n_steps, L = k.size();
  if (k.n != n) throw std::invalid_argument("adjoint: kernel and coefficient dimensions differ");
  if (x_hat.n_paths != ens.n_paths() || x_hat.n_steps != N)
    throw std::invalid_argument("adjoint: state ensemble does not match the Brownian ensemble");
  AdjointSolution adj;
  adj.grid = ThetaGrid::from(k);
  adj.tgrid = tg;
  adj.n = n;
  adj.path = select_solve_path(c, u_hat, x_hat, tg, 1, opts.allow_lsmc);
  adj.basis.n_steps = N;
  if (adj.path == SolvePath::lsmc) return first_lsmc(c, u_hat, x_hat, k, xi, ens, opts, std::move(adj));

  adj.deriv = tables_on_path(c, u_hat, x_hat, tg, 0, 1);
  FieldTable terminal;
  if (adj.path == SolvePath::gaussian) {
    // S_N = X_N - m_N with integrands a_j = K_sigma(T - t_j) sigma_j.
    adj.basis.K = n;
    adj.basis.a.assign(N * n, 0.0);
    std::vector<double> ks(n * n), sv(n);
    for (std::size_t j = 0; j < N; ++j) {
      kernels::kernel_eval(k, Which::sigma, tg.T - tg.t(j), ks);
      c.sigma(tg.t(j), u_hat.at(0, j), x_hat.at(0, j), sv.data());
      la::gemv_acc(n, 1.0, ks.data(), sv.data(), adj.basis.a.data() + j * n);
    }
    const auto mN = deterministic_mean_terminal(c, x_hat, adj.basis, ens);
    std::vector<double> hx(n);
    c.h_x(mN.data(), hx.data());
    adj.deriv.hx = hx;
    terminal = FieldTable(1, L, n, n);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t r = 0; r < n; ++r) terminal.at(0, i, 0)[r] = -hx[r];
      for (std::size_t kk = 0; kk < n; ++kk)
        for (std::size_t r = 0; r < n; ++r) terminal.at(0, i, kk + 1)[r] = -adj.deriv.hxx[r * n + kk];
    }
  } else {
    terminal = FieldTable(1, L, n, 0);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t r = 0; r < n; ++r) terminal.at(0, i, 0)[r] = -adj.deriv.hx[r];
  }
  const std::size_t K = adj.basis.K;
  const DerivTables& d = adj.deriv;
  GeneratorMap gen = [&](const FieldTable& cont, const FieldTable& Q, FieldTable& G) {
    std::vector<double> pb(n), qs(n), g(n);
    for (std::size_t m = 0; m < N; ++m)
      for (std::size_t col = 0; col <= K; ++col) {
        contract1(k, Which::b, cont, m, col, pb.data());
        contract1(k, Which::sigma, Q, m, col, qs.data());
        std::fill(g.begin(), g.end(), 0.0);
        la::gemv_t_acc(n, 1.0, d.bx.data() + m * n * n, pb.data(), g.data());
        la::gemv_t_acc(n, 1.0, d.sx.data() + m * n * n, qs.data(), g.data());
        if (col == 0)
          for (std::size_t r = 0; r < n; ++r) g[r] -= d.fx[m * n + r];
        for (std::size_t i = 0; i < L; ++i) std::copy(g.begin(), g.end(), G.at(m, i, col));
      }
  };
  PicardResult pr = picard_bsee_solve(terminal, gen, adj.grid, 1, adj.basis, tg, opts.picard);
  adj.p = std::move(pr.sol.P);
  adj.q = std::move(pr.sol.Q);
  adj.cont = std::move(pr.sol.cont);
  adj.first_distances = pr.distances;
  adj.first_iterations = pr.iterations;
  adj.pb = FieldTable(N, 1, n, K);
  adj.qs = FieldTable(N, 1, n, K);
  for (std::size_t m = 0; m < N; ++m)
    for (std::size_t col = 0; col <= K; ++col) {
      contract1(k, Which::b, adj.cont, m, col, adj.pb.at(m, 0, col));
      contract1(k, Which::sigma, adj.q, m, col, adj.qs.at(m, 0, col));
    }
  return adj;
}

void assemble_second_adjoint(const CoefficientSet& c, AdjointSolution& adj,
                             const kernels::DiscreteLaplaceKernel& k, const ControlPath& u_hat,
                             const StateEnsemble& x_hat, AdjointOptions opts) {
  if (adj.path == SolvePath::lsmc)
    throw std::invalid_argument("second-order adjoint: the LSMC path covers first order only");
  const std::size_t n = c.n(), nn = n * n, N = adj.tgrid.n_steps, L = k.size();
  // Re-probe with the second-order tables; the path may only stay the same.
  const SolvePath sp = select_solve_path(c, u_hat, x_hat, adj.tgrid, 2, false);
  if (sp != adj.path)
    throw std::invalid_argument("second-order adjoint: second derivatives are random along X-hat (path " +
                                to_string(sp) + " vs first order " + to_string(adj.path) + ")");
  const DerivTables full = tables_on_path(c, u_hat, x_hat, adj.tgrid, 0, 2);
  adj.deriv.bxx = full.bxx;
  adj.deriv.sxx = full.sxx;
  adj.deriv.fxx = full.fxx;
  adj.deriv.hxx = full.hxx;
  const DerivTables& d = adj.deriv;
  const std::size_t K = adj.basis.K;
  FieldTable terminal(1, L * L, nn, K);
  for (std::size_t s = 0; s < L * L; ++s)
    for (std::size_t r = 0; r < nn; ++r) terminal.at(0, s, 0)[r] = -d.hxx[r];

  // H_xx = sum_i pb_i b^i_xx + sum_i qs_i sigma^i_xx - f_xx, per column.
  FieldTable Hxx(N, 1, nn, K);
  for (std::size_t m = 0; m < N; ++m)
    for (std::size_t col = 0; col <= K; ++col) {
      double* h = Hxx.at(m, 0, col);
      const double* pb = adj.pb.at(m, 0, col);
      const double* qs = adj.qs.at(m, 0, col);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < nn; ++r)
          h[r] += pb[i] * d.bxx[m * n * nn + i * nn + r] + qs[i] * d.sxx[m * n * nn + i * nn + r];
      if (col == 0)
        for (std::size_t r = 0; r < nn; ++r) h[r] -= d.fxx[m * nn + r];
    }

  auto generator_slice = [&](const Contractions2& ct, std::size_t m, std::size_t col, FieldTable& G) {
    const double* bx = d.bx.data() + m * nn;
    const double* sx = d.sx.data() + m * nn;
    std::vector<double> common(nn, 0.0), tmp(nn, 0.0), rowpart(L * nn, 0.0), colpart(L * nn, 0.0);
    // sigma_x' C sigma_x + H_xx
    la::gemm_acc(n, 1.0, ct.C.data(), false, sx, false, tmp.data());
    la::gemm_acc(n, 1.0, sx, true, tmp.data(), false, common.data());
    la::axpy(1.0, {Hxx.at(m, 0, col), nn}, common);
    for (std::size_t i = 0; i < L; ++i) {
      // depends on th2 = i: b_x' Ab(i) + s_x' As(i); on th1 = i: Bb(i) b_x + Bs(i) s_x
      la::gemm_acc(n, 1.0, bx, true, ct.Ab.data() + i * nn, false, colpart.data() + i * nn);
      la::gemm_acc(n, 1.0, sx, true, ct.As.data() + i * nn, false, colpart.data() + i * nn);
      la::gemm_acc(n, 1.0, ct.Bb.data() + i * nn, false, bx, false, rowpart.data() + i * nn);
      la::gemm_acc(n, 1.0, ct.Bs.data() + i * nn, false, sx, false, rowpart.data() + i * nn);
    }
    for (std::size_t i1 = 0; i1 < L; ++i1)
      for (std::size_t i2 = 0; i2 < L; ++i2) {
        double* g = G.at(m, i1 * L + i2, col);
        for (std::size_t r = 0; r < nn; ++r)
          g[r] = common[r] + colpart[i2 * nn + r] + rowpart[i1 * nn + r];
      }
  };

  GeneratorMap gen = [&](const FieldTable& cont, const FieldTable& Q, FieldTable& G) {
    par::for_chunks(N, [&](std::size_t lo, std::size_t hi, std::size_t) {
      Contractions2 ct;
      for (std::size_t m = lo; m < hi; ++m)
        for (std::size_t col = 0; col <= K; ++col) {
          contract2(k, cont, Q, m, col, ct);
          generator_slice(ct, m, col, G);
        }
    });
  };
  PicardOptions po = opts.picard;
  po.symmetrize = true;
  PicardResult pr = picard_bsee_solve(terminal, gen, adj.grid, 2, adj.basis, adj.tgrid, po);
  adj.P = std::move(pr.sol.P);
  adj.Q = std::move(pr.sol.Q);
  adj.Pcont = std::move(pr.sol.cont);
  adj.second_distances = pr.distances;
  adj.second_iterations = pr.iterations;
  adj.max_asymmetry = pr.max_asymmetry;
  adj.C = FieldTable(N, 1, nn, K);
  adj.Cb = FieldTable(N, 1, nn, K);
  adj.Cbs = FieldTable(N, 1, nn, K);
  adj.Ab = FieldTable(N, L, nn, K);
  adj.Bb = FieldTable(N, L, nn, K);
  adj.As = FieldTable(N, L, nn, K);
  adj.Bs = FieldTable(N, L, nn, K);
  Contractions2 ct;
  for (std::size_t m = 0; m < N; ++m)
    for (std::size_t col = 0; col <= K; ++col) {
      contract2(k, adj.Pcont, adj.Q, m, col, ct);
      std::copy(ct.C.begin(), ct.C.end(), adj.C.at(m, 0, col));
      std::copy(ct.Cb.begin(), ct.Cb.end(), adj.Cb.at(m, 0, col));
      std::copy(ct.Cbs.begin(), ct.Cbs.end(), adj.Cbs.at(m, 0, col));
      for (std::size_t i = 0; i < L; ++i) {
        std::copy(ct.Ab.begin() + i * nn, ct.Ab.begin() + (i + 1) * nn, adj.Ab.at(m, i, col));
        std::copy(ct.Bb.begin() + i * nn, ct.Bb.begin() + (i + 1) * nn, adj.Bb.at(m, i, col));
        std::copy(ct.As.begin() + i * nn, ct.As.begin() + (i + 1) * nn, adj.As.at(m, i, col));
        std::copy(ct.Bs.begin() + i * nn, ct.Bs.begin() + (i + 1) * nn, adj.Bs.at(m, i, col));
      }
    }
  adj.has_second = true;
}

EstimateTerms estimate_terms(const AdjointSolution& adj, int order) {
  const FieldTable& p = order == 1 ? adj.p : adj.P;
  const FieldTable& q = order == 1 ? adj.q : adj.Q;
  const std::size_t N = adj.tgrid.n_steps;
  const double dt = adj.tgrid.dt(), al = adj.grid.alpha;
  EstimateTerms e;
  for (std::size_t m = 0; m < N; ++m) {
    const double w = al == 0.0 ? 1.0 : std::pow(adj.tgrid.T - adj.tgrid.t(m), al);
    e.p_term += dt * w * expected_hnorm_sq(p, m, adj.grid, order, 1.0 + al, adj.basis, dt);
    e.q_term += dt * w * expected_hnorm_sq(q, m, adj.grid, order, al, adj.basis, dt);
  }
  return e;
}

}  // namespace volterra::bsee
