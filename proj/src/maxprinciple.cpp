#include "volterra/maxprinciple.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "volterra/linalg.hpp"
#include "volterra/parallel.hpp"

namespace volterra::mp {

double hamiltonian(const CoefficientSet& c, double t, const double* u, const double* x,
                   const double* p, const double* q) {
  const std::size_t n = c.n();
  std::vector<double> b(n), s(n);
  c.b(t, u, x, b.data());
  c.sigma(t, u, x, s.data());
  return la::dot({p, n}, b) + la::dot({q, n}, s) - c.f(t, u, x);
}

namespace {

void fill_at(const bsee::AdjointSolution& adj, std::size_t path, std::size_t m, const double* S,
             AdjointAt& out) {
  const std::size_t n = adj.n, nn = n * n, L = adj.grid.size();
  out.pb.resize(n);
  out.qs.resize(n);
  adj.pb.eval(path, m, 0, S, out.pb.data());
  adj.qs.eval(path, m, 0, S, out.qs.data());
  if (!adj.has_second) return;
  out.C.resize(nn);
  out.Cb.resize(nn);
  out.Cbs.resize(nn);
  out.Ab.resize(L * nn);
  out.Bb.resize(L * nn);
  out.As.resize(L * nn);
  out.Bs.resize(L * nn);
  adj.C.eval(path, m, 0, S, out.C.data());
  adj.Cb.eval(path, m, 0, S, out.Cb.data());
  adj.Cbs.eval(path, m, 0, S, out.Cbs.data());
  for (std::size_t i = 0; i < L; ++i) {
    adj.Ab.eval(path, m, i, S, out.Ab.data() + i * nn);
    adj.Bb.eval(path, m, i, S, out.Bb.data() + i * nn);
    adj.As.eval(path, m, i, S, out.As.data() + i * nn);
    adj.Bs.eval(path, m, i, S, out.Bs.data() + i * nn);
  }
}

const double* S_row(const bsee::AdjointSolution& adj, const std::vector<double>& S, std::size_t m) {
  return adj.basis.K == 0 ? nullptr : S.data() + m * adj.basis.K;
}

std::size_t grid_index(const TimeGrid& g, double t) {
  const double x = t / g.dt();
  const double r = std::round(x);
  if (std::abs(x - r) > 1e-9 || r < 0 || r >= static_cast<double>(g.n_steps))
    throw std::invalid_argument("hfunction: t must be a grid time before T");
  return static_cast<std::size_t>(r);
}

// Lift convolver that records the factor state after every push.
class RecordingLift {
 public:
  RecordingLift(const kernels::DiscreteLaplaceKernel& k, double dt, std::vector<double>& states)
      : inner_(k, dt), states_(&states), width_(k.size() * k.n) {}
  void reset() {
    inner_.reset();
    std::fill(states_->begin(), states_->begin() + width_, 0.0);
  }
  std::size_t count() const { return inner_.count(); }
  void push(const double* d, const double* s) {
    inner_.push(d, s);
    const auto st = inner_.state();
    std::copy(st.begin(), st.end(), states_->begin() + inner_.count() * width_);
  }
  void advance_zero(std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) {
      inner_.advance_zero(1);
      const auto st = inner_.state();
      std::copy(st.begin(), st.end(), states_->begin() + inner_.count() * width_);
    }
  }
  void value(double* out) const { inner_.value(out); }

 private:
  LiftConvolver inner_;
  std::vector<double>* states_;
  std::size_t width_;
};

void check_bundle(const VariationBundle& b, const bsee::AdjointSolution& adj, const BrownianEnsemble& ens) {
  if (b.x_hat.n_paths != ens.n_paths() || b.x1.n_paths != ens.n_paths() ||
      b.x_hat.n_steps != ens.grid().n_steps || adj.tgrid.n_steps != ens.grid().n_steps ||
      std::abs(adj.tgrid.T - ens.grid().T) > 0.0)
    throw std::invalid_argument("duality: ensembles, bundle and adjoints do not share one grid");
  if (adj.pb.paths > 0 && adj.pb.paths != ens.n_paths())
    throw std::invalid_argument("duality: per-path adjoints were built on a different ensemble");
}

struct Acc {
  explicit Acc(std::size_t paths, std::size_t q) : sums(paths, 2 * q), q_(q), n_(paths) {}
  void add(std::size_t chunk, std::size_t i, double v) {
    double* s = sums.part(chunk);
    s[2 * i] += v;
    s[2 * i + 1] += v * v;
  }
  stats::MeanSE get(std::size_t i) const {
    const auto t = sums.total();
    return stats::mean_se_from_sums(t[2 * i], t[2 * i + 1], n_);
  }
  par::OrderedSum sums;
  std::size_t q_, n_;
};

}  // namespace

AdjointAt adjoint_at(const bsee::AdjointSolution& adj, std::size_t path, std::size_t m,
                     const std::vector<double>& S) {
  AdjointAt a;
  fill_at(adj, path, m, S_row(adj, S, m), a);
  return a;
}

double hfunction(const CoefficientSet& c, const bsee::AdjointSolution& adj, double t, const double* v,
                 const double* x_hat, const double* u_hat_t, std::size_t path,
                 const std::vector<double>& S) {
  const std::size_t m = grid_index(adj.tgrid, t);
  if (adj.basis.K > 0 && S.size() < (m + 1) * adj.basis.K)
    throw std::invalid_argument("hfunction: Gaussian adjoints need the path's S values");
  AdjointAt a;
  fill_at(adj, path, m, S_row(adj, S, m), a);
  const std::size_t n = c.n();
  double h = hamiltonian(c, t, v, x_hat, a.pb.data(), a.qs.data());
  std::vector<double> sh(n), sv(n);
  c.sigma(t, u_hat_t, x_hat, sh.data());
  c.sigma(t, v, x_hat, sv.data());
  for (std::size_t i = 0; i < n; ++i) sh[i] -= sv[i];
  if (la::max_abs(sh) == 0.0) return h;
  if (!adj.has_second) throw std::invalid_argument("hfunction: controlled diffusion needs the second-order adjoint");
  return h + 0.5 * la::quad(n, a.C.data(), sh.data(), sh.data());
}

DualityResult duality_residual_first(const CoefficientSet& c, const VariationBundle& bundle,
                                     const bsee::AdjointSolution& adj, const BrownianEnsemble& ens) {
  check_bundle(bundle, adj, ens);
  const std::size_t n = c.n(), nn = n * n, N = ens.grid().n_steps;
  const double dt = ens.grid().dt();
  const TimeGrid& g = ens.grid();
  Acc acc(ens.n_paths(), 3);
  par::for_chunks(ens.n_paths(), [&](std::size_t lo, std::size_t hi, std::size_t ch) {
    AdjointAt a;
    std::vector<double> fx(n), bxx(n * nn), sxx(n * nn), Fb(n), Fs(n), bu(n), bv(n), su(n), sv(n),
        bxu(nn), bxv(nn), sxu(nn), sxv(nn), hx(n);
    for (std::size_t p = lo; p < hi; ++p) {
      const auto S = adj.S_path(ens, p);
      double lhs = 0.0, rhs = 0.0;
      for (std::size_t m = 0; m < N; ++m) {
        const double t = g.t(m);
        const double* xh = bundle.x_hat.at(p, m);
        const double* uh = bundle.u_hat.at(p, m);
        const double* x1 = bundle.x1.at(p, m);
        const double* z = bundle.x12.at(p, m);
        c.f_x(t, uh, xh, fx.data());
        lhs -= dt * la::dot(fx, {z, n});
        c.b_xx(t, uh, xh, bxx.data());
        c.sigma_xx(t, uh, xh, sxx.data());
        for (std::size_t i = 0; i < n; ++i) {
          Fb[i] = 0.5 * la::quad(n, bxx.data() + i * nn, x1, x1);
          Fs[i] = 0.5 * la::quad(n, sxx.data() + i * nn, x1, x1);
        }
        if (bundle.window.contains(m)) {
          const double* v = bundle.u_spiked.at(p, m);
          c.b(t, v, xh, bv.data());
          c.b(t, uh, xh, bu.data());
          c.sigma(t, v, xh, sv.data());
          c.sigma(t, uh, xh, su.data());
          c.b_x(t, v, xh, bxv.data());
          c.b_x(t, uh, xh, bxu.data());
          c.sigma_x(t, v, xh, sxv.data());
          c.sigma_x(t, uh, xh, sxu.data());
          for (std::size_t i = 0; i < nn; ++i) {
            bxv[i] -= bxu[i];
            sxv[i] -= sxu[i];
          }
          for (std::size_t i = 0; i < n; ++i) {
            Fb[i] += bv[i] - bu[i];
            Fs[i] += sv[i] - su[i];
          }
          la::gemv_acc(n, 1.0, bxv.data(), x1, Fb.data());
          la::gemv_acc(n, 1.0, sxv.data(), x1, Fs.data());
        }
        fill_at(adj, p, m, S_row(adj, S, m), a);
        rhs += dt * (la::dot(a.pb, Fb) + la::dot(a.qs, Fs));
      }
      c.h_x(bundle.x_hat.at(p, N), hx.data());
      lhs -= la::dot(hx, {bundle.x12.at(p, N), n});
      acc.add(ch, 0, lhs - rhs);
      acc.add(ch, 1, lhs);
      acc.add(ch, 2, rhs);
    }
  });
  return {acc.get(0), acc.get(1), acc.get(2)};
}

namespace {

// Per-path pieces shared by the second duality and the J^{1,2} representation.
struct SecondPath {
  double lhs = 0.0;        // -X1_N' h_xx X1_N
  double rhs = 0.0;        // sum of expanded increments
  double direct = 0.0;     // J^{1,2} integrand of the path
  double adjoint = 0.0;    // adjoint spike formula
  double corr_d = 0.0;
  double corr_dt = 0.0;
};

SecondPath second_path(const CoefficientSet& c, const VariationBundle& bundle,
                       const bsee::AdjointSolution& adj, const kernels::DiscreteLaplaceKernel& k,
                       const BrownianEnsemble& ens, std::size_t p, std::vector<double>& states,
                       std::vector<double>& x1) {
  const std::size_t n = c.n(), nn = n * n, N = ens.grid().n_steps, L = k.size();
  const TimeGrid& g = ens.grid();
  const double dt = g.dt();
  std::vector<double> dw(N);
  ens.increments(p, dw);
  RecordingLift rec(k, dt, states);
  variational_path(c, bundle.u_hat, bundle.u_spiked, bundle.window, g, dw, p, bundle.x_hat.path(p),
                   std::span<const double>{}, 1, rec, x1, 0);
  const auto S = adj.S_path(ens, p);
  AdjointAt a;
  SecondPath out;
  std::vector<double> bx(nn), sx(nn), bxx(n * nn), sxx(n * nn), fx(n), fxx(nn), Hxx(nn), beta(n),
      gamma(n), db(n), ds(n), bu(n), su(n), bxv(nn), sxv(nn), uAb(n), uBb(n), uAs(n), uBs(n),
      bX(n), sX(n), tmp(n), hx(n), hxx(nn);
  for (std::size_t m = 0; m < N; ++m) {
    const double t = g.t(m);
    const double* xh = bundle.x_hat.at(p, m);
    const double* uh = bundle.u_hat.at(p, m);
    const double* X = x1.data() + m * n;
    const double* z = bundle.x12.at(p, m);
    const double* Y = states.data() + m * L * n;
    fill_at(adj, p, m, S_row(adj, S, m), a);
    c.b_x(t, uh, xh, bx.data());
    c.sigma_x(t, uh, xh, sx.data());
    c.b_xx(t, uh, xh, bxx.data());
    c.sigma_xx(t, uh, xh, sxx.data());
    c.f_x(t, uh, xh, fx.data());
    c.f_xx(t, uh, xh, fxx.data());
    std::fill(Hxx.begin(), Hxx.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < nn; ++r) Hxx[r] += a.pb[i] * bxx[i * nn + r] + a.qs[i] * sxx[i * nn + r];
    for (std::size_t r = 0; r < nn; ++r) Hxx[r] -= fxx[r];
    std::fill(bX.begin(), bX.end(), 0.0);
    std::fill(sX.begin(), sX.end(), 0.0);
    la::gemv_acc(n, 1.0, bx.data(), X, bX.data());
    la::gemv_acc(n, 1.0, sx.data(), X, sX.data());
    const bool in = bundle.window.contains(m);
    std::fill(db.begin(), db.end(), 0.0);
    std::fill(ds.begin(), ds.end(), 0.0);
    double df = 0.0;
    if (in) {
      const double* v = bundle.u_spiked.at(p, m);
      c.b(t, v, xh, db.data());
      c.b(t, uh, xh, bu.data());
      c.sigma(t, v, xh, ds.data());
      c.sigma(t, uh, xh, su.data());
      for (std::size_t i = 0; i < n; ++i) {
        db[i] -= bu[i];
        ds[i] -= su[i];
      }
      df = c.f(t, v, xh) - c.f(t, uh, xh);
      c.b_x(t, v, xh, bxv.data());
      c.sigma_x(t, v, xh, sxv.data());
      for (std::size_t r = 0; r < nn; ++r) {
        bxv[r] -= bx[r];
        sxv[r] -= sx[r];
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      beta[i] = bX[i] + db[i];
      gamma[i] = sX[i] + ds[i];
    }
    // Lift contractions: uAb = sum w Ab(th) Y(th), uBb = sum w Bb(th)' Y(th), same for sigma.
    std::fill(uAb.begin(), uAb.end(), 0.0);
    std::fill(uBb.begin(), uBb.end(), 0.0);
    std::fill(uAs.begin(), uAs.end(), 0.0);
    std::fill(uBs.begin(), uBs.end(), 0.0);
    for (std::size_t i = 0; i < L; ++i) {
      la::gemv_acc(n, k.weights[i], a.Ab.data() + i * nn, Y + i * n, uAb.data());
      la::gemv_t_acc(n, k.weights[i], a.Bb.data() + i * nn, Y + i * n, uBb.data());
      la::gemv_acc(n, k.weights[i], a.As.data() + i * nn, Y + i * n, uAs.data());
      la::gemv_t_acc(n, k.weights[i], a.Bs.data() + i * nn, Y + i * n, uBs.data());
    }
    const double* C = a.C.data();
    const double gy = la::dot(bX, uAb) + la::dot(uBb, bX) + la::quad(n, C, sX.data(), sX.data()) +
                      la::dot(sX, uAs) + la::dot(uBs, sX) + la::quad(n, Hxx.data(), X, X);
    const double dt2 = la::quad(n, a.Cb.data(), beta.data(), beta.data()) +
                       2.0 * la::quad(n, a.Cbs.data(), beta.data(), gamma.data());
    const double incr = la::dot(beta, uAb) + la::dot(uBb, beta) + la::quad(n, C, gamma.data(), gamma.data()) +
                        la::dot(gamma, uAs) + la::dot(uBs, gamma) - gy + dt * dt2;
    out.rhs += dt * incr;
    out.corr_dt += dt * dt * dt2;
    out.direct += dt * (la::dot(fx, {z, n}) + 0.5 * la::quad(n, fxx.data(), X, X));
    if (in) {
      out.direct += dt * df;
      out.adjoint -= dt * (la::dot(a.pb, db) + la::dot(a.qs, ds) - df + 0.5 * la::quad(n, C, ds.data(), ds.data()));
      std::fill(tmp.begin(), tmp.end(), 0.0);
      la::gemv_acc(n, 1.0, bxv.data(), X, tmp.data());
      double cd = la::dot(a.pb, tmp);
      std::fill(tmp.begin(), tmp.end(), 0.0);
      la::gemv_acc(n, 1.0, sxv.data(), X, tmp.data());
      cd += la::dot(a.qs, tmp);
      cd += 0.5 * (la::dot(db, uAb) + la::dot(uBb, db));
      cd += 0.5 * (la::quad(n, C, ds.data(), sX.data()) + la::quad(n, C, sX.data(), ds.data()));
      cd += 0.5 * (la::dot(ds, uAs) + la::dot(uBs, ds));
      out.corr_d += dt * cd;
    }
  }
  const double* XN = x1.data() + N * n;
  c.h_x(bundle.x_hat.at(p, N), hx.data());
  c.h_xx(bundle.x_hat.at(p, N), hxx.data());
  out.lhs = -la::quad(n, hxx.data(), XN, XN);
  out.direct += la::dot(hx, {bundle.x12.at(p, N), n}) + 0.5 * la::quad(n, hxx.data(), XN, XN);
  return out;
}

template <class F>
void for_second_paths(const CoefficientSet& c, const VariationBundle& bundle,
                      const bsee::AdjointSolution& adj, const kernels::DiscreteLaplaceKernel& k,
                      const BrownianEnsemble& ens, F&& f) {
  check_bundle(bundle, adj, ens);
  if (!adj.has_second) throw std::invalid_argument("second duality: second-order adjoint not assembled");
  if (k.size() != adj.grid.size()) throw std::invalid_argument("second duality: kernel does not match adjoints");
  const std::size_t N = ens.grid().n_steps;
  par::for_chunks(ens.n_paths(), [&](std::size_t lo, std::size_t hi, std::size_t ch) {
    std::vector<double> states((N + 1) * k.size() * c.n()), x1((N + 1) * c.n());
    for (std::size_t p = lo; p < hi; ++p) f(ch, second_path(c, bundle, adj, k, ens, p, states, x1));
  });
}

}  // namespace

DualityResult duality_residual_second(const CoefficientSet& c, const VariationBundle& bundle,
                                      const bsee::AdjointSolution& adj,
                                      const kernels::DiscreteLaplaceKernel& k,
                                      const BrownianEnsemble& ens) {
  Acc acc(ens.n_paths(), 3);
  for_second_paths(c, bundle, adj, k, ens, [&](std::size_t ch, const SecondPath& s) {
    acc.add(ch, 0, s.lhs - s.rhs);
    acc.add(ch, 1, s.lhs);
    acc.add(ch, 2, s.rhs);
  });
  return {acc.get(0), acc.get(1), acc.get(2)};
}

J12Result j12_adjoint_representation(const CoefficientSet& c, const VariationBundle& bundle,
                                     const bsee::AdjointSolution& adj,
                                     const kernels::DiscreteLaplaceKernel& k,
                                     const BrownianEnsemble& ens) {
  Acc acc(ens.n_paths(), 7);
  for_second_paths(c, bundle, adj, k, ens, [&](std::size_t ch, const SecondPath& s) {
    acc.add(ch, 0, s.direct);
    acc.add(ch, 1, s.adjoint);
    acc.add(ch, 2, s.direct - s.adjoint);
    acc.add(ch, 3, s.corr_d);
    acc.add(ch, 4, s.corr_dt);
    acc.add(ch, 5, s.direct - (s.adjoint - s.corr_d - 0.5 * s.corr_dt));
    acc.add(ch, 6, s.direct - s.adjoint + 0.5 * s.corr_dt);
  });
  J12Result r;
  r.direct = acc.get(0);
  r.adjoint = acc.get(1);
  r.gap = acc.get(2);
  r.correction_d = acc.get(3);
  r.correction_dt = acc.get(4);
  r.identity = acc.get(5);
  r.gap_continuum = acc.get(6);
  return r;
}

namespace {

bool paths_identical(const StateEnsemble& x) {
  for (std::size_t p = 1; p < x.n_paths; ++p)
    for (std::size_t i = 0; i < (x.n_steps + 1) * x.n; ++i)
      if (x.path(p)[i] != x.path(0)[i]) return false;
  return true;
}

}  // namespace

MPReport check_variational_inequality(const CoefficientSet& c, const ControlPath& u_hat,
                                      const StateEnsemble& x_hat, const bsee::AdjointSolution& adj,
                                      const ControlDomain& U, double tol_margin,
                                      const BrownianEnsemble* ens) {
  const std::size_t n = c.n(), N = adj.tgrid.n_steps, nu = U.size();
  if (U.dim != u_hat.dim) throw std::invalid_argument("mp-check: control dimension mismatch");
  MPReport rep;
  rep.alpha_flag = std::abs(adj.grid.alpha - 1.0 / 3.0) > 1e-12;
  rep.deterministic = adj.path == bsee::SolvePath::deterministic && u_hat.deterministic() && paths_identical(x_hat);
  if (!rep.deterministic && adj.basis.K > 0 && ens == nullptr)
    throw std::invalid_argument("mp-check: Gaussian adjoints need the Brownian ensemble");
  const std::size_t P = rep.deterministic ? 1 : x_hat.n_paths;
  par::OrderedSum acc(P, N * nu * 2 + 1);
  par::for_chunks(P, [&](std::size_t lo, std::size_t hi, std::size_t ch) {
    double* s = acc.part(ch);
    AdjointAt a;
    std::vector<double> sh(n), sv(n);
    for (std::size_t p = lo; p < hi; ++p) {
      const auto S = (adj.basis.K > 0) ? adj.S_path(*ens, p) : std::vector<double>{};
      for (std::size_t m = 0; m < N; ++m) {
        const double t = adj.tgrid.t(m);
        const double* xh = x_hat.at(p, m);
        const double* uh = u_hat.at(p, m);
        fill_at(adj, p, m, S_row(adj, S, m), a);
        const double hu = hamiltonian(c, t, uh, xh, a.pb.data(), a.qs.data());
        c.sigma(t, uh, xh, sh.data());
        for (std::size_t vi = 0; vi < nu; ++vi) {
          const double* v = U.point(vi);
          c.sigma(t, v, xh, sv.data());
          for (std::size_t i = 0; i < n; ++i) sv[i] = sh[i] - sv[i];
          double quad = 0.0;
          if (la::max_abs(sv) > 0.0) {
            if (!adj.has_second)
              throw std::invalid_argument("mp-check: controlled diffusion needs the second-order adjoint");
            quad = 0.5 * la::quad(n, a.C.data(), sv.data(), sv.data());
          }
          const double gap = hu - hamiltonian(c, t, v, xh, a.pb.data(), a.qs.data()) - quad;
          s[(m * nu + vi) * 2] += gap;
          s[(m * nu + vi) * 2 + 1] += gap * gap;
          s[N * nu * 2] = std::max(s[N * nu * 2], std::abs(quad));
        }
      }
    }
  });
  const auto tot = acc.total();
  for (std::size_t ch = 0; ch < par::chunk_count(P); ++ch)
    rep.quadratic_max = std::max(rep.quadratic_max, acc.part(ch)[N * nu * 2]);
  rep.min_gap = 0.0;
  bool first = true;
  for (std::size_t m = 0; m < N; ++m)
    for (std::size_t vi = 0; vi < nu; ++vi) {
      const auto ms = stats::mean_se_from_sums(tot[(m * nu + vi) * 2], tot[(m * nu + vi) * 2 + 1], P);
      MPRow row{m, adj.tgrid.t(m), vi, ms.mean, rep.deterministic ? 0.0 : ms.se, true};
      row.pass = rep.deterministic ? row.gap >= -tol_margin : row.gap >= -3.0 * row.se - tol_margin;
      if (!row.pass) rep.violations.emplace_back(m, vi);
      if (first || row.gap < rep.min_gap) rep.min_gap = row.gap;
      first = false;
      rep.rows.push_back(row);
    }
  rep.passed = rep.violations.empty();
  return rep;
}

MPReport classical_peng_check(const CoefficientSet& c, const ControlPath& u_hat,
                              std::span<const double> x_path, const TimeGrid& grid,
                              const ControlDomain& U, double tol_margin) {
  const std::size_t n = c.n(), nn = n * n, N = grid.n_steps, nu = U.size();
  const double dt = grid.dt();
  if (x_path.size() != (N + 1) * n) throw std::invalid_argument("classical check: path length mismatch");
  std::vector<double> p(n), P(nn), pn(n), Pn(nn), bx(nn), sx(nn), fx(n), bxx(n * nn), fxx(nn), H(nn);
  std::vector<std::vector<double>> p_next(N), P_next(N);
  c.h_x(x_path.data() + N * n, p.data());
  c.h_xx(x_path.data() + N * n, P.data());
  for (double& v : p) v = -v;
  for (double& v : P) v = -v;
  for (std::size_t m = N; m-- > 0;) {
    const double t = grid.t(m);
    const double* x = x_path.data() + m * n;
    const double* u = u_hat.at(0, m);
    p_next[m] = p;
    P_next[m] = P;
    c.b_x(t, u, x, bx.data());
    c.sigma_x(t, u, x, sx.data());
    c.f_x(t, u, x, fx.data());
    c.b_xx(t, u, x, bxx.data());
    c.f_xx(t, u, x, fxx.data());
    pn = p;
    la::gemv_t_acc(n, dt, bx.data(), p.data(), pn.data());
    for (std::size_t i = 0; i < n; ++i) pn[i] -= dt * fx[i];
    // H_xx = sum_i p_i b^i_xx - f_xx (q = 0 on a deterministic path)
    std::fill(H.begin(), H.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < nn; ++r) H[r] += p[i] * bxx[i * nn + r];
    for (std::size_t r = 0; r < nn; ++r) H[r] -= fxx[r];
    Pn = P;
    la::gemm_acc(n, dt, bx.data(), true, P.data(), false, Pn.data());
    la::gemm_acc(n, dt, P.data(), false, bx.data(), false, Pn.data());
    std::vector<double> tmp(nn, 0.0);
    la::gemm_acc(n, 1.0, P.data(), false, sx.data(), false, tmp.data());
    la::gemm_acc(n, dt, sx.data(), true, tmp.data(), false, Pn.data());
    la::axpy(dt, H, Pn);
    p = pn;
    P = Pn;
  }
  MPReport rep;
  rep.deterministic = true;
  std::vector<double> q(n, 0.0), sh(n), sv(n);
  bool first = true;
  for (std::size_t m = 0; m < N; ++m) {
    const double t = grid.t(m);
    const double* x = x_path.data() + m * n;
    const double* uh = u_hat.at(0, m);
    const double hu = hamiltonian(c, t, uh, x, p_next[m].data(), q.data());
    c.sigma(t, uh, x, sh.data());
    for (std::size_t vi = 0; vi < nu; ++vi) {
      const double* v = U.point(vi);
      c.sigma(t, v, x, sv.data());
      for (std::size_t i = 0; i < n; ++i) sv[i] = sh[i] - sv[i];
      const double quad = 0.5 * la::quad(n, P_next[m].data(), sv.data(), sv.data());
      rep.quadratic_max = std::max(rep.quadratic_max, std::abs(quad));
      MPRow row{m, t, vi, hu - hamiltonian(c, t, v, x, p_next[m].data(), q.data()) - quad, 0.0, true};
      row.pass = row.gap >= -tol_margin;
      if (!row.pass) rep.violations.emplace_back(m, vi);
      if (first || row.gap < rep.min_gap) rep.min_gap = row.gap;
      first = false;
      rep.rows.push_back(row);
    }
  }
  rep.passed = rep.violations.empty();
  return rep;
}

ControlPath argmax_control(const CoefficientSet& c, const bsee::AdjointSolution& adj,
                           const StateEnsemble& x_hat, const ControlPath& u_ref, const ControlDomain& U) {
  if (adj.basis.K > 0 || adj.pb.paths > 0)
    throw std::invalid_argument("argmax_control: needs deterministic adjoints");
  const std::size_t N = adj.tgrid.n_steps, d = U.dim;
  std::vector<double> vals(N * d);
  for (std::size_t m = 0; m < N; ++m) {
    const double t = adj.tgrid.t(m);
    std::size_t best = 0;
    double best_h = 0.0;
    for (std::size_t vi = 0; vi < U.size(); ++vi) {
      const double h = hfunction(c, adj, t, U.point(vi), x_hat.at(0, m), u_ref.at(0, m));
      if (vi == 0 || h > best_h) {
        best = vi;
        best_h = h;
      }
    }
    std::copy(U.point(best), U.point(best) + d, vals.begin() + m * d);
  }
  return ControlPath::table(N, vals, d);
}

}  // namespace volterra::mp
