#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "volterra/coefficients.hpp"
#include "volterra/kernels.hpp"
#include "volterra/linalg.hpp"
#include "volterra/rng.hpp"

namespace volterra {

struct TimeGrid {
  double T = 1.0;
  std::size_t n_steps = 2;

  TimeGrid() = default;
  TimeGrid(double horizon, std::size_t steps) : T(horizon), n_steps(steps) { validate(); }
  double dt() const { return T / static_cast<double>(n_steps); }
  double t(std::size_t j) const { return T * static_cast<double>(j) / static_cast<double>(n_steps); }
  void validate() const {
    if (!(T > 0.0) || n_steps < 2) throw std::invalid_argument("time grid: need T > 0 and n_steps >= 2");
  }
};

// Lazily generated Brownian increments. Increment (path, j) is a pure function of
// (seed, path, j): two draws per Philox block, stream 0.
class BrownianEnsemble {
 public:
  BrownianEnsemble(TimeGrid grid, std::size_t n_paths, std::uint64_t seed);

  const TimeGrid& grid() const { return grid_; }
  std::size_t n_paths() const { return n_paths_; }
  std::uint64_t seed() const { return seed_; }

  void increments(std::size_t path, std::span<double> out) const;
  double increment(std::size_t path, std::size_t j) const;

 private:
  TimeGrid grid_;
  std::size_t n_paths_;
  std::uint64_t seed_;
  rng::Philox4x32 gen_;
  double sqrt_dt_;
};

BrownianEnsemble sample_brownian(const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed);

struct BrownianSanity {
  double mean = 0.0;         // pooled increment mean
  double var_ratio = 0.0;    // pooled variance / dt
  double mean_bound = 0.0;   // 5 sqrt(dt / (paths*steps))
  bool passed = false;
};
BrownianSanity brownian_sanity(const BrownianEnsemble& ens);

// Deterministic (n_paths == 0) or per-path control table, dim values per step.
struct ControlPath {
  std::size_t dim = 1;
  std::size_t n_steps = 0;
  std::size_t n_paths = 0;
  std::vector<double> values;

  bool deterministic() const { return n_paths == 0; }
  const double* at(std::size_t path, std::size_t j) const {
    return values.data() + ((deterministic() ? 0 : path * n_steps) + j) * dim;
  }
  static ControlPath constant(std::size_t n_steps, double value, std::size_t dim = 1);
  static ControlPath table(std::size_t n_steps, std::vector<double> values, std::size_t dim = 1);
  // Checks every value lies in U.
  void validate(const ControlDomain& U) const;
};

// X(path, t_m) in R^n for m = 0..n_steps.
struct StateEnsemble {
  std::size_t n = 1;
  std::size_t n_steps = 0;
  std::size_t n_paths = 0;
  std::vector<double> x;

  StateEnsemble() = default;
  StateEnsemble(std::size_t dim, std::size_t steps, std::size_t paths)
      : n(dim), n_steps(steps), n_paths(paths), x(dim * (steps + 1) * paths, 0.0) {}
  double* at(std::size_t path, std::size_t m) { return x.data() + (path * (n_steps + 1) + m) * n; }
  const double* at(std::size_t path, std::size_t m) const {
    return x.data() + (path * (n_steps + 1) + m) * n;
  }
  std::span<double> path(std::size_t p) { return {at(p, 0), (n_steps + 1) * n}; }
  std::span<const double> path(std::size_t p) const { return {at(p, 0), (n_steps + 1) * n}; }
};

// Y(path, t_m, theta_i) in R^n.
struct LiftEnsemble {
  std::size_t n = 1;
  std::size_t n_steps = 0;
  std::size_t n_paths = 0;
  std::size_t nodes = 0;
  std::vector<double> y;

  LiftEnsemble() = default;
  LiftEnsemble(std::size_t dim, std::size_t steps, std::size_t paths, std::size_t n_nodes)
      : n(dim), n_steps(steps), n_paths(paths), nodes(n_nodes),
        y(dim * (steps + 1) * paths * n_nodes, 0.0) {}
  double* at(std::size_t path, std::size_t m) {
    return y.data() + ((path * (n_steps + 1) + m) * nodes) * n;
  }
  const double* at(std::size_t path, std::size_t m) const {
    return y.data() + ((path * (n_steps + 1) + m) * nodes) * n;
  }
};

std::vector<double> constant_forcing(const TimeGrid& grid, std::span<const double> x0);

// Kernel values at the lags l*dt, l = 1..n_steps, for the direct recursion.
struct LagTable {
  std::size_t n = 1;
  std::size_t n_steps = 0;
  std::vector<double> kb;  // index l*n*n, l = 0 unused
  std::vector<double> ks;

  static LagTable from(const kernels::DiscreteLaplaceKernel& k, const TimeGrid& grid);
  static LagTable from(const kernels::AnalyticPair& k, const TimeGrid& grid);
  const double* b(std::size_t lag) const { return kb.data() + lag * n * n; }
  const double* s(std::size_t lag) const { return ks.data() + lag * n * n; }
};

// Serial reference: keeps the pushed history and evaluates the left-point Volterra sums
// sum_{j<m} Kb(t_m - t_j) d_j + Ks(t_m - t_j) s_j directly, O(m n^2) per value.
class DirectConvolver {
 public:
  explicit DirectConvolver(const LagTable& lags)
      : lags_(&lags), n_(lags.n), hb_(lags.n * lags.n_steps), hs_(lags.n * lags.n_steps) {}

  void reset() { count_ = 0; }
  std::size_t count() const { return count_; }

  void push(const double* drift_inc, const double* diff_inc) {
    std::copy(drift_inc, drift_inc + n_, hb_.begin() + count_ * n_);
    std::copy(diff_inc, diff_inc + n_, hs_.begin() + count_ * n_);
    ++count_;
  }

  // Equivalent to k pushes of zero increments.
  void advance_zero(std::size_t k) {
    std::fill(hb_.begin() + count_ * n_, hb_.begin() + (count_ + k) * n_, 0.0);
    std::fill(hs_.begin() + count_ * n_, hs_.begin() + (count_ + k) * n_, 0.0);
    count_ += k;
  }

  void value(double* out) const {
    std::fill(out, out + n_, 0.0);
    for (std::size_t j = 0; j < count_; ++j) {
      const std::size_t lag = count_ - j;
      la::gemv_acc(n_, 1.0, lags_->b(lag), hb_.data() + j * n_, out);
      la::gemv_acc(n_, 1.0, lags_->s(lag), hs_.data() + j * n_, out);
    }
  }

 private:
  const LagTable* lags_;
  std::size_t n_;
  std::vector<double> hb_, hs_;
  std::size_t count_ = 0;
};

// Markovian lift: Y_i <- e^{-theta_i dt}(Y_i + M_b(theta_i) d + M_sigma(theta_i) s) and
// value = sum_i w_i Y_i. Equals DirectConvolver on the discrete kernel up to rounding.
class LiftConvolver {
 public:
  LiftConvolver(const kernels::DiscreteLaplaceKernel& k, double dt)
      : k_(&k), n_(k.n), decay_(k.size()), y_(k.size() * k.n, 0.0) {
    for (std::size_t i = 0; i < k.size(); ++i) decay_[i] = std::exp(-k.nodes[i] * dt);
  }

  void reset() {
    std::fill(y_.begin(), y_.end(), 0.0);
    count_ = 0;
  }
  std::size_t count() const { return count_; }

  void push(const double* drift_inc, const double* diff_inc) {
    for (std::size_t i = 0; i < decay_.size(); ++i) {
      double* y = y_.data() + i * n_;
      la::gemv_acc(n_, 1.0, k_->m(kernels::Which::b, i), drift_inc, y);
      la::gemv_acc(n_, 1.0, k_->m(kernels::Which::sigma, i), diff_inc, y);
      for (std::size_t c = 0; c < n_; ++c) y[c] *= decay_[i];
    }
    ++count_;
  }

  void advance_zero(std::size_t k) {
    for (std::size_t i = 0; i < decay_.size(); ++i) {
      const double f = std::pow(decay_[i], static_cast<double>(k));
      for (std::size_t c = 0; c < n_; ++c) y_[i * n_ + c] *= f;
    }
    count_ += k;
  }

  void value(double* out) const {
    std::fill(out, out + n_, 0.0);
    for (std::size_t i = 0; i < decay_.size(); ++i)
      la::axpy(k_->weights[i], {y_.data() + i * n_, n_}, {out, n_});
  }

  std::span<const double> state() const { return y_; }
  void set_state(std::span<const double> y, std::size_t count) {
    std::copy(y.begin(), y.end(), y_.begin());
    count_ = count;
  }

 private:
  const kernels::DiscreteLaplaceKernel* k_;
  std::size_t n_;
  std::vector<double> decay_;
  std::vector<double> y_;
  std::size_t count_ = 0;
};

// Continues the left-point Euler recursion
//   X_{m+1} = xi_{m+1} + sum_{j<=m} Kb(t_{m+1}-t_j) b_j dt + Ks(t_{m+1}-t_j) sigma_j dW_j
// from step `start`: x_out holds X_0..X_start and conv holds the first `start` pushes.
// Throws on a non-finite state.
template <class Conv>
void sve_path_from(const CoefficientSet& c, const ControlPath& u, std::span<const double> xi,
                   const TimeGrid& grid, std::span<const double> dw, std::size_t path, Conv& conv,
                   std::span<double> x_out, std::size_t start) {
  const std::size_t n = c.n();
  const std::size_t N = grid.n_steps;
  const double dt = grid.dt();
  std::vector<double> bv(n), sv(n), conv_out(n);
  for (std::size_t m = start; m < N; ++m) {
    const double* xm = x_out.data() + m * n;
    const double* um = u.at(path, m);
    c.b(grid.t(m), um, xm, bv.data());
    c.sigma(grid.t(m), um, xm, sv.data());
    for (std::size_t i = 0; i < n; ++i) {
      bv[i] *= dt;
      sv[i] *= dw[m];
    }
    conv.push(bv.data(), sv.data());
    conv.value(conv_out.data());
    double* xn = x_out.data() + (m + 1) * n;
    for (std::size_t i = 0; i < n; ++i) {
      xn[i] = xi[(m + 1) * n + i] + conv_out[i];
      if (!std::isfinite(xn[i]))
        throw std::runtime_error("simulate: non-finite state at path " + std::to_string(path) +
                                 ", step " + std::to_string(m + 1));
    }
  }
}

template <class Conv>
void sve_path(const CoefficientSet& c, const ControlPath& u, std::span<const double> xi,
              const TimeGrid& grid, std::span<const double> dw, std::size_t path, Conv& conv,
              std::span<double> x_out) {
  conv.reset();
  std::copy(xi.begin(), xi.begin() + c.n(), x_out.begin());
  sve_path_from(c, u, xi, grid, dw, path, conv, x_out, 0);
}

enum class Engine { direct, lift };

struct SimOptions {
  Engine engine = Engine::lift;
  bool parallel = true;
};

StateEnsemble simulate_sve(const CoefficientSet& c, const ControlPath& u,
                           const kernels::DiscreteLaplaceKernel& k, std::span<const double> xi,
                           const BrownianEnsemble& ens, SimOptions opts = {});
// Direct recursion with analytic kernels evaluated at the lags (never at 0).
StateEnsemble simulate_sve(const CoefficientSet& c, const ControlPath& u,
                           const kernels::AnalyticPair& k, std::span<const double> xi,
                           const BrownianEnsemble& ens, SimOptions opts = {});
// Serial direct recursion kept as the reference implementation.
StateEnsemble simulate_sve_reference(const CoefficientSet& c, const ControlPath& u,
                                     const kernels::DiscreteLaplaceKernel& k,
                                     std::span<const double> xi, const BrownianEnsemble& ens);

std::pair<LiftEnsemble, StateEnsemble> simulate_lift(const CoefficientSet& c, const ControlPath& u,
                                                     const kernels::DiscreteLaplaceKernel& k,
                                                     std::span<const double> xi,
                                                     const BrownianEnsemble& ens);

// Classical Euler-Maruyama scheme for dX = b dt + sigma dW, used as an independent oracle.
StateEnsemble simulate_euler_maruyama(const CoefficientSet& c, const ControlPath& u,
                                      std::span<const double> x0, const BrownianEnsemble& ens);

enum class ConvolveMode { lebesgue, ito };

// Left-point Volterra convolution of a per-path integrand table g(path, t_j) (layout as
// StateEnsemble). ito mode requires the ensemble.
StateEnsemble volterra_convolve(const kernels::DiscreteLaplaceKernel& k, kernels::Which which,
                                const StateEnsemble& g, ConvolveMode mode,
                                const BrownianEnsemble* ens, const TimeGrid& grid);
StateEnsemble volterra_convolve(const kernels::AnalyticPair& k, kernels::Which which,
                                const StateEnsemble& g, ConvolveMode mode,
                                const BrownianEnsemble* ens, const TimeGrid& grid);

// sup_m E[|X_m|^p]^{1/p} by path average.
double cnorm(const StateEnsemble& x, double p);

// Per-time moments E|X_m|^p in fixed path order.
std::vector<double> moment_profile(const StateEnsemble& x, double p);

}  // namespace volterra
