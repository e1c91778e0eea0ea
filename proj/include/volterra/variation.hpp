#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "volterra/coefficients.hpp"
#include "volterra/kernels.hpp"
#include "volterra/simulate.hpp"
#include "volterra/stats.hpp"

namespace volterra {

struct SpikeSpec {
  double tau = 0.0;
  double eps = 0.0;
  ControlPath v;  // replacement control on the spike window
};

// Spike steps [m0, m0 + k) on the grid.
struct SpikeWindow {
  std::size_t m0 = 0;
  std::size_t k = 0;
  bool contains(std::size_t m) const { return m >= m0 && m < m0 + k; }
};

// tau and eps snap to the nearest grid multiples; eps must cover at least one step.
SpikeWindow snap_spike(double tau, double eps, const TimeGrid& grid);
ControlPath apply_spike(const ControlPath& u_hat, const SpikeSpec& spike, const TimeGrid& grid);

struct VariationBundle {
  SpikeWindow window;
  ControlPath u_hat;
  ControlPath u_spiked;
  StateEnsemble x_hat, x_v, x1, x2;
  StateEnsemble x12, dx, dx1, dx12;
};

// One path of the first (order 1) or second (order 2) variational recursion along a given
// X-hat path, sharing the increments and the left-point scheme of the forward solver.
// Steps before `start` carry no forcing, so they are skipped as zero pushes.
template <class Conv>
void variational_path(const CoefficientSet& c, const ControlPath& u_hat, const ControlPath& v,
                      const SpikeWindow& w, const TimeGrid& grid, std::span<const double> dw,
                      std::size_t path, std::span<const double> x_hat, std::span<const double> x1,
                      int order, Conv& conv, std::span<double> out, std::size_t start = 0) {
  const std::size_t n = c.n();
  const std::size_t N = grid.n_steps;
  const double dt = grid.dt();
  std::vector<double> bx(n * n), sx(n * n), bxx(n * n * n), sxx(n * n * n), bu(n), bv(n), su(n),
      sv(n), dbx(n * n), dsx(n * n), tmp(n * n), drift(n), diff(n), val(n);
  conv.reset();
  conv.advance_zero(start);
  std::fill(out.begin(), out.begin() + (start + 1) * n, 0.0);
  for (std::size_t m = start; m < N; ++m) {
    const double t = grid.t(m);
    const double* xh = x_hat.data() + m * n;
    const double* um = u_hat.at(path, m);
    const double* zm = out.data() + m * n;
    c.b_x(t, um, xh, bx.data());
    c.sigma_x(t, um, xh, sx.data());
    std::fill(drift.begin(), drift.end(), 0.0);
    std::fill(diff.begin(), diff.end(), 0.0);
    la::gemv_acc(n, 1.0, bx.data(), zm, drift.data());
    la::gemv_acc(n, 1.0, sx.data(), zm, diff.data());
    const bool in_spike = w.contains(m);
    const double* vm = v.at(path, m);
    if (order == 1) {
      if (in_spike) {
        c.b(t, vm, xh, bv.data());
        c.b(t, um, xh, bu.data());
        c.sigma(t, vm, xh, sv.data());
        c.sigma(t, um, xh, su.data());
        for (std::size_t i = 0; i < n; ++i) {
          drift[i] += bv[i] - bu[i];
          diff[i] += sv[i] - su[i];
        }
      }
    } else {
      const double* y1 = x1.data() + m * n;
      c.b_xx(t, um, xh, bxx.data());
      c.sigma_xx(t, um, xh, sxx.data());
      for (std::size_t i = 0; i < n; ++i) {
        drift[i] += 0.5 * la::quad(n, bxx.data() + i * n * n, y1, y1);
        diff[i] += 0.5 * la::quad(n, sxx.data() + i * n * n, y1, y1);
      }
      if (in_spike) {
        c.b_x(t, vm, xh, dbx.data());
        c.sigma_x(t, vm, xh, dsx.data());
        for (std::size_t i = 0; i < n * n; ++i) {
          dbx[i] -= bx[i];
          dsx[i] -= sx[i];
        }
        la::gemv_acc(n, 1.0, dbx.data(), y1, drift.data());
        la::gemv_acc(n, 1.0, dsx.data(), y1, diff.data());
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      drift[i] *= dt;
      diff[i] *= dw[m];
    }
    conv.push(drift.data(), diff.data());
    conv.value(out.data() + (m + 1) * n);
  }
}

VariationBundle simulate_bundle(const CoefficientSet& c, const ControlPath& u_hat,
                                const SpikeSpec& spike, const kernels::DiscreteLaplaceKernel& k,
                                std::span<const double> xi, const BrownianEnsemble& ens,
                                SimOptions opts = {});

// Order-1 or order-2 variational ensemble along a precomputed X-hat.
StateEnsemble simulate_variational(const CoefficientSet& c, const ControlPath& u_hat,
                                   const StateEnsemble& x_hat, const SpikeSpec& spike,
                                   const kernels::DiscreteLaplaceKernel& k,
                                   const BrownianEnsemble& ens, int order,
                                   const StateEnsemble* x1 = nullptr, SimOptions opts = {});

// Per-path cost sum_j f(t_j,u_j,X_j) dt + h(X_N), averaged.
stats::MeanSE cost_functional(const CoefficientSet& c, const ControlPath& u, const StateEnsemble& x,
                              const TimeGrid& grid);

// Monte Carlo J^{1,2}: E[h_x X12_N + X1_N'h_xx X1_N/2 + sum dt (f_x X12 + X1'f_xx X1/2)]
// + E[sum over spike steps of delta f dt].
stats::MeanSE compute_J12(const CoefficientSet& c, const VariationBundle& bundle, const TimeGrid& grid);

struct RatesResult {
  std::vector<double> eps;
  std::vector<double> knorm_combo;  // ||K_b||_{1,eps} + ||K_sigma||_{2,eps}
  std::vector<std::string> quantities;  // dX, X1, dX1, X2, dX12
  std::map<std::string, std::vector<double>> norms;
  std::map<std::string, stats::SlopeFit> fit_eps;
  std::map<std::string, stats::SlopeFit> fit_knorm;
  std::vector<stats::MeanSE> delta_j;  // J(u^eps) - J(u_hat) - J^{1,2}
  stats::SlopeFit delta_j_fit;
  bool exact_zero = false;
  bool delta_j_computed = false;
};

// C^p norms of the expansion remainders over a geometric eps sweep with common random
// numbers. Uses the lift recursion (discrete kernel), restarting every spiked run at tau.
RatesResult remainder_rates(const CoefficientSet& c, const kernels::DiscreteLaplaceKernel& k,
                            const ControlPath& u_hat, const ControlPath& v,
                            std::span<const double> xi, double tau,
                            const std::vector<double>& eps_list, double p,
                            const BrownianEnsemble& ens, bool with_delta_j = false);

}  // namespace volterra
