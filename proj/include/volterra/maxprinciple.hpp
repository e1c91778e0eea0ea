#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "volterra/bsee.hpp"
#include "volterra/coefficients.hpp"
#include "volterra/kernels.hpp"
#include "volterra/simulate.hpp"
#include "volterra/stats.hpp"
#include "volterra/variation.hpp"

namespace volterra::mp {

// <p, b> + <q, sigma> - f
double hamiltonian(const CoefficientSet& c, double t, const double* u, const double* x,
                   const double* p, const double* q);

// Adjoint quantities of one path at one step (continuation-based contractions).
struct AdjointAt {
  std::vector<double> pb, qs;              // n
  std::vector<double> C, Cb, Cbs;          // n x n (empty without second order)
  std::vector<double> Ab, Bb, As, Bs;      // nodes x n x n
};
AdjointAt adjoint_at(const bsee::AdjointSolution& adj, std::size_t path, std::size_t m,
                     const std::vector<double>& S);

// H(t, v, x, pb, qs) + <C (sigma_hat - sigma(v)), sigma_hat - sigma(v)> / 2 at grid time t.
// Off-grid t is rejected.
double hfunction(const CoefficientSet& c, const bsee::AdjointSolution& adj, double t, const double* v,
                 const double* x_hat, const double* u_hat_t, std::size_t path = 0,
                 const std::vector<double>& S = {});

struct DualityResult {
  stats::MeanSE residual;  // E[lhs - rhs], per-path differences
  stats::MeanSE lhs;
  stats::MeanSE rhs;
};

// -E[h_x Z_N] - sum dt E[f_x Z_m]  vs  sum dt E[pb' F_b + qs' F_sigma] for Z = X^{1,2}, with
// F the first plus second order forcing.
DualityResult duality_residual_first(const CoefficientSet& c, const VariationBundle& bundle,
                                     const bsee::AdjointSolution& adj, const BrownianEnsemble& ens);

// -E[X1_N' h_xx X1_N]  vs  the per-step expansion over the lift of X1, including the
// dt^2 drift and drift/diffusion cross terms of the discrete scheme.
DualityResult duality_residual_second(const CoefficientSet& c, const VariationBundle& bundle,
                                      const bsee::AdjointSolution& adj,
                                      const kernels::DiscreteLaplaceKernel& k,
                                      const BrownianEnsemble& ens);

struct J12Result {
  stats::MeanSE direct;        // Monte Carlo J^{1,2}
  stats::MeanSE adjoint;       // -E sum_spike dt [pb db + qs ds - df + ds' C ds / 2]
  stats::MeanSE gap;           // direct - adjoint
  stats::MeanSE correction_d;  // spike-window terms linear in X1 and the lift
  stats::MeanSE correction_dt; // dt^2 terms of the discrete second duality
  stats::MeanSE identity;      // direct - (adjoint - correction_d - correction_dt / 2)
  stats::MeanSE gap_continuum; // gap + correction_dt / 2: the part that is o(eps) as dt -> 0
};

J12Result j12_adjoint_representation(const CoefficientSet& c, const VariationBundle& bundle,
                                     const bsee::AdjointSolution& adj,
                                     const kernels::DiscreteLaplaceKernel& k,
                                     const BrownianEnsemble& ens);

struct MPRow {
  std::size_t m = 0;
  double t = 0.0;
  std::size_t v_index = 0;
  double gap = 0.0;
  double se = 0.0;
  bool pass = true;
};

struct MPReport {
  std::vector<MPRow> rows;
  double min_gap = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> violations;  // (step, v index)
  bool deterministic = true;
  bool passed = true;
  bool alpha_flag = false;  // singularity index differs from 1/3
  double quadratic_max = 0.0;  // largest |risk-adjustment term| over all rows
};

// Gap H-hat(u_hat) - H-hat(v) per grid step (t < T) and v in U. Deterministic when the
// adjoints, control and state are path-independent (path 0 only), otherwise mean +- SE.
MPReport check_variational_inequality(const CoefficientSet& c, const ControlPath& u_hat,
                                      const StateEnsemble& x_hat, const bsee::AdjointSolution& adj,
                                      const ControlDomain& U, double tol_margin = 1e-8,
                                      const BrownianEnsemble* ens = nullptr);

// Independent classical SDE checker on one deterministic path: p_m = p_{m+1} + (b_x'p_{m+1} +
// s_x'q - f_x')dt with q = 0, P_m = P_{m+1} + (b_x'P + P b_x + s_x'P s_x + H_xx) dt.
MPReport classical_peng_check(const CoefficientSet& c, const ControlPath& u_hat,
                              std::span<const double> x_path, const TimeGrid& grid,
                              const ControlDomain& U, double tol_margin = 1e-8);

// Pointwise argmax of the H-function over U along path 0 of x_hat, for deterministic adjoints
// (ties: first index).
ControlPath argmax_control(const CoefficientSet& c, const bsee::AdjointSolution& adj,
                           const StateEnsemble& x_hat, const ControlPath& u_ref, const ControlDomain& U);

}  // namespace volterra::mp
