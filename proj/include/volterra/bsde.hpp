#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "volterra/simulate.hpp"
#include "volterra/stats.hpp"

namespace volterra::bsde {

// Weight of the generator over one step. left_point: dt. exponential: (1 - e^{-k dt})/k, the
// exact integral of a step-function generator against the discount.
enum class Quadrature { left_point, exponential };
double quad_weight(double kappa, double dt, Quadrature q);

// Terminal value c + a * S_N with S_N = sum_j integrand_j dW_j.
// linear_w uses integrand = 1, so S_N = W_T; constant ignores a.
enum class TerminalKind { constant, linear_w, gaussian_functional };
struct Terminal {
  TerminalKind kind = TerminalKind::constant;
  double c = 0.0;
  double a = 0.0;
  std::vector<double> integrand;  // length n_steps, gaussian_functional only

  static Terminal constant(double c);
  static Terminal linear_w(double a, double c = 0.0);
  static Terminal gaussian(double a, std::vector<double> integrand, double c = 0.0);
  double integrand_at(std::size_t j) const;
};

// dp = kappa p dt - g dt + q dW, p_T = h.
struct BSDEInstance {
  double kappa = 0.0;
  double alpha = 0.0;
  Terminal terminal;
  std::vector<double> generator;        // deterministic g_j, j < n_steps (empty = 0)
  std::vector<double> generator_paths;  // adapted g(path, j); LSMC only
  std::vector<double> terminal_paths;   // per-path terminal; LSMC only
};

struct BSDESolution {
  std::size_t n_steps = 0;
  std::size_t n_paths = 0;
  std::vector<double> p;  // path-major, n_steps + 1 per path
  std::vector<double> q;  // path-major, n_steps per path

  BSDESolution() = default;
  BSDESolution(std::size_t steps, std::size_t paths)
      : n_steps(steps), n_paths(paths), p((steps + 1) * paths, 0.0), q(steps * paths, 0.0) {}
  double& P(std::size_t path, std::size_t m) { return p[path * (n_steps + 1) + m]; }
  double P(std::size_t path, std::size_t m) const { return p[path * (n_steps + 1) + m]; }
  double& Qv(std::size_t path, std::size_t m) { return q[path * n_steps + m]; }
  double Qv(std::size_t path, std::size_t m) const { return q[path * n_steps + m]; }
};

// Per-path terminal value of the instance.
double terminal_value(const BSDEInstance& inst, std::span<const double> dw, std::size_t path);
double generator_value(const BSDEInstance& inst, std::size_t n_steps, std::size_t path, std::size_t j);

// Exact conditional expectations for the closed-form families:
//   p_m = e^{-k(T-t_m)}(c + a S_m) + sum_{j>=m} e^{-k(t_j-t_m)} g_j w,  q_m = a e^{-k(T-t_m)} a_m.
BSDESolution solve_bsde_closedform(const BSDEInstance& inst, const BrownianEnsemble& ens,
                                   Quadrature quad = Quadrature::exponential);

// Regressor table R(path, m) with R_{m+1} - loading_m dW_m measurable at t_m.
struct Regressor {
  std::vector<double> values;   // path-major, n_steps + 1 per path
  std::vector<double> loading;  // path-major, n_steps per path
};
Regressor brownian_regressor(const BrownianEnsemble& ens);

struct LsmcOptions {
  int degree = 1;
  bool regression_later = true;
  Quadrature quad = Quadrature::left_point;
};

// Least-squares Monte Carlo with a total-degree polynomial basis in the regressors.
// regression_later fits p_{m+1} on the basis at t_{m+1} and takes exact Gaussian conditional
// moments; otherwise the targets are regressed on the basis at t_m.
BSDESolution solve_bsde_lsmc(const BSDEInstance& inst, const BrownianEnsemble& ens,
                             const std::vector<Regressor>& regs, LsmcOptions opts = {});

// Normalized step residual e^{-k dt} p_{m+1} - p_m + g_m w - q_m dW_m (the martingale
// increment check scaled by e^{k t_m}).
struct MartingaleReport {
  double max_abs = 0.0;        // over paths and steps
  double worst_z = 0.0;        // max_m |mean_m| / se_m
  bool passed = false;         // max_abs <= 1e-10 or every |mean_m| <= 3 se_m
};
MartingaleReport martingale_residual(const BSDEInstance& inst, const BSDESolution& sol,
                                     const BrownianEnsemble& ens, Quadrature quad);

struct AprioriReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;  // +inf when rhs = 0 < lhs; 0 when both vanish
  double terms[6] = {0, 0, 0, 0, 0, 0};
  bool trivially_satisfied = false;
};

// Ratio of the six weighted solution terms to E[|h|^2 + Gamma(1-a)/k^{1-a} int (T-t)^a |g|^2].
// Integrals by the left-point grid rule, suprema by the grid max. Requires kappa > 0.
AprioriReport apriori_ratio(const BSDEInstance& inst, const BSDESolution& sol,
                            const BrownianEnsemble& ens);

}  // namespace volterra::bsde
