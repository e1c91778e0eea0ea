#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "volterra/coefficients.hpp"
#include "volterra/kernels.hpp"
#include "volterra/simulate.hpp"

namespace volterra::bsee {

// Nodes and weights of the kernel's discrete measure. First-order fields live on the nodes
// against nu1 = r(theta) w; second-order fields on node pairs against r r w w.
struct ThetaGrid {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> r;
  std::size_t n = 1;
  double alpha = 0.0;

  static ThetaGrid from(const kernels::DiscreteLaplaceKernel& k);
  std::size_t size() const { return nodes.size(); }
  // Number of sites of an order-1 or order-2 field.
  std::size_t sites(int order) const { return order == 1 ? size() : size() * size(); }
  // varpi and nu weight of a site.
  double varpi(int order, std::size_t site) const;
  double nu(int order, std::size_t site) const;
};

// Gaussian functionals S^k_m = sum_{j<m} a[j*K + k] dW_j with deterministic integrands.
struct GaussianBasis {
  std::size_t K = 0;
  std::size_t n_steps = 0;
  std::vector<double> a;

  const double* at(std::size_t j) const { return a.data() + j * K; }
  // Cov(S_m), K x K.
  std::vector<double> cov(std::size_t m, double dt) const;
  // S_m for m = 0..n_steps along one path, (n_steps+1) x K.
  std::vector<double> path_values(const BrownianEnsemble& ens, std::size_t path) const;
};

// Table of fields over (time, site) with `dim` reals per site. Affine mode (paths == 0): each
// entry is c + D S_t stored as K+1 columns (column 0 = c). Per-path mode (paths > 0): plain
// values per path, K = 0.
struct FieldTable {
  std::size_t times = 0;
  std::size_t sites = 0;
  std::size_t dim = 0;
  std::size_t K = 0;
  std::size_t paths = 0;
  std::vector<double> v;

  FieldTable() = default;
  FieldTable(std::size_t t, std::size_t s, std::size_t d, std::size_t k, std::size_t p = 0)
      : times(t), sites(s), dim(d), K(p > 0 ? 0 : k), paths(p),
        v(t * s * d * (p > 0 ? p : k + 1), 0.0) {}

  std::size_t cols() const { return K + 1; }
  // Affine mode: column `col` of entry (t, s).
  double* at(std::size_t t, std::size_t s, std::size_t col = 0) {
    return v.data() + ((t * sites + s) * cols() + col) * dim;
  }
  const double* at(std::size_t t, std::size_t s, std::size_t col = 0) const {
    return v.data() + ((t * sites + s) * cols() + col) * dim;
  }
  // Per-path mode.
  double* at_path(std::size_t path, std::size_t t, std::size_t s) {
    return v.data() + ((path * times + t) * sites + s) * dim;
  }
  const double* at_path(std::size_t path, std::size_t t, std::size_t s) const {
    return v.data() + ((path * times + t) * sites + s) * dim;
  }
  // Value on a path given S_t (K values; ignored in per-path mode).
  void eval(std::size_t path, std::size_t t, std::size_t s, const double* S, double* out) const;
  double max_abs() const;
};

// sqrt(sum (1 + varpi)^beta |psi|^2 nu) for one time slice of values (sites x dim).
double hnorm(std::span<const double> values, const ThetaGrid& grid, int order, double beta);
// E ||field_t||^2_{H_beta} for an affine table slice, exact under the Gaussian basis.
double expected_hnorm_sq(const FieldTable& f, std::size_t t, const ThetaGrid& grid, int order,
                         double beta, const GaussianBasis& basis, double dt);

struct BseeSolution {
  FieldTable P;     // times n_steps+1
  FieldTable Q;     // times n_steps
  FieldTable cont;  // E_m[e^{-varpi dt} P_{m+1}], times n_steps
};

// Node-wise left-point solve P_m = cont_m + G_m dt with cont_m = E_m[e^{-varpi dt} P_{m+1}]
// and Q_m = E_m[e^{-varpi dt} P_{m+1} dW_m] / dt. `terminal` has times 1, G has n_steps.
BseeSolution trivial_bsee_solve(const FieldTable& terminal, const FieldTable& G,
                                const ThetaGrid& grid, int order, const GaussianBasis& basis,
                                const TimeGrid& tgrid);

// Fills G (times n_steps) from the iterate's continuation and Q tables.
using GeneratorMap = std::function<void(const FieldTable& cont, const FieldTable& Q, FieldTable& G)>;

struct PicardOptions {
  double tol = 1e-10;
  std::size_t max_iter = 200;
  bool symmetrize = false;     // order 2: symmetrize every iterate
  double symmetry_tol = 1e-8;  // relative bound on the pre-symmetrization asymmetry
};

struct PicardResult {
  BseeSolution sol;
  std::vector<double> distances;  // S_{T,alpha} distance between successive iterates
  std::size_t iterations = 0;
  double max_asymmetry = 0.0;
};

// Plain Picard iteration starting from the trivial solve with G evaluated at (0, 0).
// Throws std::runtime_error on max_iter or on three consecutive distance ratios >= 1.
PicardResult picard_bsee_solve(const FieldTable& terminal, const GeneratorMap& gen,
                               const ThetaGrid& grid, int order, const GaussianBasis& basis,
                               const TimeGrid& tgrid, PicardOptions opts = {});

// d^2 = sum_m dt (T - t_m)^alpha E[ |dP_m|^2_{H_{1+alpha}} + |dQ_m|^2_{H_alpha} ].
double st_alpha_distance(const BseeSolution& a, const BseeSolution& b, const ThetaGrid& grid,
                         int order, const GaussianBasis& basis, const TimeGrid& tgrid);

enum class SolvePath { deterministic, gaussian, lsmc };
std::string to_string(SolvePath p);

// Derivative tables along the reference path (deterministic and Gaussian paths).
struct DerivTables {
  std::vector<double> bx, sx, fx;     // per step: n*n, n*n, n
  std::vector<double> bxx, sxx, fxx;  // per step: n^3, n^3, n*n
  std::vector<double> hx, hxx;        // at X_N (reference path): n, n*n
};

struct AdjointOptions {
  bool allow_lsmc = false;
  int lsmc_degree = 1;
  PicardOptions picard;
};

struct AdjointSolution {
  SolvePath path = SolvePath::deterministic;
  ThetaGrid grid;
  TimeGrid tgrid;
  std::size_t n = 1;
  GaussianBasis basis;
  DerivTables deriv;

  // First order; pb = mu[M_b' cont], qs = mu[M_sigma' q] per step (sites 1).
  FieldTable p, q, cont, pb, qs;
  std::vector<double> first_distances;
  std::size_t first_iterations = 0;

  // Second order (node pairs, n x n). Contractions per step:
  //   C = mu2[M_s' Pc M_s], Ab(th2) = mu[M_b' Pc(., th2)], Bb(th1) = mu[Pc(th1, .) M_b],
  //   As(th2) = mu[M_s' Q(., th2)], Bs(th1) = mu[Q(th1, .) M_s],
  //   Cb = mu2[M_b' Pc M_b], Cbs = mu2[M_b' Q M_s].
  bool has_second = false;
  FieldTable P, Q, Pcont, C, Ab, Bb, As, Bs, Cb, Cbs;
  std::vector<double> second_distances;
  std::size_t second_iterations = 0;
  double max_asymmetry = 0.0;

  // S_m for m = 0..n_steps along a path (empty when K = 0).
  std::vector<double> S_path(const BrownianEnsemble& ens, std::size_t path) const {
    return basis.path_values(ens, path);
  }
};

// Picks the solve path by probing the derivative tables along every path: deterministic when
// all used tables agree across paths; Gaussian for state-free dynamics with affine h_x,
// deterministic f-derivatives and a deterministic control; LSMC only when allowed (first order).
SolvePath select_solve_path(const CoefficientSet& c, const ControlPath& u_hat,
                            const StateEnsemble& x_hat, const TimeGrid& tgrid, int order,
                            bool allow_lsmc, std::string* diagnostic = nullptr);

// xi is needed only for the LSMC path (lift regressors).
AdjointSolution assemble_first_adjoint(const CoefficientSet& c, const ControlPath& u_hat,
                                       const StateEnsemble& x_hat,
                                       const kernels::DiscreteLaplaceKernel& k,
                                       std::span<const double> xi, const BrownianEnsemble& ens,
                                       AdjointOptions opts = {});

void assemble_second_adjoint(const CoefficientSet& c, AdjointSolution& adj,
                             const kernels::DiscreteLaplaceKernel& k, const ControlPath& u_hat,
                             const StateEnsemble& x_hat, AdjointOptions opts = {});

// E int (T-t)^alpha |p_t|^2_{H_{1+alpha}} dt and E int (T-t)^alpha |q_t|^2_{H_alpha} dt.
struct EstimateTerms {
  double p_term = 0.0;
  double q_term = 0.0;
};
EstimateTerms estimate_terms(const AdjointSolution& adj, int order);

}  // namespace volterra::bsee
