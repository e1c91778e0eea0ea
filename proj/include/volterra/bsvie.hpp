#pragma once

// Bridge from solved adjoint BSEEs to Volterra-form backward equations, checked by residual.
// Every conditional expectation is read off the affine-Gaussian representation of the
// adjoints, so the discrete identities hold to rounding on the time grid.

#include <cstddef>
#include <string>
#include <vector>

#include "volterra/bsee.hpp"
#include "volterra/coefficients.hpp"
#include "volterra/kernels.hpp"
#include "volterra/simulate.hpp"

namespace volterra::bsvie {

struct BridgeOptions {
  bool allow_singular = false;  // alpha > 0: no correctness claim
  std::size_t r_subgrid = 8;    // r points at which the third and fourth equations are reported
};

// First-order tuple. pV1, pV2 are affine tables (c + D S_m, K+1 columns); qV1, qV2 are
// deterministic. qV2 holds q^V_2(s, t) at index (s*N + t)*n for t < s.
struct FirstTuple {
  TimeGrid tgrid;
  std::size_t n = 1;
  bsee::GaussianBasis basis;
  bsee::FieldTable pV1;  // times N+1
  bsee::FieldTable pV2;  // times N
  std::vector<double> qV1;  // N x n
  std::vector<double> qV2;  // N x N x n
};

FirstTuple bsee_to_bsvie_first(const bsee::AdjointSolution& adj, const kernels::DiscreteLaplaceKernel& k,
                               BridgeOptions opts = {});

struct ResidualRow {
  std::string equation;
  double t = 0.0;
  double r = 0.0;  // second time argument where the equation has one, else t
  double residual = 0.0;
};

struct FirstResiduals {
  double line1 = 0.0;         // p^V_1(t) + int_t^T q^V_1 dW + h_x(X_T), max over paths
  double line2 = 0.0;         // Volterra form of p^V_2, coefficient-wise
  double m_constraint = 0.0;  // p^V_2(s) - E p^V_2(s) - int_0^s q^V_2(s, .) dW, max over paths
  std::vector<ResidualRow> rows;
};

// Derivatives are re-evaluated from the coefficients along path 0 of x_hat.
FirstResiduals bsvie_residual_first(const FirstTuple& tup, const CoefficientSet& c,
                                    const ControlPath& u_hat, const StateEnsemble& x_hat,
                                    const kernels::DiscreteLaplaceKernel& k, const BrownianEnsemble& ens);

// Largest deviation of (p, q) rebuilt from the tuple against the solved adjoints.
double first_roundtrip(const FirstTuple& tup, const bsee::AdjointSolution& adj,
                       const kernels::DiscreteLaplaceKernel& k);

// Second-order tuple on deterministic adjoints (n x n blocks, Q^V identically zero).
//   calP_m(th)  = e^{-th dt} calP_{m+1} + P2(m) dt,  calP_N = -h_xx
//   sP^r_r(th)  = P3(r) + F_r(th),  sP^r_m = e^{-th dt} sP^r_{m+1} + P4(r, m) dt  (m < r)
// and P_m(th1, th2) = e^{-th2 (N-m) dt} calP_m(th1) + sum_{r>=m} e^{-th2 (r-m) dt} sP^r_m(th1) dt.
struct SecondTuple {
  TimeGrid tgrid;
  std::size_t n = 1;
  std::size_t nodes = 0;
  std::vector<double> PV1;   // (N+1) x n x n
  std::vector<double> PV2;   // N x n x n
  std::vector<double> PV3;   // N x n x n
  std::vector<double> PV4;   // (r*N + m) x n x n, m < r
  std::vector<double> calP;  // (N+1) x nodes x n x n
  std::vector<double> F;     // N x nodes x n x n
  std::vector<double> sP;    // (r*(N+1) + m) x nodes x n x n, m <= r
  std::vector<std::size_t> r_points;

  const double* sp(std::size_t r, std::size_t m, std::size_t i) const {
    return sP.data() + ((r * (tgrid.n_steps + 1) + m) * nodes + i) * n * n;
  }
};

SecondTuple bsee_to_bsvie_second(const bsee::AdjointSolution& adj, const kernels::DiscreteLaplaceKernel& k,
                                 BridgeOptions opts = {});

struct SecondResiduals {
  double eq1 = 0.0, eq2 = 0.0, eq3 = 0.0, eq4 = 0.0;
  double m_constraint = 0.0;  // Q^V tables are identically zero in the deterministic regime
  std::vector<ResidualRow> rows;
};

SecondResiduals bsvie_residual_second(const SecondTuple& tup, const CoefficientSet& c,
                                      const ControlPath& u_hat, const StateEnsemble& x_hat,
                                      const kernels::DiscreteLaplaceKernel& k);

// Largest deviation of P rebuilt from (calP, sP) against the solved second-order adjoint.
double second_roundtrip(const SecondTuple& tup, const bsee::AdjointSolution& adj,
                        const kernels::DiscreteLaplaceKernel& k);

}  // namespace volterra::bsvie
