#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace volterra::kernels {

enum class Which { b, sigma };

enum class Family { fractional, constant, exponential, mixture, custom };

std::string to_string(Family f);

// Tag recording which analytic kernel pair a discrete representation approximates.
struct AnalyticRef {
  Family family = Family::custom;
  double beta_b = 1.0;
  double beta_sigma = 1.0;
  double lambda = 0.0;
};

// One scalar kernel family times an n x n factor.
//   fractional: t^{beta-1}/Gamma(beta); constant: 1; exponential: e^{-lambda t};
//   mixture: sum_k c_k e^{-lambda_k t} (weights/rates in mix_weights/mix_rates).
struct AnalyticKernel {
  Family family = Family::constant;
  double beta = 1.0;
  double lambda = 0.0;
  std::vector<double> mix_weights;
  std::vector<double> mix_rates;
  std::size_t n = 1;
  std::vector<double> factor;  // n x n, defaults to identity when empty

  double scalar(double t) const;
  // Matrix value at t into out (n*n).
  void eval(double t, std::span<double> out) const;
};

struct AnalyticPair {
  AnalyticKernel b;
  AnalyticKernel sigma;
  const AnalyticKernel& get(Which w) const { return w == Which::b ? b : sigma; }
};

AnalyticKernel fractional(double beta, std::size_t n = 1);
AnalyticKernel constant(std::size_t n = 1);
AnalyticKernel exponential(double lambda, std::size_t n = 1);

// Finite-atom Laplace representation K(t) = sum_i w_i e^{-theta_i t} M(theta_i).
struct DiscreteLaplaceKernel {
  std::size_t n = 1;
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> mb;      // node-major n x n blocks
  std::vector<double> msigma;  // node-major n x n blocks
  double alpha = 0.0;
  std::optional<AnalyticRef> analytic_ref;

  std::size_t size() const { return nodes.size(); }
  const double* m(Which w, std::size_t i) const {
    return (w == Which::b ? mb.data() : msigma.data()) + i * n * n;
  }
  // Throws std::invalid_argument naming the violated invariant.
  void validate() const;
  void eval(Which w, double t, std::span<double> out) const;
};

struct ValidatorReport {
  double sum_r_weights = 0.0;      // sum w_i r(theta_i)
  double mb_weighted = 0.0;        // sum (1+theta)^{-alpha} r |M_b|^2 w
  double msigma_weighted = 0.0;    // sum (1+theta)^{1-alpha} r |M_sigma|^2 w
};

ValidatorReport validate_report(const DiscreteLaplaceKernel& k);

// r(theta) = 1 ^ theta^{-1/2}
inline double r_weight(double theta) { return theta <= 1.0 ? 1.0 : 1.0 / std::sqrt(theta); }

struct GammaInterval {
  double lo = 0.5;
  double hi = 0.5;
  double midpoint() const { return 0.5 * (lo + hi); }
  bool feasible() const { return hi > lo; }
};

// Admissible gamma for the power-law lift at singularity index alpha.
GammaInterval gamma_interval(double beta_b, double beta_sigma, double alpha);

DiscreteLaplaceKernel build_fractional_lift(double beta_b, double beta_sigma, double gamma,
                                            double theta_min, double theta_max, std::size_t n_nodes,
                                            double alpha);

// mu = delta_0 with M_b = M_sigma = scale * I: the constant kernel.
DiscreteLaplaceKernel delta0_kernel(std::size_t n = 1, double scale = 1.0);
// Single node theta=lambda, weight 1, M = I: the exponential kernel e^{-lambda t}.
DiscreteLaplaceKernel exponential_kernel(double lambda, std::size_t n = 1);

void kernel_eval(const DiscreteLaplaceKernel& k, Which w, double t, std::span<double> out);
void kernel_eval(const AnalyticPair& k, Which w, double t, std::span<double> out);

// ||K||_{q,eps}: L^q norm of the Frobenius norm of K on (0, eps). Kernels are assumed
// non-increasing in norm so the sup over windows of length eps sits at [0, eps].
double knorm_eps(const AnalyticKernel& k, double q, double eps);
double knorm_eps(const DiscreteLaplaceKernel& k, Which w, double q, double eps);
// Adaptive quadrature value for the analytic kernel, bypassing the closed form.
double knorm_eps_numeric(const AnalyticKernel& k, double q, double eps);
// Membership K in L^q(0,T) for the fractional family: q(beta-1)+1 > 0.
bool fractional_in_lq(double beta, double q);

struct QuadratureReport {
  double sup_abs = 0.0;
  double sup_rel = 0.0;
};

QuadratureReport quadrature_error(const DiscreteLaplaceKernel& k, std::span<const double> t_grid);

AnalyticPair analytic_from_ref(const AnalyticRef& ref, std::size_t n);

}  // namespace volterra::kernels
