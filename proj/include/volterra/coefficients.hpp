#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace volterra {

// Control domain U. Checks always run over `points` (dim values per point); an interval
// domain carries its bounds and a sampling grid.
struct ControlDomain {
  std::size_t dim = 1;
  std::vector<double> points;
  bool is_interval = false;
  double lo = 0.0;
  double hi = 0.0;

  std::size_t size() const { return dim == 0 ? 0 : points.size() / dim; }
  const double* point(std::size_t i) const { return points.data() + i * dim; }
  bool contains(const double* u, double tol = 1e-12) const;

  static ControlDomain grid(std::vector<double> pts);
  static ControlDomain interval(double lo, double hi, std::size_t n_samples);
};

struct StructureTags {
  bool linear_in_state = false;  // b, sigma affine in x
  bool state_free = false;       // b, sigma independent of x
  bool control_affine = false;   // b, sigma affine in u
};

// Deterministic coefficients b, sigma, f, h and their state derivatives.
// Layouts (row-major): b_x[i*n+j] = d b_i / d x_j; b_xx[(i*n+j)*n+k] = d^2 b_i / d x_j d x_k;
// f_x, h_x are length n; f_xx, h_xx are n x n.
class CoefficientSet {
 public:
  virtual ~CoefficientSet() = default;

  virtual std::size_t n() const = 0;
  virtual std::size_t control_dim() const { return 1; }
  virtual std::string name() const = 0;

  virtual void b(double t, const double* u, const double* x, double* out) const = 0;
  virtual void sigma(double t, const double* u, const double* x, double* out) const = 0;
  virtual double f(double t, const double* u, const double* x) const = 0;
  virtual double h(const double* x) const = 0;

  virtual void b_x(double t, const double* u, const double* x, double* out) const = 0;
  virtual void sigma_x(double t, const double* u, const double* x, double* out) const = 0;
  virtual void f_x(double t, const double* u, const double* x, double* out) const = 0;
  virtual void h_x(const double* x, double* out) const = 0;

  virtual void b_xx(double t, const double* u, const double* x, double* out) const = 0;
  virtual void sigma_xx(double t, const double* u, const double* x, double* out) const = 0;
  virtual void f_xx(double t, const double* u, const double* x, double* out) const = 0;
  virtual void h_xx(const double* x, double* out) const = 0;

  StructureTags tags;
  ControlDomain U;
  double lipschitz_kappa = 0.0;  // reported only
};

struct SelfTestReport {
  bool passed = true;
  double max_rel_err = 0.0;
  std::string worst;  // evaluator with the largest discrepancy
};

// Central finite differences of the value evaluators against the derivative evaluators at
// seeded random (t, u, x); relative error measured against max(1, |analytic|).
SelfTestReport finite_difference_self_test(const CoefficientSet& c, std::uint64_t seed,
                                           std::size_t samples = 32, double tol = 1e-6);

// Scalar polynomial family:
//   b = b0 + a x + c/2 x^2 + u (b1 + e x)
//   sigma = s0 + s1 x + cs/2 x^2 + u (sb + es x)
//   f = phi x + q/2 x^2 + r/2 u^2,   h = ch x + h2/2 x^2
struct PolyParams {
  double b0 = 0, a = 0, c = 0, b1 = 0, e = 0;
  double s0 = 0, s1 = 0, cs = 0, sb = 0, es = 0;
  double phi = 0, q = 0, r = 0;
  double ch = 0, h2 = 0;
};

class PolyCoefficients final : public CoefficientSet {
 public:
  PolyCoefficients(PolyParams p, ControlDomain u, std::string name);

  std::size_t n() const override { return 1; }
  std::string name() const override { return name_; }
  const PolyParams& params() const { return p_; }

  void b(double, const double* u, const double* x, double* out) const override;
  void sigma(double, const double* u, const double* x, double* out) const override;
  double f(double, const double* u, const double* x) const override;
  double h(const double* x) const override;
  void b_x(double, const double* u, const double* x, double* out) const override;
  void sigma_x(double, const double* u, const double* x, double* out) const override;
  void f_x(double, const double* u, const double* x, double* out) const override;
  void h_x(const double* x, double* out) const override;
  void b_xx(double, const double* u, const double* x, double* out) const override;
  void sigma_xx(double, const double* u, const double* x, double* out) const override;
  void f_xx(double, const double* u, const double* x, double* out) const override;
  void h_xx(const double* x, double* out) const override;

 private:
  PolyParams p_;
  std::string name_;
};

// n-dimensional linear-quadratic family with scalar control:
//   b = A x + B u,  sigma = S x + s0 + su u,  f = x'Qx/2 + phi'x + r u^2/2,  h = c'x + x'Hx/2
struct LinearParams {
  std::size_t n = 1;
  std::vector<double> A, B, S, s0, su, Q, phi, c, H;
  double r = 0.0;
};

class LinearCoefficients final : public CoefficientSet {
 public:
  LinearCoefficients(LinearParams p, ControlDomain u, std::string name);

  std::size_t n() const override { return p_.n; }
  std::string name() const override { return name_; }

  void b(double, const double* u, const double* x, double* out) const override;
  void sigma(double, const double* u, const double* x, double* out) const override;
  double f(double, const double* u, const double* x) const override;
  double h(const double* x) const override;
  void b_x(double, const double* u, const double* x, double* out) const override;
  void sigma_x(double, const double* u, const double* x, double* out) const override;
  void f_x(double, const double* u, const double* x, double* out) const override;
  void h_x(const double* x, double* out) const override;
  void b_xx(double, const double* u, const double* x, double* out) const override;
  void sigma_xx(double, const double* u, const double* x, double* out) const override;
  void f_xx(double, const double* u, const double* x, double* out) const override;
  void h_xx(const double* x, double* out) const override;

 private:
  LinearParams p_;
  std::string name_;
};

}  // namespace volterra
