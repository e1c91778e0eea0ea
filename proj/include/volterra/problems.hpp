#pragma once

// Bundled scalar test problems built on the polynomial coefficient family.

#include <memory>
#include <string>
#include <vector>

#include "volterra/coefficients.hpp"

namespace volterra::problems {

struct ProblemSpec {
  std::string name;
  PolyParams params;
  double x0 = 1.0;
  double u_hat = 0.0;     // constant reference control
  double v = 1.0;         // spike replacement value
  std::vector<double> U;  // control grid
};

//   lq         b = a x + b1 u, sigma = s0, f = phi x + r u^2/2, h = ch x          (deterministic adjoints)
//   statefree  b = b1 u, sigma = s0 + u, f = r u^2/2, h = ch x + h2 x^2/2         (Gaussian adjoints)
//   rates      b = a x + b1 u, sigma = s1 x + u (1 + e x)                          (spike-rate sweeps)
//   deltaj     b = a x + c x^2/2 + u, sigma = s0 + s1 x, quadratic f and h         (delta-J smallness)
//   j12_det    b = a x + c x^2/2 + u (b1 + e x), sigma = 0, quadratic f and h      (deterministic J12)
//   det_sigma  drift and diffusion vanish at x0 under u = 0, so X-hat = x0 while b_x, sigma_x != 0
const std::vector<std::string>& preset_names();

// Throws std::invalid_argument naming the known presets.
ProblemSpec preset(const std::string& name);

std::unique_ptr<PolyCoefficients> build(const ProblemSpec& spec);

}  // namespace volterra::problems
