#include "volterra/problems.hpp"

#include <stdexcept>

namespace volterra::problems {

namespace {

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"lq", "statefree", "rates", "deltaj", "j12_det", "det_sigma"};
  return names;
}

ProblemSpec preset(const std::string& name) {
  ProblemSpec s;
  s.name = name;
  PolyParams& p = s.params;
  if (name == "lq") {
    p.a = -0.5;
    p.b1 = 1.0;
    p.s0 = 0.3;
    p.phi = 0.4;
    p.r = 1.0;
    p.ch = 0.8;
    s.x0 = 1.0;
    s.u_hat = 0.0;
    s.v = 1.0;
    s.U = linspace(-2.0, 2.0, 9);
  } else if (name == "statefree") {
    p.b1 = 1.0;
    p.s0 = 0.4;
    p.sb = 1.0;
    p.r = 1.0;
    p.ch = 0.5;
    p.h2 = 1.0;
    s.x0 = 0.5;
    s.u_hat = 0.0;
    s.v = 0.5;
    s.U = linspace(-1.0, 1.0, 5);
  } else if (name == "rates") {
    p.a = -0.3;
    p.b1 = 1.0;
    p.s1 = 0.2;
    p.sb = 1.0;
    p.e = 0.0;
    p.es = 0.5;
    p.phi = 0.2;
    p.q = 0.5;
    p.r = 1.0;
    p.ch = 0.5;
    p.h2 = 0.5;
    s.x0 = 1.0;
    s.u_hat = 0.0;
    s.v = 1.0;
    s.U = linspace(-1.0, 1.0, 5);
  } else if (name == "deltaj") {
    p.a = -0.2;
    p.c = 0.3;
    p.b1 = 1.0;
    p.s0 = 0.3;
    p.s1 = 0.2;
    p.phi = 0.2;
    p.q = 0.5;
    p.r = 1.0;
    p.ch = 0.5;
    p.h2 = 0.5;
    s.x0 = 1.0;
    s.u_hat = 0.0;
    s.v = 1.0;
    s.U = linspace(-1.0, 1.0, 5);
  } else if (name == "j12_det") {
    p.a = -0.2;
    p.c = 0.3;
    p.b1 = 1.0;
    p.e = 0.4;
    p.phi = 0.2;
    p.q = 0.5;
    p.r = 1.0;
    p.ch = 0.5;
    p.h2 = 0.5;
    s.x0 = 1.0;
    s.u_hat = 0.0;
    s.v = 1.0;
    s.U = linspace(-1.0, 1.0, 5);
  } else if (name == "det_sigma") {
    p.a = -0.4;
    p.c = 0.3;
    p.s1 = 0.5;
    p.b1 = 1.0;
    p.sb = 0.5;
    p.phi = 0.2;
    p.q = 0.5;
    p.r = 1.0;
    p.ch = 0.5;
    p.h2 = 0.8;
    s.x0 = 1.0;
    p.b0 = -p.a * s.x0 - 0.5 * p.c * s.x0 * s.x0;
    p.s0 = -p.s1 * s.x0;
    s.u_hat = 0.0;
    s.v = 1.0;
    s.U = linspace(-1.0, 1.0, 5);
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown problem '" + name + "' (known: " + known + ")");
  }
  return s;
}

std::unique_ptr<PolyCoefficients> build(const ProblemSpec& spec) {
  if (spec.U.empty()) throw std::invalid_argument("problem: empty control grid");
  return std::make_unique<PolyCoefficients>(spec.params, ControlDomain::grid(spec.U), spec.name);
}

}  // namespace volterra::problems
