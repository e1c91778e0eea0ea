#include "volterra/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include <json.hpp>

#include "volterra/bsde.hpp"
#include "volterra/bsee.hpp"
#include "volterra/bsvie.hpp"
#include "volterra/maxprinciple.hpp"
#include "volterra/problems.hpp"
#include "volterra/simulate.hpp"
#include "volterra/variation.hpp"

namespace volterra::harness {

using nlohmann::json;

// ---------------------------------------------------------------------------------------------
// Config

namespace {

// Typed access to one JSON object; every key must be claimed by a getter before finish().
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }
  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& raw(const std::string& key) { return j_.at(key); }

  double num(const std::string& key, double dflt) {
    if (!has(key)) return dflt;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(at(key), "must be finite");
    return d;
  }
  std::uint64_t uint(const std::string& key, std::uint64_t dflt) {
    if (!has(key)) return dflt;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(at(key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }
  bool flag(const std::string& key, bool dflt) {
    if (!has(key)) return dflt;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(at(key), "expected true or false");
    return v.get<bool>();
  }
  std::string str(const std::string& key, const std::string& dflt) {
    if (!has(key)) return dflt;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(at(key), "expected a string");
    return v.get<std::string>();
  }
  std::vector<double> nums(const std::string& key, std::vector<double> dflt) {
    if (!has(key)) return dflt;
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(at(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(at(it.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

double* poly_field(PolyParams& p, const std::string& name) {
  static const std::map<std::string, double PolyParams::*> fields{
      {"b0", &PolyParams::b0}, {"a", &PolyParams::a},     {"c", &PolyParams::c},   {"b1", &PolyParams::b1},
      {"e", &PolyParams::e},   {"s0", &PolyParams::s0},   {"s1", &PolyParams::s1}, {"cs", &PolyParams::cs},
      {"sb", &PolyParams::sb}, {"es", &PolyParams::es},   {"phi", &PolyParams::phi}, {"q", &PolyParams::q},
      {"r", &PolyParams::r},   {"ch", &PolyParams::ch},   {"h2", &PolyParams::h2}};
  const auto it = fields.find(name);
  return it == fields.end() ? nullptr : &(p.*(it->second));
}

const std::vector<std::string>& poly_names() {
  static const std::vector<std::string> names{"b0", "a", "c", "b1", "e", "s0", "s1", "cs",
                                              "sb", "es", "phi", "q", "r", "ch", "h2"};
  return names;
}

void require(bool ok, const std::string& path, const std::string& msg) {
  if (!ok) throw ConfigError(path, msg);
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("JSON parse error: ") + e.what());
  }
  ExperimentConfig cfg;
  Obj top(root, "");

  if (top.has("kernel")) {
    Obj o(top.raw("kernel"), "kernel");
    auto& k = cfg.kernel;
    k.family = o.str("family", k.family);
    require(k.family == "fractional" || k.family == "constant" || k.family == "exponential", o.at("family"),
            "must be one of fractional, constant, exponential (got '" + k.family + "')");
    k.beta_b = o.num("beta_b", k.beta_b);
    k.beta_sigma = o.num("beta_sigma", k.beta_sigma);
    k.alpha = o.num("alpha", k.family == "fractional" ? 1.0 / 3.0 : 0.0);
    k.lambda = o.num("lambda", k.lambda);
    k.scale = o.num("scale", k.scale);
    o.finish();
  } else {
    cfg.kernel.alpha = 1.0 / 3.0;
  }
  require(cfg.kernel.beta_b > 0.5 && cfg.kernel.beta_b <= 1.0, "kernel.beta_b", "must lie in (1/2, 1]");
  require(cfg.kernel.beta_sigma > 0.5 && cfg.kernel.beta_sigma <= 1.0, "kernel.beta_sigma", "must lie in (1/2, 1]");
  require(cfg.kernel.alpha >= 0.0 && cfg.kernel.alpha < 1.0, "kernel.alpha", "must lie in [0, 1)");
  require(cfg.kernel.lambda >= 0.0, "kernel.lambda", "must be >= 0");

  bool gamma_given = false;
  if (top.has("theta_grid")) {
    Obj o(top.raw("theta_grid"), "theta_grid");
    auto& t = cfg.theta;
    t.theta_min = o.num("theta_min", t.theta_min);
    t.theta_max = o.num("theta_max", t.theta_max);
    t.n_nodes = o.uint("n_nodes", t.n_nodes);
    gamma_given = o.has("gamma");
    t.gamma = o.num("gamma", 0.0);
    o.finish();
  }
  require(cfg.theta.theta_min > 0.0 && cfg.theta.theta_max > cfg.theta.theta_min, "theta_grid",
          "need 0 < theta_min < theta_max");
  require(cfg.theta.n_nodes >= 2, "theta_grid.n_nodes", "need at least 2 nodes");
  if (cfg.kernel.family == "fractional") {
    const auto gi = kernels::gamma_interval(cfg.kernel.beta_b, cfg.kernel.beta_sigma, cfg.kernel.alpha);
    require(gi.feasible(), "kernel.alpha", "no admissible gamma for these (beta_b, beta_sigma, alpha)");
    if (!gamma_given) cfg.theta.gamma = gi.midpoint();
    require(cfg.theta.gamma > gi.lo && cfg.theta.gamma < gi.hi, "theta_grid.gamma",
            "outside the admissible interval (" + fmt(gi.lo) + ", " + fmt(gi.hi) + ")");
  }

  if (top.has("grid")) {
    Obj o(top.raw("grid"), "grid");
    cfg.grid.T = o.num("T", cfg.grid.T);
    cfg.grid.n_steps = o.uint("n_steps", cfg.grid.n_steps);
    cfg.grid.n_paths = o.uint("n_paths", cfg.grid.n_paths);
    o.finish();
  }
  require(cfg.grid.T > 0.0, "grid.T", "must be > 0");
  require(cfg.grid.n_steps >= 8, "grid.n_steps", "must be >= 8");
  require(cfg.grid.n_paths >= 2, "grid.n_paths", "must be >= 2");

  std::string pname = cfg.problem.name;
  std::map<std::string, double> overrides;
  std::vector<double> U;
  double x0 = NAN, u_hat = NAN;
  if (top.has("problem")) {
    Obj o(top.raw("problem"), "problem");
    pname = o.str("name", pname);
    if (o.has("params")) {
      const json& pj = o.raw("params");
      require(pj.is_object(), "problem.params", "expected an object");
      for (auto it = pj.begin(); it != pj.end(); ++it) {
        PolyParams probe;
        require(poly_field(probe, it.key()) != nullptr, "problem.params." + it.key(), "unknown key");
        require(it.value().is_number(), "problem.params." + it.key(), "expected a number");
        overrides[it.key()] = it.value().get<double>();
      }
    }
    x0 = o.num("x0", NAN);
    u_hat = o.num("u_hat", NAN);
    U = o.nums("U", {});
    o.finish();
  }
  problems::ProblemSpec spec;
  try {
    spec = problems::preset(pname);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("problem.name", e.what());
  }
  for (const auto& [key, val] : overrides) *poly_field(spec.params, key) = val;
  cfg.problem.name = pname;
  for (const auto& nm : poly_names()) cfg.problem.params[nm] = *poly_field(spec.params, nm);
  cfg.problem.x0 = std::isnan(x0) ? spec.x0 : x0;
  cfg.problem.u_hat = std::isnan(u_hat) ? spec.u_hat : u_hat;
  cfg.problem.U = U.empty() ? spec.U : U;
  {
    const ControlDomain dom = ControlDomain::grid(cfg.problem.U);
    require(dom.contains(&cfg.problem.u_hat), "problem.u_hat", "must be a point of U");
  }

  const double dt = cfg.grid.T / static_cast<double>(cfg.grid.n_steps);
  std::vector<double> eps_default;
  for (int j = 2; j <= 5; ++j) eps_default.push_back(cfg.grid.T * std::ldexp(1.0, -j));
  double v = spec.v;
  if (top.has("spike")) {
    Obj o(top.raw("spike"), "spike");
    cfg.spike.tau = o.num("tau", cfg.spike.tau);
    cfg.spike.eps = o.nums("eps", eps_default);
    v = o.num("v", v);
    cfg.spike.p = o.num("p", cfg.spike.p);
    o.finish();
  } else {
    cfg.spike.eps = eps_default;
  }
  cfg.spike.v = v;
  {
    const ControlDomain dom = ControlDomain::grid(cfg.problem.U);
    require(dom.contains(&cfg.spike.v), "spike.v", "must be a point of U");
  }
  const auto& eps = cfg.spike.eps;
  require(eps.size() >= 4, "spike.eps", "need at least 4 values");
  require(cfg.spike.p >= 2.0, "spike.p", "must be >= 2");
  require(cfg.spike.tau >= 0.0, "spike.tau", "must be >= 0");
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const std::string at = "spike.eps[" + std::to_string(i) + "]";
    const double steps = eps[i] / dt;
    require(eps[i] > 0.0 && std::abs(steps - std::round(steps)) <= 1e-9 * std::max(1.0, steps), at,
            "must be a positive multiple of T/n_steps");
    require(std::round(steps) >= 4, at, "must span at least 4 steps");
    require(cfg.spike.tau + eps[i] <= cfg.grid.T + 1e-12, at, "tau + eps exceeds T");
    if (i > 1)
      require(std::abs(eps[i] / eps[i - 1] - eps[1] / eps[0]) <= 1e-9, at, "eps list must be geometric");
  }

  if (top.has("solver")) {
    Obj o(top.raw("solver"), "solver");
    auto& s = cfg.solver;
    s.tol = o.num("tol", s.tol);
    s.max_iter = o.uint("max_iter", s.max_iter);
    s.lsmc = o.flag("lsmc", s.lsmc);
    s.basis_degree = static_cast<int>(o.uint("basis_degree", static_cast<std::uint64_t>(s.basis_degree)));
    s.allow_singular = o.flag("allow_singular", s.allow_singular);
    s.r_subgrid = o.uint("r_subgrid", s.r_subgrid);
    o.finish();
  }
  require(cfg.solver.tol > 0.0, "solver.tol", "must be > 0");
  require(cfg.solver.max_iter >= 1, "solver.max_iter", "must be >= 1");
  require(cfg.solver.basis_degree >= 1 && cfg.solver.basis_degree <= 4, "solver.basis_degree", "must lie in 1..4");
  require(cfg.solver.r_subgrid >= 4, "solver.r_subgrid", "need at least 4 points");

  cfg.seed = top.uint("seed", cfg.seed);
  cfg.output_dir = top.str("output_dir", cfg.output_dir);
  top.finish();
  return cfg;
}

ExperimentConfig resolve_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("<file>", "cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig& cfg) {
  json j;
  j["kernel"] = {{"family", cfg.kernel.family}, {"beta_b", cfg.kernel.beta_b},
                 {"beta_sigma", cfg.kernel.beta_sigma}, {"alpha", cfg.kernel.alpha},
                 {"lambda", cfg.kernel.lambda}, {"scale", cfg.kernel.scale}};
  j["theta_grid"] = {{"theta_min", cfg.theta.theta_min}, {"theta_max", cfg.theta.theta_max},
                     {"n_nodes", cfg.theta.n_nodes}, {"gamma", cfg.theta.gamma}};
  j["grid"] = {{"T", cfg.grid.T}, {"n_steps", cfg.grid.n_steps}, {"n_paths", cfg.grid.n_paths}};
  json params = json::object();
  for (const auto& [k, v] : cfg.problem.params) params[k] = v;
  j["problem"] = {{"name", cfg.problem.name}, {"params", params}, {"x0", cfg.problem.x0},
                  {"u_hat", cfg.problem.u_hat}, {"U", cfg.problem.U}};
  j["spike"] = {{"tau", cfg.spike.tau}, {"eps", cfg.spike.eps}, {"v", cfg.spike.v}, {"p", cfg.spike.p}};
  j["solver"] = {{"tol", cfg.solver.tol}, {"max_iter", cfg.solver.max_iter}, {"lsmc", cfg.solver.lsmc},
                 {"basis_degree", cfg.solver.basis_degree}, {"allow_singular", cfg.solver.allow_singular},
                 {"r_subgrid", cfg.solver.r_subgrid}};
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  return j.dump(2) + "\n";
}

kernels::DiscreteLaplaceKernel build_kernel(const ExperimentConfig& cfg) {
  const auto& k = cfg.kernel;
  kernels::DiscreteLaplaceKernel out;
  if (k.family == "fractional") {
    out = kernels::build_fractional_lift(k.beta_b, k.beta_sigma, cfg.theta.gamma, cfg.theta.theta_min,
                                         cfg.theta.theta_max, cfg.theta.n_nodes, k.alpha);
  } else if (k.family == "constant") {
    out = kernels::delta0_kernel(1, k.scale);
    out.alpha = k.alpha;
  } else {
    out = kernels::exponential_kernel(k.lambda, 1);
    out.alpha = k.alpha;
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------------------------
// Tables

void ResultTable::add(std::vector<std::string> row) {
  if (row.size() != columns.size()) throw std::logic_error("table " + name + ": row width mismatch");
  rows.push_back(std::move(row));
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", v);
  return buf;
}

std::string fmt(std::size_t v) { return std::to_string(v); }

bool ExperimentResult::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"kernels", "simulate", "rates", "bsde-check", "adjoint",
                                              "duality", "mp-check", "bsvie-check", "all"};
  return names;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string csv_line(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + csv_cell(cells[i]);
  return out + "\r\n";
}

constexpr const char* kBodyTag = "# body_fnv1a64=";

}  // namespace

std::string render_csv(const ResultTable& t, const ExperimentConfig& cfg) {
  std::string body = csv_line(t.columns);
  for (const auto& r : t.rows) body += csv_line(r);
  std::string out;
  out += std::string("# volterra-smp ") + kVersion + "\r\n";
  out += "# table=" + t.name + "\r\n";
  ExperimentConfig id = cfg;
  id.output_dir.clear();  // where results land is not part of their identity
  out += "# config_fnv1a64=" + hex64(fnv1a64(dump_config(id))) + "\r\n";
  out += "# seed=" + std::to_string(cfg.seed) + "\r\n";
  out += kBodyTag + hex64(fnv1a64(body)) + "\r\n";
  return out + body;
}

ChecksumReport verify_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  ChecksumReport rep;
  const auto pos = text.find(kBodyTag);
  if (pos == std::string::npos) return rep;
  const auto eol = text.find("\r\n", pos);
  if (eol == std::string::npos) return rep;
  rep.expected = text.substr(pos + std::string(kBodyTag).size(), eol - pos - std::string(kBodyTag).size());
  rep.actual = hex64(fnv1a64(text.substr(eol + 2)));
  rep.ok = rep.expected == rep.actual;
  return rep;
}

void write_outputs(const ExperimentResult& r, const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  auto write = [&](const std::string& file, const std::string& text) {
    std::ofstream out(fs::path(cfg.output_dir) / file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + file + "' in " + cfg.output_dir);
    out << text;
  };
  write("resolved_config.json", dump_config(cfg));
  for (const auto& t : r.tables) write(t.name + ".csv", render_csv(t, cfg));
  ResultTable summary{"summary", {"experiment", "check", "value", "tol", "pass"}, {}};
  for (const auto& c : r.checks) summary.add({c.experiment, c.name, fmt(c.value), fmt(c.tol), c.pass ? "PASS" : "FAIL"});
  write("summary.csv", render_csv(summary, cfg));
}

// ---------------------------------------------------------------------------------------------
// Experiments

namespace {

struct Setup {
  explicit Setup(const ExperimentConfig& c)
      : cfg(c),
        spec(problems::preset(c.problem.name)),
        grid(c.grid.T, c.grid.n_steps),
        ens(grid, c.grid.n_paths, c.seed) {
    for (const auto& [key, val] : c.problem.params) *poly_field(spec.params, key) = val;
    spec.x0 = c.problem.x0;
    spec.u_hat = c.problem.u_hat;
    spec.v = c.spike.v;
    spec.U = c.problem.U;
    coeffs = problems::build(spec);
    k = build_kernel(c);
    xi = constant_forcing(grid, std::vector<double>{spec.x0});
    u_hat = ControlPath::constant(grid.n_steps, spec.u_hat);
    v = ControlPath::constant(grid.n_steps, spec.v);
  }
  bsee::AdjointOptions adjoint_options() const {
    bsee::AdjointOptions o;
    o.allow_lsmc = cfg.solver.lsmc;
    o.lsmc_degree = cfg.solver.basis_degree;
    o.picard.tol = cfg.solver.tol;
    o.picard.max_iter = cfg.solver.max_iter;
    return o;
  }
  // Second-order adjoints when the solve path supports them; false otherwise.
  bool try_second(bsee::AdjointSolution& adj, const ControlPath& u, const StateEnsemble& x) const {
    if (adj.path == bsee::SolvePath::lsmc) return false;
    try {
      bsee::assemble_second_adjoint(*coeffs, adj, k, u, x, adjoint_options());
    } catch (const std::invalid_argument&) {
      return false;
    }
    return true;
  }

  const ExperimentConfig& cfg;
  problems::ProblemSpec spec;
  TimeGrid grid;
  BrownianEnsemble ens;
  std::unique_ptr<PolyCoefficients> coeffs;
  kernels::DiscreteLaplaceKernel k;
  std::vector<double> xi;
  ControlPath u_hat, v;
};

void check(ExperimentResult& r, const std::string& exp, const std::string& name, double value, double tol,
           bool pass) {
  r.checks.push_back({exp, name, value, tol, pass});
}

ExperimentResult run_kernels(const Setup& s) {
  ExperimentResult r;
  ResultTable t{"kernels", {"quantity", "which", "argument", "value"}, {}};
  const auto& k = s.k;
  const auto rep = kernels::validate_report(k);
  t.add({"nodes", "-", "-", fmt(k.size())});
  t.add({"sum_r_weights", "-", "-", fmt(rep.sum_r_weights)});
  t.add({"mb_weighted", "b", "-", fmt(rep.mb_weighted)});
  t.add({"msigma_weighted", "sigma", "-", fmt(rep.msigma_weighted)});
  std::vector<double> ts;
  for (std::size_t i = 0; i < 100; ++i) ts.push_back(0.01 * s.grid.T + (0.99 * s.grid.T) * static_cast<double>(i) / 99.0);
  const auto q = kernels::quadrature_error(k, ts);
  t.add({"quadrature_sup_abs", "b,sigma", "[0.01T,T]", fmt(q.sup_abs)});
  t.add({"quadrature_sup_rel", "b,sigma", "[0.01T,T]", fmt(q.sup_rel)});
  const bool frac = s.cfg.kernel.family == "fractional";
  const double qtol = frac ? 1e-2 : 1e-12;
  check(r, "kernels", "quadrature_sup_rel", q.sup_rel, qtol, q.sup_rel <= qtol);
  if (frac) {
    double worst = 0.0;
    for (double beta : {s.cfg.kernel.beta_b, s.cfg.kernel.beta_sigma}) {
      const auto ak = kernels::fractional(beta);
      for (double e : s.cfg.spike.eps) {
        const double closed = kernels::knorm_eps(ak, 2.0, e);
        const double numeric = kernels::knorm_eps_numeric(ak, 2.0, e);
        worst = std::max(worst, std::abs(closed - numeric) / std::max(1.0, std::abs(closed)));
        t.add({"knorm_q2_closed", "beta=" + fmt(beta), fmt(e), fmt(closed)});
        t.add({"knorm_q2_numeric", "beta=" + fmt(beta), fmt(e), fmt(numeric)});
      }
    }
    check(r, "kernels", "knorm_closed_vs_numeric", worst, 1e-8, worst <= 1e-8);
  }
  r.tables.push_back(std::move(t));
  return r;
}

ExperimentResult run_simulate(const Setup& s) {
  ExperimentResult r;
  const auto x = simulate_sve(*s.coeffs, s.u_hat, s.k, s.xi, s.ens);
  const std::size_t N = s.grid.n_steps, P = s.ens.n_paths();
  ResultTable t{"simulate", {"m", "t", "mean", "std"}, {}};
  for (std::size_t m = 0; m <= N; ++m) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      sum += x.at(p, m)[0];
      sq += x.at(p, m)[0] * x.at(p, m)[0];
    }
    const double mean = sum / static_cast<double>(P);
    const double var = std::max(0.0, (sq - sum * mean) / static_cast<double>(P - 1));
    t.add({fmt(m), fmt(s.grid.t(m)), fmt(mean), fmt(std::sqrt(var))});
  }
  r.tables.push_back(std::move(t));

  const BrownianEnsemble sub(s.grid, std::min<std::size_t>(P, 64), s.cfg.seed);
  const auto lift = simulate_sve(*s.coeffs, s.u_hat, s.k, s.xi, sub);
  const auto direct = simulate_sve_reference(*s.coeffs, s.u_hat, s.k, s.xi, sub);
  double dev = 0.0, scale = 1.0;
  for (std::size_t i = 0; i < lift.x.size(); ++i) {
    dev = std::max(dev, std::abs(lift.x[i] - direct.x[i]));
    scale = std::max(scale, std::abs(direct.x[i]));
  }
  check(r, "simulate", "lift_vs_direct_rel", dev / scale, 1e-10, dev / scale <= 1e-10);
  const auto bs = brownian_sanity(s.ens);
  check(r, "simulate", "brownian_mean", std::abs(bs.mean), bs.mean_bound, bs.passed);
  return r;
}

ExperimentResult run_rates(const Setup& s) {
  ExperimentResult r;
  const auto res = remainder_rates(*s.coeffs, s.k, s.u_hat, s.v, s.xi, s.cfg.spike.tau, s.cfg.spike.eps,
                                   s.cfg.spike.p, s.ens, true);
  std::vector<std::string> cols{"eps", "knorm_combo"};
  for (const auto& q : res.quantities) cols.push_back("norm_" + q);
  cols.insert(cols.end(), {"delta_j_mean", "delta_j_se"});
  ResultTable t{"rates", cols, {}};
  for (std::size_t e = 0; e < res.eps.size(); ++e) {
    std::vector<std::string> row{fmt(res.eps[e]), fmt(res.knorm_combo[e])};
    for (const auto& q : res.quantities) row.push_back(fmt(res.norms.at(q)[e]));
    row.push_back(fmt(res.delta_j[e].mean));
    row.push_back(fmt(res.delta_j[e].se));
    t.add(row);
  }
  ResultTable f{"rates_fit", {"quantity", "slope_eps", "slope_eps_se", "slope_knorm", "r2"}, {}};
  bool finite = true;
  for (const auto& q : res.quantities) {
    // Remainders that vanish identically (rounding level) have no rate to fit.
    const auto& nq = res.norms.at(q);
    if (*std::max_element(nq.begin(), nq.end()) <= 1e-12 * std::max(1.0, res.norms.at("X1").front())) continue;
    const auto& fe = res.fit_eps.at(q);
    const auto& fk = res.fit_knorm.at(q);
    f.add({q, fmt(fe.slope), fmt(fe.slope_se), fmt(fk.slope), fmt(fe.r2)});
    finite = finite && std::isfinite(fe.slope);
  }
  if (res.delta_j_computed)
    f.add({"delta_j", fmt(res.delta_j_fit.slope), fmt(res.delta_j_fit.slope_se), "nan", fmt(res.delta_j_fit.r2)});
  check(r, "rates", "fits_finite", finite ? 0.0 : 1.0, 0.0, finite);
  r.tables.push_back(std::move(t));
  r.tables.push_back(std::move(f));
  return r;
}

ExperimentResult run_bsde(const Setup& s) {
  ExperimentResult r;
  const std::size_t N = s.grid.n_steps;
  std::vector<double> integrand(N), gen(N);
  for (std::size_t j = 0; j < N; ++j) {
    integrand[j] = std::exp(-s.grid.t(j));
    gen[j] = std::cos(s.grid.t(j));
  }
  struct Ex {
    std::string name;
    bsde::BSDEInstance inst;
  };
  std::vector<Ex> exs(3);
  exs[0].name = "constant";
  exs[0].inst.kappa = 1.0;
  exs[0].inst.terminal = bsde::Terminal::constant(1.0);
  exs[0].inst.generator.assign(N, 0.5);
  exs[1].name = "linear_w";
  exs[1].inst.kappa = 0.5;
  exs[1].inst.terminal = bsde::Terminal::linear_w(0.7, 0.2);
  exs[2].name = "gaussian_functional";
  exs[2].inst.kappa = 2.0;
  exs[2].inst.terminal = bsde::Terminal::gaussian(1.0, integrand, 0.1);
  exs[2].inst.generator = gen;
  ResultTable t{"bsde", {"example", "p0", "max_abs_residual"}, {}};
  for (const auto& e : exs) {
    const auto sol = bsde::solve_bsde_closedform(e.inst, s.ens);
    const auto mr = bsde::martingale_residual(e.inst, sol, s.ens, bsde::Quadrature::exponential);
    t.add({e.name, fmt(sol.P(0, 0)), fmt(mr.max_abs)});
    check(r, "bsde-check", "martingale_" + e.name, mr.max_abs, 1e-10, mr.max_abs <= 1e-10);
  }
  // LSMC against the affine oracle (reported only; accuracy depends on the path count).
  const auto oracle = bsde::solve_bsde_closedform(exs[1].inst, s.ens, bsde::Quadrature::left_point);
  const auto lsmc = bsde::solve_bsde_lsmc(exs[1].inst, s.ens, {bsde::brownian_regressor(s.ens)});
  t.add({"linear_w_lsmc", fmt(lsmc.P(0, 0)), fmt(std::abs(lsmc.P(0, 0) - oracle.P(0, 0)) / std::abs(oracle.P(0, 0)))});
  r.tables.push_back(std::move(t));
  return r;
}

ExperimentResult run_adjoint(const Setup& s) {
  ExperimentResult r;
  const auto x = simulate_sve(*s.coeffs, s.u_hat, s.k, s.xi, s.ens);
  auto adj = bsee::assemble_first_adjoint(*s.coeffs, s.u_hat, x, s.k, s.xi, s.ens, s.adjoint_options());
  const bool second = s.try_second(adj, s.u_hat, x);
  ResultTable t{"adjoint_picard", {"order", "iteration", "distance"}, {}};
  for (std::size_t i = 0; i < adj.first_distances.size(); ++i) t.add({"1", fmt(i + 1), fmt(adj.first_distances[i])});
  for (std::size_t i = 0; i < adj.second_distances.size(); ++i) t.add({"2", fmt(i + 1), fmt(adj.second_distances[i])});
  ResultTable f{"adjoint_fields", {"m", "t", "solve_path", "pb_mean", "qs_mean", "C_mean"}, {}};
  for (std::size_t m = 0; m < s.grid.n_steps; ++m) {
    auto mean = [&](const bsee::FieldTable& ft) {
      if (ft.paths == 0) return ft.at(m, 0, 0)[0];
      double sum = 0.0;
      for (std::size_t p = 0; p < ft.paths; ++p) sum += ft.at_path(p, m, 0)[0];
      return sum / static_cast<double>(ft.paths);
    };
    f.add({fmt(m), fmt(s.grid.t(m)), bsee::to_string(adj.path), fmt(mean(adj.pb)), fmt(mean(adj.qs)),
           second ? fmt(mean(adj.C)) : "nan"});
  }
  const double last = adj.first_distances.empty() ? 0.0 : adj.first_distances.back();
  check(r, "adjoint", "first_order_converged", last, s.cfg.solver.tol, last < s.cfg.solver.tol);
  if (second) {
    const double l2 = adj.second_distances.empty() ? 0.0 : adj.second_distances.back();
    check(r, "adjoint", "second_order_converged", l2, s.cfg.solver.tol, l2 < s.cfg.solver.tol);
  }
  r.tables.push_back(std::move(t));
  r.tables.push_back(std::move(f));
  return r;
}

// Within 3 standard errors plus a 1e-8 floor that covers path-independent residuals.
void duality_check(ExperimentResult& r, const std::string& name, const stats::MeanSE& res) {
  const double tol = 3.0 * res.se + 1e-8;
  check(r, "duality", name, std::abs(res.mean), tol, std::abs(res.mean) <= tol);
}

ExperimentResult run_duality(const Setup& s) {
  ExperimentResult r;
  const SpikeSpec spike{s.cfg.spike.tau, s.cfg.spike.eps.back(), s.v};
  const auto bundle = simulate_bundle(*s.coeffs, s.u_hat, spike, s.k, s.xi, s.ens);
  auto adj = bsee::assemble_first_adjoint(*s.coeffs, s.u_hat, bundle.x_hat, s.k, s.xi, s.ens, s.adjoint_options());
  ResultTable t{"duality", {"identity", "residual_mean", "residual_se", "lhs_mean", "rhs_mean"}, {}};
  const auto d1 = mp::duality_residual_first(*s.coeffs, bundle, adj, s.ens);
  t.add({"first", fmt(d1.residual.mean), fmt(d1.residual.se), fmt(d1.lhs.mean), fmt(d1.rhs.mean)});
  duality_check(r, "first_order", d1.residual);
  if (s.try_second(adj, s.u_hat, bundle.x_hat)) {
    const auto d2 = mp::duality_residual_second(*s.coeffs, bundle, adj, s.k, s.ens);
    t.add({"second", fmt(d2.residual.mean), fmt(d2.residual.se), fmt(d2.lhs.mean), fmt(d2.rhs.mean)});
    duality_check(r, "second_order", d2.residual);
    const auto j = mp::j12_adjoint_representation(*s.coeffs, bundle, adj, s.k, s.ens);
    t.add({"j12_identity", fmt(j.identity.mean), fmt(j.identity.se), fmt(j.direct.mean), fmt(j.adjoint.mean)});
    t.add({"j12_gap", fmt(j.gap.mean), fmt(j.gap.se), fmt(j.correction_d.mean), fmt(j.correction_dt.mean)});
    t.add({"j12_gap_continuum", fmt(j.gap_continuum.mean), fmt(j.gap_continuum.se), "nan", "nan"});
    duality_check(r, "j12_identity", j.identity);
  }
  r.tables.push_back(std::move(t));
  return r;
}

ExperimentResult run_mp(const Setup& s) {
  ExperimentResult r;
  const auto& c = *s.coeffs;
  const ControlDomain& U = c.U;
  ControlPath u = s.u_hat;
  auto x = simulate_sve(c, u, s.k, s.xi, s.ens);
  auto adj = bsee::assemble_first_adjoint(c, u, x, s.k, s.xi, s.ens, s.adjoint_options());
  bool second = s.try_second(adj, u, x);
  std::size_t passes = 0;
  // Deterministic adjoints: replace u by the pointwise H-function argmax until it is stable.
  if (adj.path == bsee::SolvePath::deterministic) {
    // A candidate whose adjoints leave the deterministic path is discarded.
    for (; passes < 20; ++passes) {
      ControlPath next = mp::argmax_control(c, adj, x, u, U);
      if (next.values == u.values) break;
      auto x_next = simulate_sve(c, next, s.k, s.xi, s.ens);
      bsee::AdjointSolution a_next;
      try {
        a_next = bsee::assemble_first_adjoint(c, next, x_next, s.k, s.xi, s.ens, s.adjoint_options());
      } catch (const std::invalid_argument&) {
        break;
      }
      if (a_next.path != bsee::SolvePath::deterministic) break;
      u = std::move(next);
      x = std::move(x_next);
      adj = std::move(a_next);
      second = s.try_second(adj, u, x);
    }
  }
  const auto rep = mp::check_variational_inequality(c, u, x, adj, U, 1e-8, &s.ens);
  ResultTable t{"mp_check", {"m", "t", "u_hat", "v", "gap", "se", "pass"}, {}};
  for (const auto& row : rep.rows)
    t.add({fmt(row.m), fmt(row.t), fmt(u.at(0, row.m)[0]), fmt(U.point(row.v_index)[0]), fmt(row.gap), fmt(row.se),
           row.pass ? "PASS" : "FAIL"});
  check(r, "mp-check", "variational_inequality_min_gap", rep.min_gap, -1e-8, rep.passed);
  ResultTable info{"mp_info", {"quantity", "value"}, {}};
  info.add({"argmax_passes", fmt(passes)});
  info.add({"second_order", second ? "yes" : "no"});
  info.add({"deterministic", rep.deterministic ? "yes" : "no"});
  info.add({"alpha_differs_from_one_third", rep.alpha_flag ? "yes" : "no"});
  info.add({"quadratic_term_max", fmt(rep.quadratic_max)});
  r.tables.push_back(std::move(info));
  if (s.cfg.kernel.family == "constant" && adj.path == bsee::SolvePath::deterministic) {
    StateEnsemble x0(x.n, x.n_steps, 1);
    std::copy(x.path(0).begin(), x.path(0).end(), x0.path(0).begin());
    const auto one = mp::check_variational_inequality(c, u, x0, adj, U, 1e-8, &s.ens);
    const auto classical = mp::classical_peng_check(c, u, x.path(0), s.grid, U);
    double worst = 0.0;
    for (std::size_t i = 0; i < one.rows.size(); ++i)
      worst = std::max(worst, std::abs(one.rows[i].gap - classical.rows[i].gap));
    check(r, "mp-check", "classical_agreement", worst, 1e-10, worst <= 1e-10);
  }
  r.tables.push_back(std::move(t));
  return r;
}

ExperimentResult run_bsvie(const Setup& s) {
  ExperimentResult r;
  ResultTable t{"bsvie", {"equation", "t", "r", "residual"}, {}};
  const auto x = simulate_sve(*s.coeffs, s.u_hat, s.k, s.xi, s.ens);
  auto adj = bsee::assemble_first_adjoint(*s.coeffs, s.u_hat, x, s.k, s.xi, s.ens, s.adjoint_options());
  bsvie::BridgeOptions bo{s.cfg.solver.allow_singular, s.cfg.solver.r_subgrid};
  if ((adj.grid.alpha > 0.0 && !bo.allow_singular) || adj.path == bsee::SolvePath::lsmc) {
    t.add({adj.path == bsee::SolvePath::lsmc ? "skipped_lsmc" : "skipped_singular_alpha", "nan", "nan", "nan"});
    r.tables.push_back(std::move(t));
    return r;
  }
  const auto tup = bsvie::bsee_to_bsvie_first(adj, s.k, bo);
  const auto res = bsvie::bsvie_residual_first(tup, *s.coeffs, s.u_hat, x, s.k, s.ens);
  for (const auto& row : res.rows) t.add({row.equation, fmt(row.t), fmt(row.r), fmt(row.residual)});
  const double rt = bsvie::first_roundtrip(tup, adj, s.k);
  t.add({"first_roundtrip", "nan", "nan", fmt(rt)});
  check(r, "bsvie-check", "first_line1", res.line1, 1e-8, res.line1 <= 1e-8);
  check(r, "bsvie-check", "first_line2", res.line2, 1e-8, res.line2 <= 1e-8);
  check(r, "bsvie-check", "first_m_constraint", res.m_constraint, 1e-8, res.m_constraint <= 1e-8);
  check(r, "bsvie-check", "first_roundtrip", rt, 1e-8, rt <= 1e-8);
  if (adj.path == bsee::SolvePath::deterministic && s.try_second(adj, s.u_hat, x)) {
    const auto tup2 = bsvie::bsee_to_bsvie_second(adj, s.k, bo);
    const auto res2 = bsvie::bsvie_residual_second(tup2, *s.coeffs, s.u_hat, x, s.k);
    for (const auto& row : res2.rows) t.add({"second_" + row.equation, fmt(row.t), fmt(row.r), fmt(row.residual)});
    const double rt2 = bsvie::second_roundtrip(tup2, adj, s.k);
    t.add({"second_roundtrip", "nan", "nan", fmt(rt2)});
    const double worst = std::max({res2.eq1, res2.eq2, res2.eq3, res2.eq4, res2.m_constraint});
    check(r, "bsvie-check", "second_equations", worst, 1e-8, worst <= 1e-8);
    check(r, "bsvie-check", "second_roundtrip", rt2, 1e-8, rt2 <= 1e-8);
  }
  r.tables.push_back(std::move(t));
  return r;
}

void merge(ExperimentResult& into, ExperimentResult&& from) {
  for (auto& t : from.tables) into.tables.push_back(std::move(t));
  for (auto& c : from.checks) into.checks.push_back(std::move(c));
}

}  // namespace

ExperimentResult run_experiment(const std::string& name, const ExperimentConfig& cfg) {
  const Setup s(cfg);
  if (name == "kernels") return run_kernels(s);
  if (name == "simulate") return run_simulate(s);
  if (name == "rates") return run_rates(s);
  if (name == "bsde-check") return run_bsde(s);
  if (name == "adjoint") return run_adjoint(s);
  if (name == "duality") return run_duality(s);
  if (name == "mp-check") return run_mp(s);
  if (name == "bsvie-check") return run_bsvie(s);
  if (name == "all") {
    ExperimentResult all;
    merge(all, run_kernels(s));
    merge(all, run_simulate(s));
    merge(all, run_rates(s));
    merge(all, run_bsde(s));
    merge(all, run_adjoint(s));
    merge(all, run_duality(s));
    merge(all, run_mp(s));
    merge(all, run_bsvie(s));
    return all;
  }
  throw std::invalid_argument("unknown experiment '" + name + "'");
}

}  // namespace volterra::harness
