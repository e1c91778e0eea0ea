#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "volterra/harness.hpp"

using namespace volterra;
using namespace volterra::harness;

namespace {

std::string error_path(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "";
}

const char* kSmall = R"({
  "kernel": {"family": "constant"},
  "problem": {"name": "lq"},
  "grid": {"n_steps": 64, "n_paths": 16},
  "spike": {"eps": [0.5, 0.25, 0.125, 0.0625], "v": 1.0},
  "seed": 7
})";

std::string cell(const ResultTable& t, const std::string& quantity) {
  for (const auto& r : t.rows)
    if (r.front() == quantity) return r.back();
  return "";
}

}  // namespace

TEST_CASE("defaults are resolved and explicit") {
  const auto cfg = parse_config("{}");
  CHECK(cfg.kernel.family == "fractional");
  CHECK(cfg.kernel.alpha == doctest::Approx(1.0 / 3.0));
  CHECK(cfg.theta.gamma == kernels::gamma_interval(0.8, 0.9, 1.0 / 3.0).midpoint());
  CHECK(cfg.grid.n_steps == 128);
  CHECK(cfg.spike.eps.size() == 4);
  CHECK(cfg.problem.params.size() == 15);
  CHECK(parse_config(R"({"kernel": {"family": "exponential"}})").kernel.alpha == 0.0);
  CHECK(parse_config(R"({"solver": {"tol": 1e-6}})").solver.tol == 1e-6);
}

TEST_CASE("schema violations name the offending path") {
  CHECK(error_path(R"({"kernel": {"foo": 1}})") == "kernel.foo");
  CHECK(error_path(R"({"bogus": 1})") == "bogus");
  CHECK(error_path(R"({"kernel": {"family": "gaussian"}})") == "kernel.family");
  CHECK(error_path(R"({"kernel": {"beta_b": 0.4}})") == "kernel.beta_b");
  CHECK(error_path(R"({"grid": {"n_steps": -3}})") == "grid.n_steps");
  CHECK(error_path(R"({"problem": {"name": "nope"}})") == "problem.name");
  CHECK(error_path(R"({"problem": {"params": {"zz": 1}}})") == "problem.params.zz");
  CHECK(error_path(R"({"problem": {"u_hat": 0.25}})") == "problem.u_hat");
  CHECK(error_path(R"({"spike": {"eps": [0.25, 0.125, 0.1, 0.05]}})").rfind("spike.eps[", 0) == 0);
  CHECK(error_path(R"({"spike": {"eps": [0.25, 0.125, 0.0625]}})") == "spike.eps");
  CHECK(error_path(R"({"theta_grid": {"gamma": 100.0}})") == "theta_grid.gamma");
  CHECK(error_path("{not json") == "<root>");
  CHECK_THROWS_AS(resolve_config("/nonexistent/cfg.json"), ConfigError);
}

TEST_CASE("dump and parse round trip") {
  const auto cfg = parse_config(R"({"kernel": {"family": "exponential", "lambda": 2.5}, "seed": 9,
                                   "problem": {"params": {"a": -0.75}}})");
  const std::string once = dump_config(cfg);
  const std::string twice = dump_config(parse_config(once));
  CHECK(once == twice);
  CHECK(parse_config(once).problem.params.at("a") == -0.75);
}

TEST_CASE("number formatting") {
  CHECK(fmt(0.1) == "1.0000000000000001e-01");
  CHECK(fmt(-2.0) == "-2.0000000000000000e+00");
  CHECK(std::strtod(fmt(M_PI).c_str(), nullptr) == M_PI);
  CHECK(fmt(std::size_t{12}) == "12");
  CHECK(fmt(NAN) == "nan");
}

TEST_CASE("FNV-1a reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("rendered CSV verifies and tampering is detected") {
  const auto cfg = parse_config(kSmall);
  ResultTable t{"demo", {"name", "value"}, {}};
  t.add({"x, quoted \"y\"", fmt(1.5)});
  t.add({"z", fmt(-0.25)});
  const std::string text = render_csv(t, cfg);
  CHECK(text.find("\"x, quoted \"\"y\"\"\"") != std::string::npos);

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "volterra_smp_test_harness";
  fs::create_directories(dir);
  const fs::path file = dir / "demo.csv";
  { std::ofstream(file, std::ios::binary) << text; }
  CHECK(verify_csv(file.string()).ok);

  std::string bad = text;
  bad[bad.rfind("1.5")] = '2';
  { std::ofstream(file, std::ios::binary) << bad; }
  const auto rep = verify_csv(file.string());
  CHECK_FALSE(rep.ok);
  CHECK(rep.expected != rep.actual);
  fs::remove_all(dir);
}

TEST_CASE("output location does not change the rendered CSV") {
  auto a = parse_config(kSmall);
  auto b = a;
  b.output_dir = "elsewhere/results";
  ResultTable t{"demo", {"v"}, {}};
  t.add({fmt(3.0)});
  CHECK(render_csv(t, a) == render_csv(t, b));
  b.seed = 8;
  CHECK(render_csv(t, a) != render_csv(t, b));
}

TEST_CASE("kernels experiment on the constant kernel") {
  const auto cfg = parse_config(kSmall);
  const auto r = run_experiment("kernels", cfg);
  REQUIRE_FALSE(r.tables.empty());
  CHECK(std::strtod(cell(r.tables.front(), "quadrature_sup_abs").c_str(), nullptr) == 0.0);
  CHECK(r.passed());
}

TEST_CASE("experiments are reproducible") {
  const auto cfg = parse_config(kSmall);
  for (const char* name : {"simulate", "adjoint"}) {
    const auto a = run_experiment(name, cfg);
    const auto b = run_experiment(name, cfg);
    REQUIRE(a.tables.size() == b.tables.size());
    for (std::size_t i = 0; i < a.tables.size(); ++i) CHECK(render_csv(a.tables[i], cfg) == render_csv(b.tables[i], cfg));
  }
  CHECK_THROWS(run_experiment("no-such-experiment", cfg));
}
