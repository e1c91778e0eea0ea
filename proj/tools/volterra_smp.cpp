// volterra-smp <experiment> --config FILE --seed N --out DIR [--paths N] [--steps N]
// volterra-smp verify FILE...
//
// Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error, 3 numerical failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "volterra/harness.hpp"
#include "volterra/parallel.hpp"

namespace h = volterra::harness;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw h::ConfigError("<file>", "cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic Volterra control: simulation, adjoints and maximum-principle checks"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  std::size_t paths = 0, steps = 0;
  std::vector<std::string> verify_files;

  std::vector<CLI::App*> runs;
  for (const auto& name : h::experiment_names()) {
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->add_option("--config", config_path, "JSON experiment config (defaults when omitted)");
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->add_option("--paths", paths, "override grid.n_paths");
    sub->add_option("--steps", steps, "override grid.n_steps");
    runs.push_back(sub);
  }
  CLI::App* verify = app.add_subcommand("verify", "check the body hash of emitted CSV files");
  verify->add_option("files", verify_files, "CSV files")->required();

  CLI11_PARSE(app, argc, argv);

  if (verify->parsed()) {
    bool ok = true;
    for (const auto& f : verify_files) {
      try {
        const auto rep = h::verify_csv(f);
        std::printf("%s %s expected=%s actual=%s\n", rep.ok ? "OK  " : "BAD ", f.c_str(), rep.expected.c_str(),
                    rep.actual.c_str());
        ok = ok && rep.ok;
      } catch (const std::exception& e) {
        std::fprintf(stderr, "verify: %s\n", e.what());
        ok = false;
      }
    }
    return ok ? 0 : 1;
  }

  std::string experiment;
  CLI::App* chosen = nullptr;
  for (CLI::App* sub : runs)
    if (sub->parsed()) {
      experiment = sub->get_name();
      chosen = sub;
    }

  volterra::par::configure_threads_from_env();
  h::ExperimentConfig cfg;
  try {
    nlohmann::json j = config_path.empty() ? nlohmann::json::object() : nlohmann::json::parse(read_file(config_path));
    if (!j.is_object()) throw h::ConfigError("<root>", "expected an object");
    if (chosen->count("--seed")) j["seed"] = seed;
    if (chosen->count("--out")) j["output_dir"] = out_dir;
    if (chosen->count("--paths")) j["grid"]["n_paths"] = paths;
    if (chosen->count("--steps")) j["grid"]["n_steps"] = steps;
    cfg = h::parse_config(j.dump());
  } catch (const h::ConfigError& e) {
    std::fprintf(stderr, "config error at %s\n", e.what());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "config error at <root>: %s\n", e.what());
    return 2;
  }

  h::ExperimentResult res;
  try {
    res = h::run_experiment(experiment, cfg);
    h::write_outputs(res, cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "numerical failure\n  experiment | diagnostic\n  %s | %s\n", experiment.c_str(), e.what());
    return 3;
  }
  for (const auto& c : res.checks)
    std::printf("%s %-12s %-34s value=%s tol=%s\n", c.pass ? "PASS" : "FAIL", c.experiment.c_str(), c.name.c_str(),
                h::fmt(c.value).c_str(), h::fmt(c.tol).c_str());
  std::printf("%s: %zu checks, outputs in %s\n", res.passed() ? "PASS" : "FAIL", res.checks.size(),
              cfg.output_dir.c_str());
  return res.passed() ? 0 : 1;
}
