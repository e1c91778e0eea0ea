#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "volterra/coefficients.hpp"
#include "volterra/kernels.hpp"

namespace volterra::harness {

inline constexpr const char* kVersion = "0.1.0";

// Schema violation; `path` is the JSON path of the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& msg)
      : std::runtime_error(path + ": " + msg), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct KernelBlock {
  std::string family = "fractional";  // fractional | constant | exponential
  double beta_b = 0.8;
  double beta_sigma = 0.9;
  double alpha = 1.0 / 3.0;  // default 0 for the regular families
  double lambda = 1.0;       // exponential rate
  double scale = 1.0;        // constant kernel factor
};

struct ThetaBlock {
  double theta_min = 1e-3;
  double theta_max = 1e5;
  std::size_t n_nodes = 40;
  double gamma = 0.0;  // resolved to the feasible midpoint when absent
};

struct GridBlock {
  double T = 1.0;
  std::size_t n_steps = 128;
  std::size_t n_paths = 1000;
};

struct ProblemBlock {
  std::string name = "lq";
  std::map<std::string, double> params;  // overrides of the preset's polynomial coefficients
  double x0 = 0.0;
  double u_hat = 0.0;
  std::vector<double> U;
};

struct SpikeBlock {
  double tau = 0.25;
  std::vector<double> eps;  // geometric, multiples of dt
  double v = 0.0;
  double p = 2.0;           // moment order of the rate norms
};

struct SolverBlock {
  double tol = 1e-10;
  std::size_t max_iter = 200;
  bool lsmc = false;
  int basis_degree = 1;
  bool allow_singular = false;
  std::size_t r_subgrid = 8;
};

struct ExperimentConfig {
  KernelBlock kernel;
  ThetaBlock theta;
  GridBlock grid;
  ProblemBlock problem;
  SpikeBlock spike;
  SolverBlock solver;
  std::uint64_t seed = 42;
  std::string output_dir = "out";
};

// Parses and validates JSON text; unknown keys and bad values throw ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig resolve_config(const std::string& path);
// Canonical JSON of the fully resolved config (sorted keys, every default explicit).
std::string dump_config(const ExperimentConfig& cfg);

kernels::DiscreteLaplaceKernel build_kernel(const ExperimentConfig& cfg);

// Named columns with pre-formatted cells.
struct ResultTable {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row);
};

// Scientific notation with 17 significant digits and a '.' decimal point.
std::string fmt(double v);
std::string fmt(std::size_t v);

struct Check {
  std::string experiment;
  std::string name;
  double value = 0.0;
  double tol = 0.0;
  bool pass = false;
};

struct ExperimentResult {
  std::vector<ResultTable> tables;
  std::vector<Check> checks;
  bool passed() const;
};

const std::vector<std::string>& experiment_names();

// Runs one experiment (or "all"). Numerical failures propagate as exceptions.
ExperimentResult run_experiment(const std::string& name, const ExperimentConfig& cfg);

// FNV-1a 64-bit hash.
std::uint64_t fnv1a64(const std::string& bytes);

// RFC-4180 body preceded by '#' provenance lines (version, config hash, seed, body hash).
std::string render_csv(const ResultTable& t, const ExperimentConfig& cfg);
// Writes every table, the check summary and resolved_config.json into cfg.output_dir.
void write_outputs(const ExperimentResult& r, const ExperimentConfig& cfg);

struct ChecksumReport {
  bool ok = false;
  std::string expected;
  std::string actual;
};
// Recomputes the body hash of a CSV written by render_csv.
ChecksumReport verify_csv(const std::string& path);

}  // namespace volterra::harness
