#pragma once

#include "pide/bsde.hpp"
#include "pide/model.hpp"
#include "pide/obstacle.hpp"
#include "pide/regression.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pide {

enum class Task { Simulate, Solve, SolveObstacle, Oracle, Normcheck, Compare };

std::string to_string(Task task);
/// E_CONFIG for names outside {simulate, solve, solve-obstacle, oracle, normcheck, compare}.
Task parse_task(const std::string& name);

/// Validated experiment. `normalized` holds every block with defaults filled in; the typed
/// fields mirror the parts the runner reads most.
struct ExperimentConfig {
  Task task = Task::Solve;
  std::uint64_t seed = 0;
  std::filesystem::path output = "out";
  int N = 50;
  int M = 100000;
  double T = 1.0;
  double x0 = 0.0;
  double p = 4.0;
  RegressionBasis basis = RegressionBasis::polynomial(4);
  nlohmann::json normalized;
};

/// Parses and normalizes a JSON config. Unknown keys raise E_CONFIG naming the key path
/// ("model.rte"), wrong types raise E_SCHEMA. The seed is mandatory. An obstacle needs
/// weight.p >= kappa + d + 1.
ExperimentConfig validate_config(const std::string& raw);
ExperimentConfig validate_config(const nlohmann::json& raw);
inline ExperimentConfig validate_config(const char* raw) { return validate_config(std::string(raw)); }

/// SHA-256 (hex) of the canonical dump of the normalized config minus the output directory.
/// Key order and whitespace of the input do not matter.
std::string config_hash(const ExperimentConfig& config);

ModelSpec build_model(const ExperimentConfig& config);
DriverSpec build_driver(const ExperimentConfig& config);
TerminalSpec build_terminal(const ExperimentConfig& config);
std::optional<ObstacleSpec> build_obstacle(const ExperimentConfig& config);

struct CompareRow {
  double x = 0.0;
  double solver = 0.0;
  double oracle = 0.0;
  double error = 0.0;  // relative; absolute where the oracle is 0
};

struct CompareTable {
  std::vector<CompareRow> rows;
  double sup = 0.0;
  double l2_rho = 0.0;  // rho-weighted root mean square over the region, trapezoid in x
  double tol = 0.0;
  bool pass = false;
};

/// Both files carry columns x,u. Points of the oracle inside [lo, hi] must appear in the solver
/// file with the same x (relative 1e-9), and vice versa, else E_GRIDMISMATCH.
CompareTable compare_report(const std::filesystem::path& solver_csv, const std::filesystem::path& oracle_csv,
                            double tol_rel, std::pair<double, double> region, const WeightFunction& rho = {4.0});
void write_compare_csv(const CompareTable& table, const std::filesystem::path& file);

/// Columns x,u.
void write_xu_csv(const std::vector<double>& x, const std::vector<double>& u, const std::filesystem::path& file);

struct RunFlags {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool deterministic = false;
  std::optional<std::filesystem::path> out;
};

struct Report {
  nlohmann::json body;  // hashed part: task, config, hash, headline, criteria, artifacts, status
  nlohmann::json meta;  // timestamps, host, flags, body digest
  int exit_code = 0;    // 0 ok, 1 error, 2 criterion failure
};

/// Runs the task and writes <out>/report.json plus the artifacts it lists. Holds <out>/.lock for
/// the duration; E_IO if another run holds it. Module errors end up in the report with exit code 1.
Report run_experiment(const ExperimentConfig& config, const RunFlags& flags = {});

/// The command line front end: solver <task> --config <path> [--seed S] [--threads K]
/// [--deterministic] [--out DIR]. Returns the exit code.
int solver_main(int argc, char** argv);

}  // namespace pide
