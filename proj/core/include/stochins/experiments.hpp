#pragma once

// Experiment drivers behind the CLI subcommands. Each driver builds the
// problem from a config, runs, and writes JSON/CSV artifacts into an output
// directory. Outputs are byte-deterministic for a fixed (config, seed)
// regardless of the thread count.

#include <string>
#include <vector>

#include "stochins/config.hpp"

namespace stochins {

struct RunArtifacts {
  int exit_code = 0;  // 0 ok, 3 numerical non-convergence (validation throws)
  std::vector<std::string> files;
  std::string message;
};

// Cascade solve with zero controls; JSON summary + per-level norm CSV.
RunArtifacts run_simulate(const ExperimentConfig& config, const std::string& out_dir);

// Penalized synthesis + insensitization verification; JSON result, CG history
// CSV and a one-page text report. Writes artifacts even when CG fails.
RunArtifacts run_synthesize(const ExperimentConfig& config, const std::string& out_dir);

// Manufactured-solution spatial refinement study plus the exact stochastic
// reproduction cases; interval geometry only.
RunArtifacts run_convergence(const ExperimentConfig& config, int levels,
                             const std::string& out_dir);

// Weighted-estimate ratio sweep over a lambda grid plus observability
// statistics over fresh samples.
RunArtifacts run_carleman(const ExperimentConfig& config,
                          const std::vector<double>& lambda_grid,
                          const std::string& out_dir);

}  // namespace stochins
