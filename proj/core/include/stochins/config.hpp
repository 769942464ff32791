#pragma once

// Experiment configuration: a sectioned key = value text format with '#'
// comments. Regions are given in physical coordinates and snapped to mesh
// nodes at build time (the snapping is reported); validation failures carry
// the config line number of the offending key.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stochins/carleman.hpp"
#include "stochins/cascade.hpp"
#include "stochins/hum.hpp"

namespace stochins {

struct ConfigError : ValidationError {
  using ValidationError::ValidationError;
};

struct ExperimentConfig {
  // [geometry]
  std::string geometry = "interval";  // interval | annulus
  int cells = 16;                     // interval
  double length = 1.0;
  int radial_cells = 8, angular_cells = 16;  // annulus
  double inner_radius = 1.0, outer_radius = 2.0;

  // [time]
  double horizon = 1.0;
  int steps = 10;

  // [regions] physical intervals (interval geometry) or radial intervals
  // (annulus); boundary observation by side name.
  double control_lo = 0.3, control_hi = 0.7;
  double observe_lo = 0.5, observe_hi = 0.9;
  std::string observe_boundary = "right";  // left|right|both|none / inner|outer|both|none
  double core_lo = 0.45, core_hi = 0.65;

  // [potentials] constant coefficients.
  double a1 = 0.0, a2 = 0.0, b1 = 0.0, b2 = 0.0;

  // [sources]
  std::string source_shape = "bump";  // bump | zero
  double source_amplitude = 1.0;
  double source_center = 0.7, source_width = 0.1;
  std::optional<double> source_weight;  // M_w; defaults to the carleman value

  // [carleman]
  double lambda = 2.0, mu = 1.5;
  std::optional<double> carleman_weight;  // M_w; defaults to the matched formula
  double profile_peak = 0.2;

  // [hum]
  double epsilon = 1e-6;
  double cg_tol = 1e-8;
  int max_iter = 500;
  bool record_history = true;

  // [output]
  std::string output_directory = "out";
  bool write_json = true, write_csv = true;

  // [run]
  std::uint64_t seed = 1;
  int threads = 1;
  double functional_start = 0.0;
  bool allow_disjoint_regions = false;

  // Line numbers of the keys that were actually present (section.key).
  std::map<std::string, int> key_lines;

  int line_of(const std::string& section_key) const;
};

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& filename = "<config>");
ExperimentConfig load_config(const std::string& path);

// Canonical re-emission: loading the output reproduces the same normalized
// text byte for byte.
std::string normalized_config(const ExperimentConfig& config);

// Everything a run needs, built and cross-validated from a config.
struct BuiltProblem {
  InsensitizationProblem problem;
  CarlemanParams carleman;
  HumConfig hum;
  std::vector<std::string> notes;  // snapping log + validation warnings
};

BuiltProblem build_problem(const ExperimentConfig& config);

}  // namespace stochins
