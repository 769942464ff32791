#include "stochins/experiments.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>

#include "stochins/carleman.hpp"
#include "stochins/hum.hpp"
#include "stochins/io.hpp"
#include "stochins/rng.hpp"

namespace stochins {

namespace {

using json = nlohmann::ordered_json;

// Problem-defining echo. Execution details (threads, output paths) stay out
// so artifacts are identical across thread counts.
json config_echo(const ExperimentConfig& c) {
  json j;
  j["geometry"]["kind"] = c.geometry;
  if (c.geometry == "interval") {
    j["geometry"]["cells"] = c.cells;
    j["geometry"]["length"] = c.length;
  } else {
    j["geometry"]["radial_cells"] = c.radial_cells;
    j["geometry"]["angular_cells"] = c.angular_cells;
    j["geometry"]["inner_radius"] = c.inner_radius;
    j["geometry"]["outer_radius"] = c.outer_radius;
  }
  j["time"]["horizon"] = c.horizon;
  j["time"]["steps"] = c.steps;
  j["regions"]["control"] = {c.control_lo, c.control_hi};
  j["regions"]["observe"] = {c.observe_lo, c.observe_hi};
  j["regions"]["observe_boundary"] = c.observe_boundary;
  j["regions"]["core"] = {c.core_lo, c.core_hi};
  j["potentials"] = {{"a1", c.a1}, {"a2", c.a2}, {"b1", c.b1}, {"b2", c.b2}};
  j["sources"]["shape"] = c.source_shape;
  j["sources"]["amplitude"] = c.source_amplitude;
  j["sources"]["center"] = c.source_center;
  j["sources"]["width"] = c.source_width;
  j["carleman"]["lambda"] = c.lambda;
  j["carleman"]["mu"] = c.mu;
  j["carleman"]["profile_peak"] = c.profile_peak;
  j["hum"] = {{"epsilon", c.epsilon},
              {"cg_tol", c.cg_tol},
              {"max_iter", c.max_iter}};
  j["functional_start"] = c.functional_start;
  j["seed"] = c.seed;
  return j;
}

void save_json(const json& j, const std::string& path) {
  write_text_file(path, j.dump(2) + "\n");
}

double block_norm(const Mesh& mesh, const Eigen::VectorXd& packed, bool interior) {
  if (interior) {
    const Eigen::VectorXd v = packed.head(mesh.n_interior());
    return std::sqrt(std::max(0.0, v.dot(mesh.interior_weight.cwiseProduct(v))));
  }
  const Eigen::VectorXd v = packed.tail(mesh.n_boundary());
  return std::sqrt(std::max(0.0, v.dot(mesh.boundary_weight.cwiseProduct(v))));
}

}  // namespace

RunArtifacts run_simulate(const ExperimentConfig& config, const std::string& out_dir) {
  BuiltProblem built = build_problem(config);
  const Mesh& mesh = *built.problem.mesh;
  const NoiseTree& tree = *built.problem.tree;

  const CascadeSolution sol = solve_cascade(built.problem, nullptr);
  const double phi = observation_energy(built.problem, sol.forward);
  const Eigen::VectorXd z0 = sol.backward_initial();

  RunArtifacts artifacts;
  ensure_directory(out_dir);

  if (config.write_json) {
    json j;
    j["experiment"] = "simulate";
    j["config"] = config_echo(config);
    j["notes"] = built.notes;
    j["phi"] = phi;
    j["z0"]["norm"] = std::sqrt(std::max(0.0, packed_dot(mesh, z0, z0)));
    j["z0"]["interior"] = block_norm(mesh, z0, true);
    j["z0"]["boundary"] = block_norm(mesh, z0, false);
    j["levels"] = tree.num_steps;
    std::vector<double> ynorms, znorms;
    for (int n = 0; n <= tree.num_steps; ++n) {
      ynorms.push_back(
          expectation_pairing(mesh, tree, sol.forward.state, sol.forward.state, n));
      znorms.push_back(
          expectation_pairing(mesh, tree, sol.backward.state, sol.backward.state, n));
    }
    j["level_norms"]["mean_sq_y"] = ynorms;
    j["level_norms"]["mean_sq_z"] = znorms;
    const std::string path = out_dir + "/simulate_summary.json";
    save_json(j, path);
    artifacts.files.push_back(path);
  }

  if (config.write_csv) {
    CsvWriter csv({"level", "t_time", "mean_sq_y", "mean_sq_z", "mean_sq_martingale"});
    for (int n = 0; n <= tree.num_steps; ++n) {
      const double ey =
          expectation_pairing(mesh, tree, sol.forward.state, sol.forward.state, n);
      const double ez =
          expectation_pairing(mesh, tree, sol.backward.state, sol.backward.state, n);
      const double em = n < tree.num_steps
                            ? expectation_pairing(mesh, tree, sol.backward.martingale,
                                                  sol.backward.martingale, n)
                            : 0.0;
      csv.numeric_row({static_cast<double>(n), tree.time_at(n), ey, ez, em});
    }
    const std::string path = out_dir + "/simulate_levels.csv";
    csv.save(path);
    artifacts.files.push_back(path);
  }
  artifacts.message = "phi = " + format_full(phi);
  return artifacts;
}

RunArtifacts run_synthesize(const ExperimentConfig& config, const std::string& out_dir) {
  BuiltProblem built = build_problem(config);
  const Mesh& mesh = *built.problem.mesh;

  const HumResult result = solve_hum(built.problem, built.hum);
  const InsensitivityReport verification =
      verify_insensitization(built.problem, result.controls, 10, config.seed);

  const double bound = std::sqrt(2.0 * built.hum.epsilon *
                                 std::abs(result.quadratic_value)) *
                       (1.0 + 10.0 * built.hum.cg_tol);

  RunArtifacts artifacts;
  ensure_directory(out_dir);

  if (config.write_json) {
    json j;
    j["experiment"] = "synthesize";
    j["config"] = config_echo(config);
    j["notes"] = built.notes;
    j["converged"] = result.converged;
    j["iterations"] = result.iterations;
    j["rhs_norm"] = result.rhs_norm;
    j["final_residual"] = result.final_residual;
    j["epsilon"] = built.hum.epsilon;
    j["cg_tol"] = built.hum.cg_tol;
    j["control_energy"] = result.control_energy;
    j["control_norm"] = std::sqrt(std::max(0.0, result.control_energy));
    j["quadratic_value"] = result.quadratic_value;
    j["achieved_norm"] = result.achieved_norm;
    j["penalty_bound"] = bound;
    j["penalty_bound_satisfied"] = result.achieved_norm <= bound;
    j["defect_interior"] = result.defect_interior;
    j["defect_boundary"] = result.defect_boundary;
    j["consistency_error"] = result.consistency_error;
    j["minimizer_norm"] = norm_h(mesh, result.minimizer);
    j["minimizer"] = std::vector<double>(
        result.minimizer.values.data(),
        result.minimizer.values.data() + result.minimizer.values.size());
    j["verification"]["directions_per_index"] = 10;
    j["verification"]["max_fd_interior"] = verification.max_fd_interior;
    j["verification"]["max_fd_boundary"] = verification.max_fd_boundary;
    j["verification"]["max_duality_interior"] = verification.max_duality_interior;
    j["verification"]["max_duality_boundary"] = verification.max_duality_boundary;
    j["verification"]["phi_controlled"] = verification.phi_controlled;
    j["verification"]["weighted_source_norm"] = {
        {"interior", verification.source_norm.interior},
        {"boundary", verification.source_norm.boundary},
        {"total", verification.source_norm.total},
        {"finite", verification.source_norm.finite}};
    j["verification"]["empirical_constant"] = verification.empirical_constant;
    const std::string path = out_dir + "/hum_result.json";
    save_json(j, path);
    artifacts.files.push_back(path);
  }

  if (config.write_csv && built.hum.record_history) {
    CsvWriter csv({"iteration", "residual", "energy"});
    for (std::size_t k = 0; k < result.residual_history.size(); ++k)
      csv.numeric_row({static_cast<double>(k), result.residual_history[k],
                       result.energy_history[k]});
    const std::string path = out_dir + "/cg_history.csv";
    csv.save(path);
    artifacts.files.push_back(path);
  }

  {
    std::ostringstream report;
    report << "insensitizing control synthesis report\n";
    report << "=======================================\n\n";
    report << "problem: " << config.geometry << ", steps = " << config.steps
           << ", horizon = " << format_full(config.horizon) << "\n";
    for (const auto& note : built.notes) report << "note: " << note << "\n";
    report << "\npenalized synthesis (epsilon = " << format_full(built.hum.epsilon)
           << ")\n";
    report << "  cg iterations          " << result.iterations
           << (result.converged ? "" : "  [NOT CONVERGED]") << "\n";
    report << "  |z_free(0)|_h          " << format_full(result.rhs_norm) << "\n";
    report << "  |z(0)|_h achieved      " << format_full(result.achieved_norm) << "\n";
    report << "  penalty bound          " << format_full(bound) << "  ("
           << (result.achieved_norm <= bound ? "satisfied" : "violated") << ")\n";
    report << "  control energy         " << format_full(result.control_energy) << "\n";
    report << "  quadratic value        " << format_full(result.quadratic_value)
           << "\n";
    report << "\ninsensitization check (10 random unit directions per index)\n";
    report << "  max |dPhi/dtau1|       " << format_full(verification.max_fd_interior)
           << "\n";
    report << "  max |dPhi/dtau2|       " << format_full(verification.max_fd_boundary)
           << "\n";
    report << "  Phi (controlled)       " << format_full(verification.phi_controlled)
           << "\n";
    report << "\ncontrol-size estimate\n";
    report << "  control norm           " << format_full(verification.control_norm)
           << "\n";
    report << "  weighted source norm   "
           << format_full(verification.source_norm.total) << "\n";
    report << "  empirical constant     "
           << format_full(verification.empirical_constant) << "\n";
    const std::string path = out_dir + "/report.txt";
    write_text_file(path, report.str());
    artifacts.files.push_back(path);
  }

  if (!result.converged) {
    artifacts.exit_code = 3;
    artifacts.message = "conjugate gradient did not converge within " +
                        std::to_string(built.hum.max_iter) + " iterations";
  } else {
    artifacts.message = "converged in " + std::to_string(result.iterations) +
                        " iterations, |z(0)|_h = " + format_full(result.achieved_norm);
  }
  return artifacts;
}

namespace {

struct MmsCase {
  // Exact field e^{-t} (x/L + sin(pi x / L)): second spatial derivative
  // vanishes at both endpoints, so the one-sided boundary flux keeps second
  // order.
  double length = 1.0;

  double value(double t, double x) const {
    return std::exp(-t) * (x / length + std::sin(std::numbers::pi * x / length));
  }
  double dx(double t, double x) const {
    const double pl = std::numbers::pi / length;
    return std::exp(-t) * (1.0 / length + pl * std::cos(pl * x));
  }
  double forcing(double t, double x) const {
    const double pl = std::numbers::pi / length;
    return std::exp(-t) *
           (-(x / length + std::sin(pl * x)) + pl * pl * std::sin(pl * x));
  }
};

double mms_error(const Mesh& mesh, int steps, double horizon) {
  const MmsCase mms{mesh.length};
  const auto source = [&](int, double t) {
    Eigen::VectorXd f(mesh.n_total());
    for (int i = 0; i < mesh.n_interior(); ++i)
      f(i) = mms.forcing(t, mesh.interior_coord0(i));
    // Boundary sources f_Gamma = y_t + dnu y; the outward normal derivative
    // is -y_x at x = 0 and +y_x at x = L.
    f(mesh.n_interior() + 0) = -mms.value(t, 0.0) - mms.dx(t, 0.0);
    f(mesh.n_interior() + 1) = -mms.value(t, mesh.length) + mms.dx(t, mesh.length);
    return f;
  };
  BulkSurfaceField init(mesh);
  for (int i = 0; i < mesh.n_interior(); ++i)
    init.values(i) = mms.value(0.0, mesh.interior_coord0(i));
  init.values(mesh.n_interior() + 0) = mms.value(0.0, 0.0);
  init.values(mesh.n_interior() + 1) = mms.value(0.0, mesh.length);

  const Eigen::MatrixXd path =
      solve_forward_deterministic(mesh, steps, horizon, Potentials::none(), source, init);

  const double dt = horizon / steps;
  const int stride = std::max(1, steps / 2000);
  double err_sq = 0.0;
  for (int n = 0; n <= steps; n += stride) {
    const double t = n * dt;
    Eigen::VectorXd diff(mesh.n_total());
    for (int i = 0; i < mesh.n_interior(); ++i)
      diff(i) = path(i, n) - mms.value(t, mesh.interior_coord0(i));
    diff(mesh.n_interior() + 0) = path(mesh.n_interior() + 0, n) - mms.value(t, 0.0);
    diff(mesh.n_interior() + 1) =
        path(mesh.n_interior() + 1, n) - mms.value(t, mesh.length);
    err_sq += stride * dt * diff.dot(mesh.packed_weight.cwiseProduct(diff));
  }
  return std::sqrt(err_sq);
}

struct ExactnessErrors {
  double forward = 0.0;    // max |y - W| for unit constant noise
  double backward = 0.0;   // max |z - W| for terminal Brownian datum
  double martingale = 0.0; // max |Z - 1|
};

ExactnessErrors exactness_case(const Mesh& mesh, int steps, double horizon) {
  const NoiseTree tree = build_tree(steps, horizon);
  ExactnessErrors err;

  auto ones = std::make_shared<AdaptedField>(mesh.n_total(), tree.num_steps);
  for (auto& lvl : ones->data) lvl.setOnes();
  const auto fwd = solve_forward(mesh, tree, Potentials::none(), nullptr, ones,
                                 BulkSurfaceField(mesh));
  for (int n = 0; n <= tree.num_steps; ++n)
    for (std::int64_t k = 0; k < tree.nodes_at(n); ++k)
      err.forward = std::max(
          err.forward,
          (fwd.state.level(n).col(k).array() - tree.brownian(n, k)).abs().maxCoeff());

  Eigen::MatrixXd terminal(mesh.n_total(), tree.nodes_at(tree.num_steps));
  for (std::int64_t k = 0; k < terminal.cols(); ++k)
    terminal.col(k).setConstant(tree.brownian(tree.num_steps, k));
  const auto bwd = solve_backward(mesh, tree, Potentials::none(), nullptr, terminal);
  for (int n = 0; n <= tree.num_steps; ++n)
    for (std::int64_t k = 0; k < tree.nodes_at(n); ++k)
      err.backward = std::max(
          err.backward,
          (bwd.state.level(n).col(k).array() - tree.brownian(n, k)).abs().maxCoeff());
  for (int n = 0; n < tree.num_steps; ++n)
    err.martingale = std::max(
        err.martingale, (bwd.martingale.level(n).array() - 1.0).abs().maxCoeff());
  return err;
}

}  // namespace

RunArtifacts run_convergence(const ExperimentConfig& config, int levels,
                             const std::string& out_dir) {
  if (levels < 2)
    throw ValidationError("run_convergence: need at least 2 refinement levels");
  if (config.geometry != "interval")
    throw ValidationError("run_convergence: the manufactured-solution study "
                          "supports the interval geometry");

  const int deterministic_steps = 200000;
  const int tree_steps = std::min(config.steps, 10);

  std::vector<double> errors, orders;
  std::vector<ExactnessErrors> exact;
  std::vector<int> cells_per_level;
  for (int level = 0; level < levels; ++level) {
    const int cells = config.cells << level;
    cells_per_level.push_back(cells);
    const Mesh mesh = build_interval_mesh(cells, config.length);
    errors.push_back(mms_error(mesh, deterministic_steps, config.horizon));
    exact.push_back(exactness_case(mesh, tree_steps, config.horizon));
    if (level > 0) orders.push_back(std::log2(errors[level - 1] / errors[level]));
  }

  RunArtifacts artifacts;
  ensure_directory(out_dir);

  if (config.write_csv) {
    CsvWriter csv({"level", "cells", "h", "mms_error", "observed_order",
                   "exact_forward_error", "exact_backward_error",
                   "exact_martingale_error"});
    for (int level = 0; level < levels; ++level) {
      csv.numeric_row({static_cast<double>(level),
                       static_cast<double>(cells_per_level[level]),
                       config.length / cells_per_level[level], errors[level],
                       level > 0 ? orders[level - 1]
                                 : std::numeric_limits<double>::quiet_NaN(),
                       exact[level].forward, exact[level].backward,
                       exact[level].martingale});
    }
    const std::string path = out_dir + "/convergence.csv";
    csv.save(path);
    artifacts.files.push_back(path);
  }

  if (config.write_json) {
    json j;
    j["experiment"] = "convergence";
    j["config"] = config_echo(config);
    j["deterministic_steps"] = deterministic_steps;
    j["cells"] = cells_per_level;
    j["errors"] = errors;
    j["observed_orders"] = orders;
    double worst_exact = 0.0;
    for (const auto& e : exact)
      worst_exact = std::max({worst_exact, e.forward, e.backward, e.martingale});
    j["exactness_max_error"] = worst_exact;
    const std::string path = out_dir + "/convergence.json";
    save_json(j, path);
    artifacts.files.push_back(path);
  }

  std::ostringstream msg;
  msg << "observed orders:";
  for (double o : orders) msg << " " << format_full(o);
  artifacts.message = msg.str();
  return artifacts;
}

RunArtifacts run_carleman(const ExperimentConfig& config,
                          const std::vector<double>& lambda_grid,
                          const std::string& out_dir) {
  if (lambda_grid.empty())
    throw ValidationError("run_carleman: lambda grid must not be empty");
  BuiltProblem built = build_problem(config);
  const Mesh& mesh = *built.problem.mesh;
  const CounterRng rng(config.seed);

  RunArtifacts artifacts;
  ensure_directory(out_dir);

  CsvWriter csv({"lambda", "kind", "lhs", "rhs", "ratio", "log_lhs", "log_rhs"});
  const char* kind_names[] = {"forward", "backward", "coupled"};
  for (std::size_t idx = 0; idx < lambda_grid.size(); ++idx) {
    // Fresh sample per grid point.
    const BulkSurfaceField q0 = random_unit_field(mesh, rng, 4000 + idx);
    const AdjointSolution adj = solve_adjoint(built.problem, q0);
    CarlemanParams params = built.carleman;
    params.lambda = lambda_grid[idx];
    int k = 0;
    for (CarlemanKind kind :
         {CarlemanKind::Forward, CarlemanKind::Backward, CarlemanKind::Coupled}) {
      const CarlemanRatio r = carleman_ratio(kind, built.problem, adj, params);
      csv.row({format_full(lambda_grid[idx]), kind_names[k++], format_full(r.lhs),
               format_full(r.rhs), format_full(r.ratio), format_full(r.log_lhs),
               format_full(r.log_rhs)});
    }
  }
  if (config.write_csv) {
    const std::string path = out_dir + "/carleman_sweep.csv";
    csv.save(path);
    artifacts.files.push_back(path);
  }

  const int sample_count = 20;
  std::vector<BulkSurfaceField> samples;
  samples.reserve(sample_count);
  for (int i = 0; i < sample_count; ++i)
    samples.push_back(random_unit_field(mesh, rng, 5000 + i));
  const ObservabilityStats stats = observability_ratio(
      built.problem, samples, built.carleman.observability_weight);

  if (config.write_json) {
    json j;
    j["experiment"] = "carleman";
    j["config"] = config_echo(config);
    j["notes"] = built.notes;
    j["lambda_grid"] = lambda_grid;
    j["observability"]["weight"] = built.carleman.observability_weight;
    j["observability"]["samples"] = stats.total_samples;
    j["observability"]["used"] = stats.used_samples;
    j["observability"]["skipped"] = stats.skipped;
    j["observability"]["uc_failures"] = stats.uc_failures;
    j["observability"]["max_ratio"] = stats.max_ratio;
    j["observability"]["mean_ratio"] = stats.mean_ratio;
    j["observability"]["min_ratio"] = stats.min_ratio;
    j["observability"]["ratios"] = stats.ratios;
    const std::string path = out_dir + "/observability.json";
    save_json(j, path);
    artifacts.files.push_back(path);
  }

  artifacts.message =
      "empirical observability constant = " + format_full(stats.max_ratio) +
      (stats.uc_failures > 0 ? "  [UNIQUE-CONTINUATION FAILURES]" : "");
  if (stats.uc_failures > 0) artifacts.exit_code = 3;
  return artifacts;
}

}  // namespace stochins
