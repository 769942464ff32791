#include "stochins/hum.hpp"

#include <cmath>
#include <limits>

#include "stochins/rng.hpp"

namespace stochins {

void HumConfig::validate() const {
  if (!(epsilon > 0.0)) throw ValidationError("HumConfig: epsilon must be positive");
  if (!(cg_tol > 0.0 && cg_tol < 1.0))
    throw ValidationError("HumConfig: cg_tol must lie in (0, 1)");
  if (max_iter < 1) throw ValidationError("HumConfig: max_iter must be >= 1");
}

ControlTriple extract_controls(const InsensitizationProblem& problem,
                               const AdjointSolution& adjoint) {
  const Mesh& mesh = *problem.mesh;
  const NoiseTree& tree = *problem.tree;
  const Eigen::VectorXd g0 = packed_mask(mesh, problem.control_region);

  ControlTriple c;
  c.drift = AdaptedField(mesh.n_total(), tree.num_steps);
  c.diffusion = adjoint.p.martingale;  // interior rows P, boundary rows Phat
  for (int n = 0; n < tree.num_steps; ++n)
    c.drift.level(n) = g0.asDiagonal() * adjoint.p.drift_state.level(n);
  return c;
}

namespace {

InsensitizationProblem homogeneous_copy(const InsensitizationProblem& problem) {
  InsensitizationProblem zero = problem;
  zero.source = nullptr;
  zero.initial = BulkSurfaceField(*problem.mesh);
  return zero;
}

}  // namespace

BulkSurfaceField gramian_apply(const InsensitizationProblem& problem,
                               const BulkSurfaceField& q0) {
  const AdjointSolution adj = solve_adjoint(problem, q0);
  const ControlTriple controls = extract_controls(problem, adj);
  const InsensitizationProblem zero = homogeneous_copy(problem);
  const CascadeSolution casc = solve_cascade(zero, &controls);
  return BulkSurfaceField(*problem.mesh, casc.backward_initial());
}

BulkSurfaceField free_response(const InsensitizationProblem& problem) {
  const CascadeSolution casc = solve_cascade(problem, nullptr);
  return BulkSurfaceField(*problem.mesh, casc.backward_initial());
}

HumResult solve_hum(const InsensitizationProblem& problem, const HumConfig& config) {
  config.validate();
  const Mesh& mesh = *problem.mesh;
  const NoiseTree& tree = *problem.tree;
  const double eps = config.epsilon;

  const BulkSurfaceField zfree = free_response(problem);
  HumResult result;
  result.minimizer = BulkSurfaceField(mesh);
  result.controls = ControlTriple::zeros(mesh, tree);
  result.rhs_norm = norm_h(mesh, zfree);

  // Degenerate problem: nothing to control.
  if (result.rhs_norm <= 1e-14) {
    result.converged = true;
    result.achieved_norm = result.rhs_norm;
    if (config.record_history) {
      result.residual_history.push_back(result.rhs_norm);
      result.energy_history.push_back(0.0);
    }
    return result;
  }

  const auto hdot = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return a.dot(mesh.packed_weight.cwiseProduct(b));
  };

  // Conjugate gradient on (Lambda + eps I) x = b, b = -z_free(0), in <.,.>_h.
  const Eigen::VectorXd b = -zfree.values;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(mesh.n_total());
  Eigen::VectorXd r = b;
  Eigen::VectorXd d = r;
  double rho = hdot(r, r);
  const double stop = config.cg_tol * result.rhs_norm;

  // J_eps from the current iterate: with Bx = b - r this is
  // 1/2 <Bx,x> - <b,x> = -(<b,x> + <r,x>)/2.
  const auto energy_at = [&] { return -0.5 * (hdot(b, x) + hdot(r, x)); };

  if (config.record_history) {
    result.residual_history.push_back(std::sqrt(rho));
    result.energy_history.push_back(energy_at());
  }

  int it = 0;
  while (std::sqrt(rho) > stop && it < config.max_iter) {
    const BulkSurfaceField lam_d =
        gramian_apply(problem, BulkSurfaceField(mesh, d));
    const Eigen::VectorXd bd = lam_d.values + eps * d;
    const double curvature = hdot(d, bd);
    if (!(curvature > 0.0))
      throw Error("solve_hum: conjugate gradient lost positive definiteness");
    const double alpha = rho / curvature;
    x += alpha * d;
    r -= alpha * bd;
    const double rho_next = hdot(r, r);
    d = r + (rho_next / rho) * d;
    rho = rho_next;
    ++it;
    if (config.record_history) {
      result.residual_history.push_back(std::sqrt(rho));
      result.energy_history.push_back(energy_at());
    }
  }

  result.iterations = it;
  result.final_residual = std::sqrt(rho);
  result.converged = result.final_residual <= stop;
  result.minimizer = BulkSurfaceField(mesh, x);

  // Controls at the minimizer and both z(0) code paths: through the Gramian
  // with zero sources, and through the full verification cascade.
  const AdjointSolution adj = solve_adjoint(problem, result.minimizer);
  result.controls = extract_controls(problem, adj);

  const InsensitizationProblem zero = homogeneous_copy(problem);
  const CascadeSolution lam_solve = solve_cascade(zero, &result.controls);
  const Eigen::VectorXd lam_x = lam_solve.backward_initial();

  const CascadeSolution verification = solve_cascade(problem, &result.controls);
  const Eigen::VectorXd z0 = verification.backward_initial();

  result.consistency_error =
      std::sqrt(std::max(0.0, hdot(z0 - (lam_x + zfree.values), z0 - (lam_x + zfree.values))));
  result.achieved_norm = std::sqrt(std::max(0.0, hdot(z0, z0)));
  const Eigen::VectorXd zi = z0.head(mesh.n_interior());
  const Eigen::VectorXd zb = z0.tail(mesh.n_boundary());
  result.defect_interior =
      std::sqrt(std::max(0.0, zi.dot(mesh.interior_weight.cwiseProduct(zi))));
  result.defect_boundary =
      std::sqrt(std::max(0.0, zb.dot(mesh.boundary_weight.cwiseProduct(zb))));

  result.control_energy = control_energy(mesh, tree, result.controls);
  result.quadratic_value =
      0.5 * hdot(lam_x, x) + 0.5 * eps * hdot(x, x) + hdot(x, zfree.values);
  return result;
}

InsensitivityReport verify_insensitization(const InsensitizationProblem& problem,
                                           const ControlTriple& controls,
                                           int n_directions, std::uint64_t seed) {
  if (n_directions < 1)
    throw ValidationError("verify_insensitization: need at least one direction");
  const Mesh& mesh = *problem.mesh;
  const CounterRng rng(seed);

  InsensitivityReport report;
  bool have_phi = false;
  for (int tau = 1; tau <= 2; ++tau) {
    for (int j = 0; j < n_directions; ++j) {
      const std::uint64_t stream = 0x5EED0000u + 1000 * tau + j;
      const BulkSurfaceField dir = random_field(mesh, rng, stream);
      const DerivativeCheck check =
          initial_perturbation_derivative(problem, &controls, dir, tau, {});
      if (!have_phi) {
        report.phi_controlled = check.phi_base;
        have_phi = true;
      }
      report.directions.push_back({tau, check.fd, check.duality});
      if (tau == 1) {
        report.max_fd_interior = std::max(report.max_fd_interior, std::abs(check.fd));
        report.max_duality_interior =
            std::max(report.max_duality_interior, std::abs(check.duality));
      } else {
        report.max_fd_boundary = std::max(report.max_fd_boundary, std::abs(check.fd));
        report.max_duality_boundary =
            std::max(report.max_duality_boundary, std::abs(check.duality));
      }
    }
  }

  report.control_norm =
      std::sqrt(control_energy(mesh, *problem.tree, controls));
  report.source_norm = weighted_source_norm(problem);
  if (report.source_norm.total > 0.0)
    report.empirical_constant = report.control_norm / report.source_norm.total;
  else
    report.empirical_constant =
        report.control_norm == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return report;
}

}  // namespace stochins
