#include "stochins/cascade.hpp"

#include <cmath>
#include <limits>

namespace stochins {

namespace {

void check_mask(const Mesh& mesh, const RegionMask& mask, MaskSupport support,
                const char* name) {
  const int expected =
      support == MaskSupport::Interior ? mesh.n_interior() : mesh.n_boundary();
  if (mask.support != support || mask.weights.size() != expected)
    throw ShapeError(std::string("InsensitizationProblem: mask ") + name +
                     " does not conform to the mesh");
}

}  // namespace

std::vector<std::string> InsensitizationProblem::validate(
    bool allow_disjoint_regions) const {
  std::vector<std::string> warnings;
  if (!mesh || !tree) throw ValidationError("InsensitizationProblem: mesh/tree not set");

  check_mask(*mesh, control_region, MaskSupport::Interior, "G0");
  check_mask(*mesh, observation_interior, MaskSupport::Interior, "O");
  check_mask(*mesh, observation_boundary, MaskSupport::Boundary, "O_Gamma");
  check_mask(*mesh, carleman_core, MaskSupport::Interior, "G1");

  if (control_region.is_empty())
    throw ValidationError("InsensitizationProblem: control region G0 is empty");

  const RegionMask overlap = mask_intersection(control_region, observation_interior);
  const bool disjoint = overlap.is_empty();
  if (disjoint) {
    if (!allow_disjoint_regions)
      throw ValidationError(
          "InsensitizationProblem: constraint violated: G0 and O must intersect "
          "(pass allow_disjoint_regions to explore the disjoint case)");
    warnings.push_back("G0 and O are disjoint: outside the supported theory, "
                       "exploration only (G1 is required inside G0 alone)");
  }

  if (carleman_core.is_empty())
    throw ValidationError("InsensitizationProblem: constraint violated: G1 is empty");
  // In the disjoint exploration there is no overlap to contain G1; it must
  // still sit inside the control region.
  const RegionMask& containment = disjoint ? control_region : overlap;
  for (Eigen::Index i = 0; i < carleman_core.weights.size(); ++i) {
    if (carleman_core.weights(i) > 0.0 && !(containment.weights(i) > 0.0))
      throw ValidationError(
          "InsensitizationProblem: constraint violated: G1 must be contained in "
          "G0 and O (offending interior node " + std::to_string(i) + ")");
  }

  if (initial.values.size() != mesh->n_total() ||
      initial.interior_size != mesh->n_interior())
    throw ShapeError("InsensitizationProblem: initial datum does not conform");

  if (functional_start < 0.0 || functional_start >= tree->horizon)
    throw ValidationError("InsensitizationProblem: t0 must lie in [0, T)");

  if (source) {
    if (source->dim() != mesh->n_total() || source->num_levels() < tree->num_steps)
      throw ShapeError("InsensitizationProblem: source does not conform "
                       "(need packed fields on levels 0..M-1)");
    const WeightedSourceNorm wn = weighted_source_norm(*this);
    if (!wn.finite)
      warnings.push_back("weighted source norm exp(M_w/t)*xi is infinite "
                         "(source does not vanish at t = 0)");
  }
  return warnings;
}

int InsensitizationProblem::first_active_level() const {
  const double dt = tree->dt;
  for (int n = 0; n < tree->num_steps; ++n)
    if (n * dt >= functional_start - 1e-12 * tree->horizon) return n;
  return tree->num_steps;
}

Eigen::VectorXd InsensitizationProblem::observation_mask_packed() const {
  return packed_mask(*mesh, observation_interior) +
         packed_mask(*mesh, observation_boundary);
}

ControlTriple ControlTriple::zeros(const Mesh& mesh, const NoiseTree& tree) {
  ControlTriple c;
  c.drift = AdaptedField(mesh.n_total(), tree.num_steps);
  c.diffusion = AdaptedField(mesh.n_total(), tree.num_steps);
  return c;
}

double control_energy(const Mesh& mesh, const NoiseTree& tree,
                      const ControlTriple& controls) {
  double sum = 0.0;
  for (int n = 0; n < tree.num_steps; ++n) {
    const double p = 1.0 / static_cast<double>(tree.nodes_at(n));
    const Eigen::MatrixXd& u = controls.drift.level(n);
    const Eigen::MatrixXd& v = controls.diffusion.level(n);
    double lvl = 0.0;
    for (Eigen::Index k = 0; k < u.cols(); ++k) {
      lvl += u.col(k).dot(mesh.packed_weight.cwiseProduct(u.col(k)));
      lvl += v.col(k).dot(mesh.packed_weight.cwiseProduct(v.col(k)));
    }
    sum += tree.dt * p * lvl;
  }
  return sum;
}

WeightedSourceNorm weighted_source_norm(const InsensitizationProblem& problem) {
  WeightedSourceNorm out;
  if (!problem.source) return out;
  const Mesh& mesh = *problem.mesh;
  const NoiseTree& tree = *problem.tree;
  const int ni = mesh.n_interior();
  double sum_i = 0.0, sum_b = 0.0;
  for (int n = 0; n < tree.num_steps; ++n) {
    const double t = tree.time_at(n);
    const Eigen::MatrixXd& xi = problem.source->level(n);
    const double p = 1.0 / static_cast<double>(tree.nodes_at(n));
    for (Eigen::Index k = 0; k < xi.cols(); ++k) {
      for (int i = 0; i < mesh.n_total(); ++i) {
        const double v = xi(i, k);
        if (v == 0.0) continue;
        if (t <= 0.0) {
          out.finite = false;
          continue;
        }
        const double weighted = std::exp(problem.source_weight / t) * v;
        const double cell = tree.dt * p * mesh.packed_weight(i) * weighted * weighted;
        (i < ni ? sum_i : sum_b) += cell;
      }
    }
  }
  out.interior = std::sqrt(sum_i);
  out.boundary = std::sqrt(sum_b);
  out.total = out.interior + out.boundary;
  if (!out.finite)
    out.total = out.interior = out.boundary = std::numeric_limits<double>::infinity();
  return out;
}

namespace {

// Forward sources of the cascade: drift xi + chi_G0 u, diffusion (v1; v2).
struct ForwardInputs {
  std::shared_ptr<const AdaptedField> drift;
  std::shared_ptr<const AdaptedField> diffusion;
};

ForwardInputs build_forward_inputs(const InsensitizationProblem& problem,
                                   const ControlTriple* controls) {
  ForwardInputs in;
  const Mesh& mesh = *problem.mesh;
  const NoiseTree& tree = *problem.tree;
  if (!controls) {
    in.drift = problem.source;
    return in;
  }
  const Eigen::VectorXd g0 = packed_mask(mesh, problem.control_region);
  auto drift = std::make_shared<AdaptedField>(mesh.n_total(), tree.num_steps);
  for (int n = 0; n < tree.num_steps; ++n) {
    drift->level(n) = g0.asDiagonal() * controls->drift.level(n);
    if (problem.source) drift->level(n) += problem.source->level(n);
  }
  in.drift = std::move(drift);
  in.diffusion = std::make_shared<AdaptedField>(controls->diffusion);
  return in;
}

// Backward drift source -chi_obs y, active from the functional start level.
std::shared_ptr<AdaptedField> observation_source(const InsensitizationProblem& problem,
                                                 const AdaptedField& y) {
  const Mesh& mesh = *problem.mesh;
  const NoiseTree& tree = *problem.tree;
  const Eigen::VectorXd obs = problem.observation_mask_packed();
  const int n0 = problem.first_active_level();
  auto f = std::make_shared<AdaptedField>(mesh.n_total(), tree.num_steps);
  for (int n = n0; n < tree.num_steps; ++n)
    f->level(n) = -(obs.asDiagonal() * y.level(n));
  return f;
}

}  // namespace

CascadeSolution solve_cascade(const InsensitizationProblem& problem,
                              const ControlTriple* controls) {
  const Mesh& mesh = *problem.mesh;
  const NoiseTree& tree = *problem.tree;

  const ForwardInputs in = build_forward_inputs(problem, controls);
  CascadeSolution sol;
  sol.forward = solve_forward(mesh, tree, problem.potentials, in.drift, in.diffusion,
                              problem.initial, problem.threads);

  const auto source = observation_source(problem, sol.forward.state);
  const Eigen::MatrixXd terminal =
      Eigen::MatrixXd::Zero(mesh.n_total(), tree.nodes_at(tree.num_steps));
  sol.backward = solve_backward(mesh, tree, problem.potentials.negated(), source,
                                terminal, problem.threads);
  return sol;
}

double observation_energy(const InsensitizationProblem& problem,
                          const ForwardSolution& forward) {
  const Mesh& mesh = *problem.mesh;
  const NoiseTree& tree = *problem.tree;
  if (problem.functional_start < 0.0 || problem.functional_start >= tree.horizon)
    throw ValidationError("observation_energy: functional start time must lie in [0, T)");
  const Eigen::VectorXd wobs =
      mesh.packed_weight.cwiseProduct(problem.observation_mask_packed());
  const int n0 = problem.first_active_level();
  double sum = 0.0;
  for (int n = n0; n < tree.num_steps; ++n) {
    const Eigen::MatrixXd& y = forward.state.level(n);
    const double p = 1.0 / static_cast<double>(tree.nodes_at(n));
    double lvl = 0.0;
    for (Eigen::Index k = 0; k < y.cols(); ++k)
      lvl += y.col(k).dot(wobs.cwiseProduct(y.col(k)));
    sum += tree.dt * p * lvl;
  }
  return 0.5 * sum;
}

DerivativeCheck initial_perturbation_derivative(const InsensitizationProblem& problem,
                                                const ControlTriple* controls,
                                                const BulkSurfaceField& direction,
                                                int tau_index,
                                                const DerivativeOptions& options) {
  if (tau_index != 1 && tau_index != 2)
    throw ValidationError("initial_perturbation_derivative: tau_index must be 1 or 2");
  const Mesh& mesh = *problem.mesh;

  BulkSurfaceField dir = direction;
  if (dir.values.size() != mesh.n_total())
    throw ShapeError("initial_perturbation_derivative: direction does not conform");
  dir.interior_size = mesh.n_interior();
  if (tau_index == 1)
    dir.boundary().setZero();
  else
    dir.interior().setZero();

  const double dn = norm_h(mesh, dir);
  if (dn <= 0.0)
    throw ValidationError("initial_perturbation_derivative: zero direction");
  if (options.renormalize) dir.values /= dn;

  // Base cascade: gives both the duality value and a magnitude for delta.
  const CascadeSolution base = solve_cascade(problem, controls);
  DerivativeCheck out;
  out.phi_base = observation_energy(problem, base.forward);
  out.duality = packed_dot(mesh, dir.values, base.backward_initial());

  double delta = options.delta;
  if (!(delta > 0.0))
    delta = 1e-3 * std::max(1.0, norm_h(mesh, problem.initial));
  out.delta = delta;

  // The energy only needs the forward sweep.
  const ForwardInputs inputs = build_forward_inputs(problem, controls);
  const auto phi_at = [&](double tau) {
    BulkSurfaceField shifted = problem.initial;
    shifted.values += tau * dir.values;
    const ForwardSolution f = solve_forward(mesh, *problem.tree, problem.potentials,
                                            inputs.drift, inputs.diffusion, shifted,
                                            problem.threads);
    return observation_energy(problem, f);
  };
  out.phi_plus = phi_at(delta);
  out.phi_minus = phi_at(-delta);
  out.fd = (out.phi_plus - out.phi_minus) / (2.0 * delta);

  // Comparison scale: the larger of the two routes, floored by the roundoff
  // level of the central difference itself.
  out.scale = std::max({std::abs(out.fd), std::abs(out.duality),
                        1e-3 * (out.phi_plus + out.phi_minus) / delta});
  return out;
}

AdjointSolution solve_adjoint(const InsensitizationProblem& problem,
                              const BulkSurfaceField& q0) {
  const Mesh& mesh = *problem.mesh;
  const NoiseTree& tree = *problem.tree;
  if (q0.values.size() != mesh.n_total())
    throw ShapeError("solve_adjoint: q0 does not conform to mesh");

  AdjointSolution sol;
  sol.q = solve_forward(mesh, tree, problem.potentials, nullptr, nullptr, q0,
                        problem.threads);
  const auto source = observation_source(problem, sol.q.state);
  const Eigen::MatrixXd terminal =
      Eigen::MatrixXd::Zero(mesh.n_total(), tree.nodes_at(tree.num_steps));
  sol.p = solve_backward(mesh, tree, problem.potentials.negated(), source, terminal,
                         problem.threads);
  return sol;
}

}  // namespace stochins
