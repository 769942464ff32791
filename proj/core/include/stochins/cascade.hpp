#pragma once

// The insensitization problem and its cascade reformulation.
//
// The controlled forward state y is driven by sources xi and the control
// triple (u, v1, v2); a backward state z is driven by the observation of y on
// the regions (O, O_Gamma) and has terminal value zero. The control triple
// insensitizes the observed energy
//
//     Phi = 1/2 sum_{t_n >= t0} dt E[ <chi_O y_n, y_n> + <chi_OGamma y_n, y_n> ]
//
// against perturbations of the initial data exactly when z(0) = 0: the
// derivative of Phi in the perturbation size equals the pairing of the
// perturbation direction with z(0), and on this discretization the identity
// is exact (see docs/discretization.md).

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <vector>

#include "stochins/mesh.hpp"
#include "stochins/solvers.hpp"
#include "stochins/tree.hpp"

namespace stochins {

struct InsensitizationProblem {
  std::shared_ptr<const Mesh> mesh;
  std::shared_ptr<const NoiseTree> tree;

  Potentials potentials;  // forward-equation coefficients (a1, a2; b1, b2)

  RegionMask control_region;        // G0 (interior)
  RegionMask observation_interior;  // O
  RegionMask observation_boundary;  // O_Gamma
  RegionMask carleman_core;         // G1 (interior), G1 within G0 and O

  // Known heat sources, packed (interior rows xi1, boundary rows xi2),
  // defined on levels 0..M-1. Null means zero.
  std::shared_ptr<const AdaptedField> source;

  BulkSurfaceField initial;        // (y0, y0_Gamma)
  double functional_start = 0.0;   // t0 >= 0; energy counts levels with t_n >= t0
  double source_weight = 1.0;      // M_w in the weighted source norm exp(M_w/t)
  int threads = 1;

  // Throws ValidationError on hard constraint violations; returns warnings
  // (non-fatal findings such as an infinite weighted source norm).
  std::vector<std::string> validate(bool allow_disjoint_regions = false) const;

  int first_active_level() const;  // smallest n with t_n >= t0
  Eigen::VectorXd observation_mask_packed() const;
};

// (u, v1, v2) as adapted processes on levels 0..M-1. u is stored packed with
// zero boundary rows and is masked to the control region whenever used; v
// packs v1 (interior rows) and v2 (boundary rows).
struct ControlTriple {
  AdaptedField drift;      // u
  AdaptedField diffusion;  // (v1; v2)

  static ControlTriple zeros(const Mesh& mesh, const NoiseTree& tree);
};

// sum_n dt E[ |u_n|^2 + |v1_n|^2 + |v2_n|^2 ] in the quadrature norms.
double control_energy(const Mesh& mesh, const NoiseTree& tree,
                      const ControlTriple& controls);

struct WeightedSourceNorm {
  double interior = 0.0;  // | exp(M_w/t) xi1 |
  double boundary = 0.0;  // | exp(M_w/t) xi2 |
  double total = 0.0;
  bool finite = true;
};
WeightedSourceNorm weighted_source_norm(const InsensitizationProblem& problem);

struct CascadeSolution {
  ForwardSolution forward;   // (y, y_Gamma)
  BackwardSolution backward;  // (z, z_Gamma; Z, Zhat), terminal level is zero

  // z at time zero (root node), packed.
  Eigen::VectorXd backward_initial() const { return backward.state.level(0).col(0); }
};

// Solve the coupled pair: forward with xi + control sources, then backward
// driven by -chi_obs y with zero terminal. controls may be null (zero).
CascadeSolution solve_cascade(const InsensitizationProblem& problem,
                              const ControlTriple* controls);

// The observed energy of a forward solution (left-endpoint time quadrature
// over levels with t_n >= t0, matching the exact pairing bookkeeping).
double observation_energy(const InsensitizationProblem& problem,
                          const ForwardSolution& forward);

struct DerivativeOptions {
  double delta = 0.0;        // finite-difference step; 0 picks a scaled default
  bool renormalize = true;   // normalize the direction to unit h-norm
};

struct DerivativeCheck {
  double fd = 0.0;        // [Phi(+delta) - Phi(-delta)] / (2 delta)
  double duality = 0.0;   // <direction, z(0)> on the matching block
  double phi_base = 0.0, phi_plus = 0.0, phi_minus = 0.0;
  double delta = 0.0;
  double scale = 0.0;     // magnitude reference for comparing fd vs duality
};

// Derivative of the observed energy with respect to the size of an
// initial-data perturbation. tau_index 1 perturbs the interior datum (the
// boundary component of the direction is zeroed), tau_index 2 the boundary
// datum. Both routes are returned; they agree to roundoff because the energy
// is exactly quadratic and the solvers are exact adjoints.
DerivativeCheck initial_perturbation_derivative(const InsensitizationProblem& problem,
                                                const ControlTriple* controls,
                                                const BulkSurfaceField& direction,
                                                int tau_index,
                                                const DerivativeOptions& options = {});

// The adjoint coupled pair: homogeneous forward state q from initial datum
// q0, then backward state (p, p_Gamma; P, Phat) driven by -chi_obs q with
// zero terminal.
struct AdjointSolution {
  ForwardSolution q;
  BackwardSolution p;
};

AdjointSolution solve_adjoint(const InsensitizationProblem& problem,
                              const BulkSurfaceField& q0);

}  // namespace stochins
