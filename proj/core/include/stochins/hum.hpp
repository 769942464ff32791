#pragma once

// Penalized control synthesis.
//
// The map Lambda: q0 -> z(0) obtained by (adjoint solve) -> (control
// insertion) -> (cascade solve with zero sources) is linear, self-adjoint and
// positive semidefinite in the quadrature inner product; its quadratic form
// equals the inserted control energy. Insensitizing controls are produced by
// conjugate gradient on the regularized normal equation
//
//     (Lambda + eps I) q0 = -z_free(0)
//
// in the h-inner product, followed by the structural control extraction
//     u = chi_G0 p~,  v1 = P,  v2 = Phat
// from the adjoint solve at the minimizer. The achieved |z(0)|_h then obeys
// |z(0)|^2 <= 2 eps |J_eps(q0*)| up to the CG tolerance, and the derivative
// defect of the observed energy is bounded by |z(0)| via Cauchy-Schwarz.

#include <cstdint>
#include <vector>

#include "stochins/cascade.hpp"
#include "stochins/mesh.hpp"

namespace stochins {

struct HumConfig {
  double epsilon = 1e-6;  // Tikhonov penalty
  double cg_tol = 1e-8;   // relative residual tolerance
  int max_iter = 500;
  bool record_history = true;

  void validate() const;
};

struct HumResult {
  BulkSurfaceField minimizer;  // q0*
  ControlTriple controls;

  bool converged = true;
  int iterations = 0;
  double rhs_norm = 0.0;         // |z_free(0)|_h
  double final_residual = 0.0;   // |(Lambda+eps)q0* + z_free(0)|_h
  double control_energy = 0.0;   // sum dt E[|u|^2 + |v1|^2 + |v2|^2]
  double quadratic_value = 0.0;  // J_eps at the minimizer (<= 0)

  double achieved_norm = 0.0;      // |z(0)|_h of the verification cascade
  double defect_interior = 0.0;    // |z(0)|_{L2(G)}: sup of d(Phi)/d(tau1) over unit directions
  double defect_boundary = 0.0;    // |z_Gamma(0)|: same for tau2
  double consistency_error = 0.0;  // |z(0) - (Lambda q0* + z_free(0))|_h

  std::vector<double> residual_history;  // |r_k|_h, starting at iteration 0
  std::vector<double> energy_history;    // J_eps(x_k)
};

// u = chi_G0 p~, v1 = P, v2 = Phat. The drift control is read from the
// backward drift states p~; that is the choice that makes Lambda exactly
// symmetric (see docs/discretization.md).
ControlTriple extract_controls(const InsensitizationProblem& problem,
                               const AdjointSolution& adjoint);

// One application of Lambda (two solves of the coupled pair).
BulkSurfaceField gramian_apply(const InsensitizationProblem& problem,
                               const BulkSurfaceField& q0);

// z(0) of the cascade with the problem's sources and zero controls.
BulkSurfaceField free_response(const InsensitizationProblem& problem);

HumResult solve_hum(const InsensitizationProblem& problem, const HumConfig& config);

struct DirectionCheck {
  int tau_index = 1;
  double fd = 0.0;
  double duality = 0.0;
};

struct InsensitivityReport {
  std::vector<DirectionCheck> directions;
  double max_fd_interior = 0.0, max_fd_boundary = 0.0;
  double max_duality_interior = 0.0, max_duality_boundary = 0.0;
  double phi_controlled = 0.0;
  double control_norm = 0.0;  // sqrt of the control energy
  WeightedSourceNorm source_norm;
  // control_norm / weighted source norm: the empirical constant of the
  // control estimate.
  double empirical_constant = 0.0;
};

// Checks the insensitization property of a control triple over random unit
// perturbation directions (n_directions per index).
InsensitivityReport verify_insensitization(const InsensitizationProblem& problem,
                                           const ControlTriple& controls,
                                           int n_directions, std::uint64_t seed);

}  // namespace stochins
