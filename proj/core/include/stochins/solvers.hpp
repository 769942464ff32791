#pragma once

// Forward and backward solvers on the noise tree.
//
// Forward step at a node with state y, drift source f and diffusion source g
// (dt = tree step, S = (I - dt*A)^{-1} the drift-implicit smoother):
//
//     y*        = S (y + dt*(r1.y + f))
//     children  = y* +- sqrt(dt) * (r2.y + g)
//
// where r1, r2 are the (reaction, diffusion) coefficient fields. The backward
// solver is the exact algebraic transpose of this map, not an independent
// discretization: with Z the martingale part recovered exactly on the binomial
// tree,
//
//     Z  = (z+ - z-) / (2 sqrt(dt))
//     z~ = S ((z+ + z-) / 2)
//     z  = z~ + dt*(r1.z~ + r2.Z) - dt*F
//
// which approximates  dz + Az dt = (-r1 z - r2 Z + ... - F ... ) dt + Z dW.
// In the convention used below solve_backward takes the backward-equation
// coefficients (a3, a4) with a3 = -r1, a4 = -r2 and a drift source F, i.e. it
// solves  dz + Az dt = (a3 z + a4 Z + F) dt + Z dW.
//
// Because step and transpose share the same factorized matrix and the same
// diagonal coefficient products, the pairing identity
//
//   E<y_M, z_M>_h - <y_0, z_0>_h
//       = sum_n dt * E[ <f_n, z~_n>_h + <g_n, Z_n>_h + <y_n, F_n>_h ]
//
// holds to machine precision whenever the coefficients satisfy the adjoint
// pairing a3 = -a1, a4 = -a2. See docs/discretization.md for the derivation.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <functional>
#include <memory>

#include "stochins/adapted.hpp"
#include "stochins/mesh.hpp"
#include "stochins/tree.hpp"

namespace stochins {

// Bounded coefficient field on the packed layout. Kept deliberately small:
// zero, a pair of constants (interior value, boundary value), a static field,
// or a fully adapted field.
class Coefficient {
public:
  enum class Kind { Zero, Constant, Static, Adapted };

  Coefficient() = default;

  static Coefficient zero() { return Coefficient(); }
  static Coefficient constants(double interior_value, double boundary_value);
  static Coefficient static_field(BulkSurfaceField field);
  static Coefficient adapted(std::shared_ptr<const AdaptedField> field);

  Kind kind() const { return kind_; }
  bool is_zero() const { return kind_ == Kind::Zero; }
  bool is_deterministic() const { return kind_ != Kind::Adapted; }

  // out += scale * (coefficient . X), columnwise over the nodes of a level.
  // col_offset is the node index of X's first column within the level (used
  // when a sweep processes a level in column chunks).
  void multiply_add(const Mesh& mesh, int level, const Eigen::MatrixXd& x,
                    Eigen::MatrixXd& out, double scale,
                    std::int64_t col_offset = 0) const;

  double max_abs_interior(const Mesh& mesh) const;
  double max_abs_boundary(const Mesh& mesh) const;

  Coefficient negated() const;
  void hash_into(std::uint64_t& h) const;

private:
  Kind kind_ = Kind::Zero;
  double interior_value_ = 0.0, boundary_value_ = 0.0;
  BulkSurfaceField static_field_;
  std::shared_ptr<const AdaptedField> adapted_;
};

// The four bounded potentials of the state equations, packed as a drift pair
// (interior a1, boundary b1) and a diffusion pair (interior a2, boundary b2).
struct Potentials {
  Coefficient drift;
  Coefficient diffusion;

  static Potentials none() { return {}; }
  static Potentials constants(double a1, double a2, double b1, double b2) {
    return {Coefficient::constants(a1, b1), Coefficient::constants(a2, b2)};
  }

  Potentials negated() const { return {drift.negated(), diffusion.negated()}; }
  std::uint64_t content_hash() const;
};

// Factorization of the drift-implicit step: solves (I - dt A) X = B as the
// SPD system (W + dt K) X = W B, shared by every node of a sweep.
class ImplicitStep {
public:
  ImplicitStep(const Mesh& mesh, double dt);
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;
  double dt() const { return dt_; }

private:
  const Mesh* mesh_;
  double dt_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> factor_;
};

struct ForwardSolution {
  AdaptedField state;  // levels 0..M; level 0 equals the initial datum
  std::shared_ptr<const AdaptedField> drift_source;      // f, may be null
  std::shared_ptr<const AdaptedField> diffusion_source;  // g, may be null
  std::uint64_t potentials_hash = 0;
};

struct BackwardSolution {
  AdaptedField state;        // z: levels 0..M; level M is the assembled terminal
  AdaptedField drift_state;  // z~: levels 0..M-1, the states paired with drift data
  AdaptedField martingale;   // Z: levels 0..M-1
  std::shared_ptr<const AdaptedField> drift_source;  // F, may be null
  // Hash of the forward-convention coefficients (-a3, -a4); equals the hash
  // of the forward potentials exactly when the adjoint pairing holds.
  std::uint64_t potentials_hash = 0;
};

ForwardSolution solve_forward(const Mesh& mesh, const NoiseTree& tree,
                              const Potentials& potentials,
                              std::shared_ptr<const AdaptedField> drift_source,
                              std::shared_ptr<const AdaptedField> diffusion_source,
                              const BulkSurfaceField& initial, int threads = 1);

// Backward-equation potentials (a3, a4, b3, b4) and the backward-equation drift
// source F; terminal is leaf-indexed (dim x 2^M).
BackwardSolution solve_backward(const Mesh& mesh, const NoiseTree& tree,
                                const Potentials& potentials,
                                std::shared_ptr<const AdaptedField> drift_source,
                                const Eigen::MatrixXd& terminal, int threads = 1);

struct DualityCheck {
  double residual = 0.0;  // | E<y_M,z_M> - <y_0,z_0> - sum of pairing terms |
  double scale = 0.0;     // sum of magnitudes of all participating terms
  double relative = 0.0;
};

// Evaluates the exact discrete pairing identity for a forward/backward pair
// solved with adjoint-paired potentials. Throws if the potentials stamps do
// not match (contract violation).
DualityCheck duality_residual(const Mesh& mesh, const NoiseTree& tree,
                              const ForwardSolution& fwd,
                              const BackwardSolution& bwd);

// E <u_n, v_n>_h at one level.
double expectation_pairing(const Mesh& mesh, const NoiseTree& tree,
                           const AdaptedField& u, const AdaptedField& v, int level);

// One deterministic path of the same drift-implicit scheme (all diffusion data
// zero); used for manufactured-solution convergence studies where the step
// count far exceeds what a tree can hold. Returns dim x (steps+1).
Eigen::MatrixXd solve_forward_deterministic(
    const Mesh& mesh, int steps, double horizon, const Potentials& potentials,
    const std::function<Eigen::VectorXd(int level, double t)>& drift_source,
    const BulkSurfaceField& initial);

// Export of a field-valued adapted process: one row per tree node with the
// global node index and all spatial components.
std::string adapted_field_csv(const NoiseTree& tree, const AdaptedField& field);

// Per-level mean-square norms E|x_n|_h^2 as a JSON document.
std::string level_norms_json(const Mesh& mesh, const NoiseTree& tree,
                             const AdaptedField& field);

}  // namespace stochins
