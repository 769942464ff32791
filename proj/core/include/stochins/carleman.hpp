#pragma once

// Carleman weight machinery and observability diagnostics.
//
// Weights, for parameters lambda, mu >= 1 and a spatial profile psi that is
// positive inside, zero on the boundary and has nonvanishing gradient off the
// core region G1:
//
//     alpha(t,x) = (e^{mu psi(x)} - e^{2 mu |psi|_inf}) / (t (T - t))   <= 0
//     gamma(t)   = 1 / (t (T - t))                                     >= 4/T^2
//     theta      = e^{lambda alpha}                                    in (0, 1]
//
// theta underflows catastrophically near t = 0 and t = T, so every weighted
// sum here is accumulated in log space (log-sum-exp); the time endpoints are
// excluded, matching the vanishing of the continuum weights there.
//
// The ratio diagnostics evaluate both sides of the weighted estimates for the
// adjoint pair (backward p with martingale parts, forward q): the per-equation
// estimates, the coupled estimate with observation terms on the right, and
// the plain observability quotient with weight exp(-M_w/t).

#include <Eigen/Dense>

#include <vector>

#include "stochins/cascade.hpp"
#include "stochins/mesh.hpp"
#include "stochins/tree.hpp"

namespace stochins {

struct CarlemanParams {
  double lambda = 2.0;
  double mu = 1.5;
  double observability_weight = 1.0;  // M_w in exp(-M_w/t)
  BulkSurfaceField profile;           // psi
  double profile_peak = 0.0;          // analytic |psi|_inf
  RegionMask core;                    // G1
};

struct ProfileReport {
  std::vector<int> critical_nodes;      // interior nodes with vanishing gradient
  double min_gradient_off_core = 0.0;   // c with |grad psi| >= c outside G1
  double max_gradient = 0.0;
};

// Quadratic bump profile: positive inside, exactly zero on the boundary,
// peak value `peak` on the mid line. Every node where the discrete gradient
// vanishes must lie inside the core region, otherwise construction fails and
// the message names the offending node.
BulkSurfaceField build_weight_profile(const Mesh& mesh, const RegionMask& core,
                                      double peak, ProfileReport* report = nullptr);

// M_w such that exp(-M_w/t) matches the theta^2 gamma^3 scale (at the profile
// peak) at t = T/4; clamped away from zero.
double default_observability_weight(double lambda, double mu, double peak,
                                    double horizon);

struct CarlemanWeights {
  int first_level = 1;
  int last_level = 0;            // inclusive; interior levels 1..M-1
  std::vector<double> gamma;     // indexed by level - first_level
  Eigen::MatrixXd alpha;         // n_total x (count of interior levels)
  // Measured constant in |alpha_t| <= C e^{2 mu |psi|_inf} gamma^2 across the
  // stored levels (reported, not asserted).
  double alpha_time_bound = 0.0;
};

// Weight evaluation on the interior time levels; throws if asked to include
// the endpoints (gamma blows up there) or if the tree has no interior levels.
CarlemanWeights evaluate_weights(const CarlemanParams& params, const NoiseTree& tree,
                                 const Mesh& mesh);

enum class CarlemanKind { Forward, Backward, Coupled };

struct CarlemanRatio {
  double log_lhs = 0.0, log_rhs = 0.0;  // -inf when the side is identically zero
  double lhs = 0.0, rhs = 0.0;          // exp of the above (may underflow to 0)
  double ratio = 0.0;                   // conventions: 0/0 -> 0, x/0 -> inf
};

// Both sides of the weighted estimate of the given kind, evaluated on an
// adjoint solution of the problem. Effective sources are reconstructed from
// the problem coefficients and the stored observation source, so the ratio
// refers to exactly the system that was solved.
CarlemanRatio carleman_ratio(CarlemanKind kind, const InsensitizationProblem& problem,
                             const AdjointSolution& adjoint,
                             const CarlemanParams& params);

struct ObservabilityStats {
  int total_samples = 0;
  int used_samples = 0;
  int skipped = 0;        // both sides zero
  int uc_failures = 0;    // rhs = 0 with lhs > 0: unique-continuation violation
  double max_ratio = 0.0;
  double min_ratio = 0.0;
  double mean_ratio = 0.0;
  std::vector<double> ratios, lhs_values, rhs_values;
};

// Observability quotient over a set of initial data samples:
//   lhs = sum dt E[ exp(-M_w/t) (|p|^2 + |p_Gamma|^2) ]
//   rhs = sum dt E[ |chi_G0 p|^2 + |P|^2 + |Phat|^2 ]
// The empirical observability constant is max(lhs/rhs).
ObservabilityStats observability_ratio(const InsensitizationProblem& problem,
                                       const std::vector<BulkSurfaceField>& samples,
                                       double m_weight);

}  // namespace stochins
