#include "stochins/carleman.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace stochins {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Streaming log-sum-exp of nonnegative terms given by their logarithms.
struct LogSum {
  double max_log = kNegInf;
  double acc = 0.0;

  void add(double lg) {
    if (lg == kNegInf) return;
    if (lg <= max_log) {
      acc += std::exp(lg - max_log);
    } else {
      acc = acc * std::exp(max_log - lg) + 1.0;
      max_log = lg;
    }
  }
  double log_total() const {
    if (!(acc > 0.0)) return kNegInf;
    return max_log + std::log(acc);
  }
};

double log_sq(double v) { return v == 0.0 ? kNegInf : 2.0 * std::log(std::abs(v)); }

// Discrete gradient magnitude of a field at every interior node (centered
// differences; neighbors may be boundary nodes).
Eigen::VectorXd interior_gradient_magnitude(const Mesh& mesh,
                                            const BulkSurfaceField& f) {
  const int ni = mesh.n_interior();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(ni);
  if (mesh.kind == GeometryKind::Interval) {
    const int cells = mesh.cells;
    auto value = [&](int j) {
      if (j == 0) return f.values(ni);
      if (j == cells) return f.values(ni + 1);
      return f.values(j - 1);
    };
    for (int j = 1; j < cells; ++j)
      g(j - 1) = std::abs((value(j + 1) - value(j - 1)) / (2.0 * mesh.h));
  } else {
    const int nr = mesh.radial_cells, np = mesh.angular_cells;
    auto packed = [&](int k, int l) {
      l = (l % np + np) % np;
      if (k == 0) return ni + l;
      if (k == nr) return ni + np + l;
      return (k - 1) * np + l;
    };
    for (int k = 1; k < nr; ++k) {
      const double r = mesh.inner_radius + k * mesh.dr;
      for (int l = 0; l < np; ++l) {
        const double dradial =
            (f.values(packed(k + 1, l)) - f.values(packed(k - 1, l))) / (2.0 * mesh.dr);
        const double dangular =
            (f.values(packed(k, l + 1)) - f.values(packed(k, l - 1))) /
            (2.0 * r * mesh.dphi);
        g((k - 1) * np + l) = std::hypot(dradial, dangular);
      }
    }
  }
  return g;
}

std::string node_label(const Mesh& mesh, int interior_node) {
  if (mesh.kind == GeometryKind::Interval)
    return "x = " + std::to_string(mesh.interior_coord0(interior_node));
  return "r = " + std::to_string(mesh.interior_coord0(interior_node)) +
         ", phi = " + std::to_string(mesh.interior_coord1(interior_node));
}

}  // namespace

BulkSurfaceField build_weight_profile(const Mesh& mesh, const RegionMask& core,
                                      double peak, ProfileReport* report) {
  if (!(peak > 0.0))
    throw ValidationError("build_weight_profile: peak must be positive");
  if (core.support != MaskSupport::Interior ||
      core.weights.size() != mesh.n_interior())
    throw ShapeError("build_weight_profile: core mask does not conform");
  if (core.is_empty())
    throw ValidationError("build_weight_profile: core region G1 is empty");

  BulkSurfaceField psi(mesh);
  std::vector<int> apex_nodes;

  if (mesh.kind == GeometryKind::Interval) {
    const double len = mesh.length;
    for (int i = 0; i < mesh.n_interior(); ++i) {
      const double x = mesh.interior_coord0(i);
      psi.values(i) = 4.0 * peak * x * (len - x) / (len * len);
      if (std::abs(x - 0.5 * len) <= 0.5 * mesh.h + 1e-12 * len) apex_nodes.push_back(i);
    }
  } else {
    const double r0 = mesh.inner_radius, r1 = mesh.outer_radius;
    const double span = r1 - r0;
    const double rmid = 0.5 * (r0 + r1);
    for (int i = 0; i < mesh.n_interior(); ++i) {
      const double r = mesh.interior_coord0(i);
      psi.values(i) = 4.0 * peak * (r - r0) * (r1 - r) / (span * span);
      if (std::abs(r - rmid) <= 0.5 * mesh.dr + 1e-12 * span) apex_nodes.push_back(i);
    }
  }
  // Boundary values are exactly zero by construction (left zero-initialized).

  const Eigen::VectorXd grad = interior_gradient_magnitude(mesh, psi);
  const double gmax = grad.size() > 0 ? grad.maxCoeff() : 0.0;

  // Critical nodes: the apex cells plus any node where the discrete gradient
  // vanishes outright.
  std::vector<int> critical = apex_nodes;
  for (int i = 0; i < grad.size(); ++i)
    if (grad(i) <= 1e-12 * gmax &&
        std::find(critical.begin(), critical.end(), i) == critical.end())
      critical.push_back(i);
  std::sort(critical.begin(), critical.end());

  for (int i : critical) {
    if (!(core.weights(i) > 0.0))
      throw ValidationError(
          "build_weight_profile: critical point of the weight profile at " +
          node_label(mesh, i) + " (interior node " + std::to_string(i) +
          ") lies outside G1");
  }

  if (report) {
    report->critical_nodes = critical;
    report->max_gradient = gmax;
    double cmin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < grad.size(); ++i)
      if (!(core.weights(i) > 0.0)) cmin = std::min(cmin, grad(i));
    report->min_gradient_off_core = std::isfinite(cmin) ? cmin : 0.0;
  }
  return psi;
}

double default_observability_weight(double lambda, double mu, double peak,
                                    double horizon) {
  // Match exp(-M/t) to theta^2 gamma^3 at t = T/4, evaluated at the profile
  // peak where theta is largest.
  const double t = 0.25 * horizon;
  const double k_peak = std::exp(mu * peak) - std::exp(2.0 * mu * peak);  // < 0
  const double gamma = 1.0 / (t * (horizon - t));
  const double m = -2.0 * lambda * k_peak / (horizon - t) - 3.0 * t * std::log(gamma);
  return std::max(m, 0.05 * horizon);
}

CarlemanWeights evaluate_weights(const CarlemanParams& params, const NoiseTree& tree,
                                 const Mesh& mesh) {
  if (params.lambda < 1.0 || params.mu < 1.0)
    throw ValidationError("evaluate_weights: lambda and mu must be >= 1");
  if (!(params.observability_weight > 0.0))
    throw ValidationError("evaluate_weights: observability weight must be positive");
  if (params.profile.values.size() != mesh.n_total())
    throw ShapeError("evaluate_weights: profile does not conform to mesh");
  if (tree.num_steps < 2)
    throw ValidationError("evaluate_weights: no interior time levels (need M >= 2)");

  // Node-wise profile contract: positive inside, zero on the boundary,
  // bounded by the declared peak.
  const double peak = params.profile_peak;
  if (!(peak > 0.0))
    throw ValidationError("evaluate_weights: profile peak must be positive");
  for (int i = 0; i < mesh.n_interior(); ++i)
    if (!(params.profile.values(i) > 0.0))
      throw ValidationError("evaluate_weights: profile not positive at interior node " +
                            std::to_string(i));
  for (int b = 0; b < mesh.n_boundary(); ++b)
    if (std::abs(params.profile.values(mesh.n_interior() + b)) > 1e-14 * peak)
      throw ValidationError("evaluate_weights: profile not zero at boundary node " +
                            std::to_string(b));
  if (params.profile.values.maxCoeff() > peak * (1.0 + 1e-12))
    throw ValidationError("evaluate_weights: profile exceeds its declared peak");

  CarlemanWeights w;
  w.first_level = 1;
  w.last_level = tree.num_steps - 1;
  const int count = w.last_level - w.first_level + 1;
  const double horizon = tree.horizon;
  const double big = std::exp(2.0 * params.mu * peak);

  w.gamma.resize(count);
  w.alpha.resize(mesh.n_total(), count);
  for (int n = w.first_level; n <= w.last_level; ++n) {
    const double t = tree.time_at(n);
    const double g = 1.0 / (t * (horizon - t));
    w.gamma[n - w.first_level] = g;
    for (int i = 0; i < mesh.n_total(); ++i)
      w.alpha(i, n - w.first_level) =
          (std::exp(params.mu * params.profile.values(i)) - big) * g;
  }

  // Measured constant in |alpha_t| <= C e^{2 mu |psi|_inf} gamma^2.
  double c = 0.0;
  for (int j = 0; j + 1 < count; ++j) {
    const double t_mid = tree.time_at(w.first_level + j) + 0.5 * tree.dt;
    const double g_mid = 1.0 / (t_mid * (horizon - t_mid));
    const double denom = big * g_mid * g_mid;
    const double num =
        (w.alpha.col(j + 1) - w.alpha.col(j)).cwiseAbs().maxCoeff() / tree.dt;
    c = std::max(c, num / denom);
  }
  w.alpha_time_bound = c;
  return w;
}

namespace {

// Accumulates log terms of  coeff * dt * 2^-n * w_i * theta^2 * gamma^pow * v^2
// over the interior time levels, for one spatial block (optionally masked).
struct WeightedSums {
  const Mesh& mesh;
  const NoiseTree& tree;
  const CarlemanWeights& w;
  double lambda;

  double log_dt;
  Eigen::VectorXd log_weight;  // per packed node

  WeightedSums(const Mesh& m, const NoiseTree& t, const CarlemanWeights& cw,
               double lam)
      : mesh(m), tree(t), w(cw), lambda(lam), log_dt(std::log(t.dt)) {
    log_weight.resize(m.n_total());
    for (int i = 0; i < m.n_total(); ++i)
      log_weight(i) = std::log(m.packed_weight(i));
  }

  // rows in [row_begin, row_end); mask (packed, nullable) multiplies the term.
  void add_state(LogSum& s, double log_coeff, const AdaptedField& u, int gamma_pow,
                 int row_begin, int row_end, const Eigen::VectorXd* mask) const {
    for (int n = w.first_level; n <= w.last_level; ++n) {
      const int idx = n - w.first_level;
      const double base = log_coeff + log_dt - n * std::numbers::ln2 +
                          gamma_pow * std::log(w.gamma[idx]);
      const Eigen::MatrixXd& lvl = u.level(n);
      for (Eigen::Index k = 0; k < lvl.cols(); ++k) {
        for (int i = row_begin; i < row_end; ++i) {
          if (mask && !((*mask)(i) > 0.0)) continue;
          const double v = lvl(i, k);
          if (v == 0.0) continue;
          double lg = base + log_weight(i) + 2.0 * lambda * w.alpha(i, idx) + log_sq(v);
          if (mask) lg += std::log((*mask)(i));
          s.add(lg);
        }
      }
    }
  }

  // Same, with the values produced lazily per level (for effective sources).
  template <typename LevelFn>
  void add_state_fn(LogSum& s, double log_coeff, LevelFn&& level_values, int gamma_pow,
                    int row_begin, int row_end) const {
    for (int n = w.first_level; n <= w.last_level; ++n) {
      const int idx = n - w.first_level;
      const double base = log_coeff + log_dt - n * std::numbers::ln2 +
                          gamma_pow * std::log(w.gamma[idx]);
      const Eigen::MatrixXd lvl = level_values(n);
      for (Eigen::Index k = 0; k < lvl.cols(); ++k) {
        for (int i = row_begin; i < row_end; ++i) {
          const double v = lvl(i, k);
          if (v == 0.0) continue;
          s.add(base + log_weight(i) + 2.0 * lambda * w.alpha(i, idx) + log_sq(v));
        }
      }
    }
  }

  // Weighted gradient energy: sum over form edges of c_e (u_i - u_j)^2 with
  // theta^2 evaluated as the geometric mean over the edge.
  void add_gradient(LogSum& s, double log_coeff, const AdaptedField& u, int gamma_pow,
                    const std::vector<FormEdge>& edges) const {
    for (int n = w.first_level; n <= w.last_level; ++n) {
      const int idx = n - w.first_level;
      const double base = log_coeff + log_dt - n * std::numbers::ln2 +
                          gamma_pow * std::log(w.gamma[idx]);
      const Eigen::MatrixXd& lvl = u.level(n);
      for (Eigen::Index k = 0; k < lvl.cols(); ++k) {
        for (const FormEdge& e : edges) {
          const double d = lvl(e.i, k) - lvl(e.j, k);
          if (d == 0.0) continue;
          s.add(base + std::log(e.conductance) +
                lambda * (w.alpha(e.i, idx) + w.alpha(e.j, idx)) + log_sq(d));
        }
      }
    }
  }
};

CarlemanRatio finish(const LogSum& lhs, const LogSum& rhs) {
  CarlemanRatio r;
  r.log_lhs = lhs.log_total();
  r.log_rhs = rhs.log_total();
  r.lhs = r.log_lhs == kNegInf ? 0.0 : std::exp(r.log_lhs);
  r.rhs = r.log_rhs == kNegInf ? 0.0 : std::exp(r.log_rhs);
  if (r.log_lhs == kNegInf && r.log_rhs == kNegInf)
    r.ratio = 0.0;  // 0/0 by convention
  else if (r.log_rhs == kNegInf)
    r.ratio = std::numeric_limits<double>::infinity();
  else
    r.ratio = std::exp(r.log_lhs - r.log_rhs);
  return r;
}

}  // namespace

CarlemanRatio carleman_ratio(CarlemanKind kind, const InsensitizationProblem& problem,
                             const AdjointSolution& adjoint,
                             const CarlemanParams& params) {
  const Mesh& mesh = *problem.mesh;
  const NoiseTree& tree = *problem.tree;
  if (adjoint.q.state.dim() != mesh.n_total() ||
      adjoint.q.state.num_levels() != tree.num_steps + 1)
    throw ShapeError("carleman_ratio: adjoint solution does not match mesh/tree");

  const CarlemanWeights w = evaluate_weights(params, tree, mesh);
  const WeightedSums sums(mesh, tree, w, params.lambda);
  const int ni = mesh.n_interior();
  const int nt = mesh.n_total();
  const double ll = std::log(params.lambda);

  const Eigen::VectorXd core = packed_mask(mesh, problem.carleman_core);
  const Eigen::VectorXd control = packed_mask(mesh, problem.control_region);

  // Effective drift/diffusion sources of the homogeneous forward equation.
  const auto q_drift = [&](int n) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(nt, adjoint.q.state.level(n).cols());
    problem.potentials.drift.multiply_add(mesh, n, adjoint.q.state.level(n), out, 1.0);
    return out;
  };
  const auto q_diff = [&](int n) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(nt, adjoint.q.state.level(n).cols());
    problem.potentials.diffusion.multiply_add(mesh, n, adjoint.q.state.level(n), out,
                                              1.0);
    return out;
  };
  // Full drift of the backward equation: -a1 p~ - a2 P - chi_obs q (the last
  // part is the stored observation source of the solve).
  const auto p_drift = [&](int n) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(nt, adjoint.p.drift_state.level(n).cols());
    problem.potentials.drift.multiply_add(mesh, n, adjoint.p.drift_state.level(n), out,
                                          -1.0);
    problem.potentials.diffusion.multiply_add(mesh, n, adjoint.p.martingale.level(n),
                                              out, -1.0);
    if (adjoint.p.drift_source) out += adjoint.p.drift_source->level(n);
    return out;
  };

  LogSum lhs, rhs;
  switch (kind) {
    case CarlemanKind::Forward: {
      sums.add_state(lhs, 3 * ll, adjoint.q.state, 3, 0, ni, nullptr);
      sums.add_state(lhs, 3 * ll, adjoint.q.state, 3, ni, nt, nullptr);
      sums.add_gradient(lhs, ll, adjoint.q.state, 1, mesh.bulk_edges);
      sums.add_gradient(lhs, ll, adjoint.q.state, 1, mesh.surface_edges);

      sums.add_state(rhs, 3 * ll, adjoint.q.state, 3, 0, ni, &core);
      sums.add_state_fn(rhs, 0.0, q_drift, 0, 0, ni);
      sums.add_state_fn(rhs, 0.0, q_drift, 0, ni, nt);
      sums.add_state_fn(rhs, 2 * ll, q_diff, 2, 0, ni);
      sums.add_state_fn(rhs, 2 * ll, q_diff, 2, ni, nt);
      break;
    }
    case CarlemanKind::Backward: {
      sums.add_state(lhs, 3 * ll, adjoint.p.state, 3, 0, ni, nullptr);
      sums.add_state(lhs, 3 * ll, adjoint.p.state, 3, ni, nt, nullptr);
      sums.add_gradient(lhs, ll, adjoint.p.state, 1, mesh.bulk_edges);
      sums.add_gradient(lhs, ll, adjoint.p.state, 1, mesh.surface_edges);

      sums.add_state(rhs, 3 * ll, adjoint.p.state, 3, 0, ni, &core);
      sums.add_state_fn(rhs, 0.0, p_drift, 0, 0, ni);
      sums.add_state_fn(rhs, 0.0, p_drift, 0, ni, nt);
      sums.add_state(rhs, 2 * ll, adjoint.p.martingale, 2, 0, ni, nullptr);
      sums.add_state(rhs, 2 * ll, adjoint.p.martingale, 1, ni, nt, nullptr);
      break;
    }
    case CarlemanKind::Coupled: {
      sums.add_state(lhs, 2 * ll, adjoint.p.state, 3, 0, ni, nullptr);
      sums.add_state(lhs, 2 * ll, adjoint.p.state, 3, ni, nt, nullptr);
      sums.add_state(lhs, 2 * ll, adjoint.q.state, 3, 0, ni, nullptr);
      sums.add_state(lhs, 2 * ll, adjoint.q.state, 3, ni, nt, nullptr);
      sums.add_gradient(lhs, 0.0, adjoint.p.state, 1, mesh.bulk_edges);
      sums.add_gradient(lhs, 0.0, adjoint.p.state, 1, mesh.surface_edges);
      sums.add_gradient(lhs, 0.0, adjoint.q.state, 1, mesh.bulk_edges);
      sums.add_gradient(lhs, 0.0, adjoint.q.state, 1, mesh.surface_edges);

      sums.add_state(rhs, 12 * ll, adjoint.p.state, 7, 0, ni, &control);
      sums.add_state(rhs, ll, adjoint.p.martingale, 2, 0, ni, nullptr);
      sums.add_state(rhs, ll, adjoint.p.martingale, 1, ni, nt, nullptr);
      break;
    }
  }
  return finish(lhs, rhs);
}

ObservabilityStats observability_ratio(const InsensitizationProblem& problem,
                                       const std::vector<BulkSurfaceField>& samples,
                                       double m_weight) {
  if (samples.empty())
    throw ValidationError("observability_ratio: need at least one sample");
  const Mesh& mesh = *problem.mesh;
  const NoiseTree& tree = *problem.tree;
  const Eigen::VectorXd control = packed_mask(mesh, problem.control_region);

  ObservabilityStats stats;
  stats.total_samples = static_cast<int>(samples.size());
  double sum_ratio = 0.0;
  double minr = std::numeric_limits<double>::infinity(), maxr = 0.0;

  for (const auto& q0 : samples) {
    const AdjointSolution adj = solve_adjoint(problem, q0);
    double lhs = 0.0, rhs = 0.0;
    for (int n = 0; n < tree.num_steps; ++n) {
      const double t = tree.time_at(n);
      const double damp = t > 0.0 ? std::exp(-m_weight / t) : 0.0;
      const double p = 1.0 / static_cast<double>(tree.nodes_at(n));
      const Eigen::MatrixXd& state = adj.p.state.level(n);
      const Eigen::MatrixXd& mart = adj.p.martingale.level(n);
      for (Eigen::Index k = 0; k < state.cols(); ++k) {
        lhs += tree.dt * p * damp *
               state.col(k).dot(mesh.packed_weight.cwiseProduct(state.col(k)));
        rhs += tree.dt * p *
               (state.col(k).dot(mesh.packed_weight.cwiseProduct(
                    control.cwiseProduct(state.col(k)))) +
                mart.col(k).dot(mesh.packed_weight.cwiseProduct(mart.col(k))));
      }
    }
    stats.lhs_values.push_back(lhs);
    stats.rhs_values.push_back(rhs);
    if (lhs == 0.0 && rhs == 0.0) {
      ++stats.skipped;
      stats.ratios.push_back(0.0);
      continue;
    }
    if (rhs == 0.0) {
      ++stats.uc_failures;  // observation vanished on a nonzero state
      stats.ratios.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    const double r = lhs / rhs;
    stats.ratios.push_back(r);
    ++stats.used_samples;
    sum_ratio += r;
    minr = std::min(minr, r);
    maxr = std::max(maxr, r);
  }
  if (stats.used_samples > 0) {
    stats.max_ratio = maxr;
    stats.min_ratio = minr;
    stats.mean_ratio = sum_ratio / stats.used_samples;
  }
  return stats;
}

}  // namespace stochins
