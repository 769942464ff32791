#include "stochins/solvers.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <thread>
#include <vector>

namespace stochins {

namespace {

// Chunked column parallelism. Each chunk owns a disjoint column range of the
// outputs, so results are bitwise independent of the thread count.
void parallel_columns(int threads, std::int64_t cols,
                      const std::function<void(std::int64_t, std::int64_t)>& body) {
  if (threads <= 1 || cols < 64) {
    body(0, cols);
    return;
  }
  const int nt = static_cast<int>(std::min<std::int64_t>(threads, cols));
  const std::int64_t chunk = (cols + nt - 1) / nt;
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (int t = 0; t < nt; ++t) {
    const std::int64_t b = t * chunk;
    const std::int64_t e = std::min(cols, b + chunk);
    if (b >= e) break;
    pool.emplace_back(body, b, e);
  }
  for (auto& th : pool) th.join();
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t bytes) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t hash_double(std::uint64_t h, double x) {
  if (x == 0.0) x = 0.0;  // collapse -0.0 and +0.0
  return fnv1a(h, &x, sizeof(x));
}

std::uint64_t hash_vector(std::uint64_t h, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) h = hash_double(h, v(i));
  return h;
}

}  // namespace

Coefficient Coefficient::constants(double interior_value, double boundary_value) {
  Coefficient c;
  if (interior_value == 0.0 && boundary_value == 0.0) return c;
  c.kind_ = Kind::Constant;
  c.interior_value_ = interior_value;
  c.boundary_value_ = boundary_value;
  return c;
}

Coefficient Coefficient::static_field(BulkSurfaceField field) {
  Coefficient c;
  c.kind_ = Kind::Static;
  c.static_field_ = std::move(field);
  return c;
}

Coefficient Coefficient::adapted(std::shared_ptr<const AdaptedField> field) {
  if (!field) return Coefficient();
  Coefficient c;
  c.kind_ = Kind::Adapted;
  c.adapted_ = std::move(field);
  return c;
}

void Coefficient::multiply_add(const Mesh& mesh, int level, const Eigen::MatrixXd& x,
                               Eigen::MatrixXd& out, double scale,
                               std::int64_t col_offset) const {
  const int ni = mesh.n_interior();
  const int nb = mesh.n_boundary();
  switch (kind_) {
    case Kind::Zero:
      return;
    case Kind::Constant:
      if (interior_value_ != 0.0)
        out.topRows(ni) += (scale * interior_value_) * x.topRows(ni);
      if (boundary_value_ != 0.0)
        out.bottomRows(nb) += (scale * boundary_value_) * x.bottomRows(nb);
      return;
    case Kind::Static:
      if (static_field_.values.size() != mesh.n_total())
        throw ShapeError("Coefficient: static field does not conform to mesh");
      out += scale * (static_field_.values.asDiagonal() * x);
      return;
    case Kind::Adapted: {
      if (adapted_->num_levels() <= level)
        throw ShapeError("Coefficient: adapted field not defined at level " +
                         std::to_string(level));
      const Eigen::MatrixXd& c = adapted_->level(level);
      if (c.rows() != mesh.n_total() || col_offset + x.cols() > c.cols())
        throw ShapeError("Coefficient: adapted field does not conform");
      for (Eigen::Index k = 0; k < x.cols(); ++k)
        out.col(k) += scale * c.col(col_offset + k).cwiseProduct(x.col(k));
      return;
    }
  }
}

double Coefficient::max_abs_interior(const Mesh& mesh) const {
  switch (kind_) {
    case Kind::Zero:
      return 0.0;
    case Kind::Constant:
      return std::abs(interior_value_);
    case Kind::Static:
      return static_field_.values.head(mesh.n_interior()).cwiseAbs().maxCoeff();
    case Kind::Adapted: {
      double m = 0.0;
      for (const auto& lvl : adapted_->data)
        m = std::max(m, lvl.topRows(mesh.n_interior()).cwiseAbs().maxCoeff());
      return m;
    }
  }
  return 0.0;
}

double Coefficient::max_abs_boundary(const Mesh& mesh) const {
  switch (kind_) {
    case Kind::Zero:
      return 0.0;
    case Kind::Constant:
      return std::abs(boundary_value_);
    case Kind::Static:
      return static_field_.values.tail(mesh.n_boundary()).cwiseAbs().maxCoeff();
    case Kind::Adapted: {
      double m = 0.0;
      for (const auto& lvl : adapted_->data)
        m = std::max(m, lvl.bottomRows(mesh.n_boundary()).cwiseAbs().maxCoeff());
      return m;
    }
  }
  return 0.0;
}

Coefficient Coefficient::negated() const {
  Coefficient c;
  c.kind_ = kind_;
  switch (kind_) {
    case Kind::Zero:
      break;
    case Kind::Constant:
      c.interior_value_ = -interior_value_;
      c.boundary_value_ = -boundary_value_;
      break;
    case Kind::Static:
      c.static_field_ = static_field_;
      c.static_field_.values = -c.static_field_.values;
      break;
    case Kind::Adapted: {
      auto neg = std::make_shared<AdaptedField>(*adapted_);
      for (auto& lvl : neg->data) lvl = -lvl;
      c.adapted_ = std::move(neg);
      break;
    }
  }
  return c;
}

void Coefficient::hash_into(std::uint64_t& h) const {
  const int tag = static_cast<int>(kind_);
  h = fnv1a(h, &tag, sizeof(tag));
  switch (kind_) {
    case Kind::Zero:
      break;
    case Kind::Constant:
      h = hash_double(h, interior_value_);
      h = hash_double(h, boundary_value_);
      break;
    case Kind::Static:
      h = hash_vector(h, static_field_.values);
      break;
    case Kind::Adapted:
      for (const auto& lvl : adapted_->data)
        for (Eigen::Index k = 0; k < lvl.cols(); ++k)
          h = hash_vector(h, lvl.col(k));
      break;
  }
}

std::uint64_t Potentials::content_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  drift.hash_into(h);
  diffusion.hash_into(h);
  return h;
}

ImplicitStep::ImplicitStep(const Mesh& mesh, double dt) : mesh_(&mesh), dt_(dt) {
  if (!(dt > 0.0)) throw ValidationError("ImplicitStep: dt must be positive");
  Eigen::SparseMatrix<double> m = dt * mesh.stiffness;
  Eigen::SparseMatrix<double> w(mesh.n_total(), mesh.n_total());
  std::vector<Eigen::Triplet<double>> diag;
  diag.reserve(mesh.n_total());
  for (int i = 0; i < mesh.n_total(); ++i)
    diag.emplace_back(i, i, mesh.packed_weight(i));
  w.setFromTriplets(diag.begin(), diag.end());
  m += w;
  m.makeCompressed();
  factor_.compute(m);
  // (W + dt K) is SPD for dt > 0; a factorization failure is a hard bug.
  if (factor_.info() != Eigen::Success)
    throw Error("ImplicitStep: factorization reported a singular system");
}

Eigen::MatrixXd ImplicitStep::solve(const Eigen::MatrixXd& rhs) const {
  return factor_.solve(mesh_->packed_weight.asDiagonal() * rhs);
}

namespace {

void check_source(const Mesh& mesh, const NoiseTree& tree,
                  const std::shared_ptr<const AdaptedField>& src, const char* name) {
  if (!src) return;
  if (src->dim() != mesh.n_total())
    throw ShapeError(std::string(name) + ": source dimension does not match mesh");
  if (src->num_levels() < tree.num_steps)
    throw ShapeError(std::string(name) + ": source must be defined on levels 0..M-1");
}

}  // namespace

ForwardSolution solve_forward(const Mesh& mesh, const NoiseTree& tree,
                              const Potentials& potentials,
                              std::shared_ptr<const AdaptedField> drift_source,
                              std::shared_ptr<const AdaptedField> diffusion_source,
                              const BulkSurfaceField& initial, int threads) {
  if (initial.values.size() != mesh.n_total() ||
      initial.interior_size != mesh.n_interior())
    throw ShapeError("solve_forward: initial datum does not conform to mesh");
  check_source(mesh, tree, drift_source, "solve_forward(drift)");
  check_source(mesh, tree, diffusion_source, "solve_forward(diffusion)");

  const int dim = mesh.n_total();
  const int m = tree.num_steps;
  const double dt = tree.dt;
  const ImplicitStep step(mesh, dt);

  ForwardSolution out;
  out.state = AdaptedField(dim, m + 1);
  out.state.level(0).col(0) = initial.values;
  out.drift_source = drift_source;
  out.diffusion_source = diffusion_source;
  out.potentials_hash = potentials.content_hash();

  for (int n = 0; n < m; ++n) {
    const Eigen::MatrixXd& x = out.state.level(n);
    Eigen::MatrixXd& next = out.state.level(n + 1);
    const std::int64_t cols = x.cols();

    parallel_columns(threads, cols, [&](std::int64_t b, std::int64_t e) {
      const std::int64_t w = e - b;
      Eigen::MatrixXd r = x.middleCols(b, w);
      potentials.drift.multiply_add(mesh, n, x.middleCols(b, w), r, dt, b);
      if (drift_source) r += dt * drift_source->level(n).middleCols(b, w);
      const Eigen::MatrixXd smoothed = step.solve(r);

      Eigen::MatrixXd d = Eigen::MatrixXd::Zero(dim, w);
      potentials.diffusion.multiply_add(mesh, n, x.middleCols(b, w), d, 1.0, b);
      if (diffusion_source) d += diffusion_source->level(n).middleCols(b, w);

      for (std::int64_t k = 0; k < w; ++k) {
        next.col(2 * (b + k)) = smoothed.col(k) - tree.sqrt_dt * d.col(k);
        next.col(2 * (b + k) + 1) = smoothed.col(k) + tree.sqrt_dt * d.col(k);
      }
    });
  }
  return out;
}

BackwardSolution solve_backward(const Mesh& mesh, const NoiseTree& tree,
                                const Potentials& potentials,
                                std::shared_ptr<const AdaptedField> drift_source,
                                const Eigen::MatrixXd& terminal, int threads) {
  if (terminal.rows() != mesh.n_total() ||
      terminal.cols() != tree.nodes_at(tree.num_steps))
    throw ShapeError("solve_backward: terminal datum must be leaf-indexed");
  check_source(mesh, tree, drift_source, "solve_backward(drift)");

  // Forward-convention coefficients: the transpose step reuses exactly the
  // bits the matching forward sweep would use.
  const Potentials fwd_pot = potentials.negated();

  const int dim = mesh.n_total();
  const int m = tree.num_steps;
  const double dt = tree.dt;
  const ImplicitStep step(mesh, dt);

  BackwardSolution out;
  out.state = AdaptedField(dim, m + 1);
  out.drift_state = AdaptedField(dim, m);
  out.martingale = AdaptedField(dim, m);
  out.state.level(m) = terminal;
  out.drift_source = drift_source;
  out.potentials_hash = fwd_pot.content_hash();

  for (int n = m - 1; n >= 0; --n) {
    const Eigen::MatrixXd& next = out.state.level(n + 1);
    Eigen::MatrixXd& z = out.state.level(n);
    Eigen::MatrixXd& ztilde = out.drift_state.level(n);
    Eigen::MatrixXd& mart = out.martingale.level(n);
    const std::int64_t cols = z.cols();

    parallel_columns(threads, cols, [&](std::int64_t b, std::int64_t e) {
      const std::int64_t w = e - b;
      Eigen::MatrixXd mean(dim, w);
      for (std::int64_t k = 0; k < w; ++k) {
        const std::int64_t node = b + k;
        mean.col(k) = 0.5 * (next.col(2 * node) + next.col(2 * node + 1));
        mart.col(node) =
            (next.col(2 * node + 1) - next.col(2 * node)) / (2.0 * tree.sqrt_dt);
      }
      ztilde.middleCols(b, w) = step.solve(mean);

      Eigen::MatrixXd zn = ztilde.middleCols(b, w);
      fwd_pot.drift.multiply_add(mesh, n, ztilde.middleCols(b, w), zn, dt, b);
      fwd_pot.diffusion.multiply_add(mesh, n, mart.middleCols(b, w), zn, dt, b);
      if (drift_source) zn -= dt * drift_source->level(n).middleCols(b, w);
      z.middleCols(b, w) = zn;
    });
  }
  return out;
}

double expectation_pairing(const Mesh& mesh, const NoiseTree& tree,
                           const AdaptedField& u, const AdaptedField& v, int level) {
  const Eigen::MatrixXd& a = u.level(level);
  const Eigen::MatrixXd& bmat = v.level(level);
  if (a.cols() != bmat.cols() || a.rows() != mesh.n_total() ||
      bmat.rows() != mesh.n_total())
    throw ShapeError("expectation_pairing: fields do not conform");
  const double p = 1.0 / static_cast<double>(tree.nodes_at(level));
  double sum = 0.0;
  for (Eigen::Index k = 0; k < a.cols(); ++k)
    sum += a.col(k).dot(mesh.packed_weight.cwiseProduct(bmat.col(k)));
  return p * sum;
}

DualityCheck duality_residual(const Mesh& mesh, const NoiseTree& tree,
                              const ForwardSolution& fwd,
                              const BackwardSolution& bwd) {
  if (fwd.potentials_hash != bwd.potentials_hash)
    throw Error("duality_residual: potentials do not satisfy the adjoint pairing "
                "(need a3 = -a1, a4 = -a2)");
  const int m = tree.num_steps;

  const double t_end = expectation_pairing(mesh, tree, fwd.state, bwd.state, m);
  const double t_zero =
      fwd.state.level(0).col(0).dot(mesh.packed_weight.cwiseProduct(bwd.state.level(0).col(0)));

  double rhs = 0.0, magnitude = 0.0;
  for (int n = 0; n < m; ++n) {
    if (fwd.drift_source) {
      const double a = tree.dt * expectation_pairing(mesh, tree, *fwd.drift_source,
                                                     bwd.drift_state, n);
      rhs += a;
      magnitude += std::abs(a);
    }
    if (fwd.diffusion_source) {
      const double b = tree.dt * expectation_pairing(mesh, tree, *fwd.diffusion_source,
                                                     bwd.martingale, n);
      rhs += b;
      magnitude += std::abs(b);
    }
    if (bwd.drift_source) {
      const double c =
          tree.dt * expectation_pairing(mesh, tree, fwd.state, *bwd.drift_source, n);
      rhs += c;
      magnitude += std::abs(c);
    }
  }

  DualityCheck check;
  check.residual = std::abs(t_end - t_zero - rhs);
  check.scale = std::abs(t_end) + std::abs(t_zero) + magnitude;
  check.relative = check.scale > 0.0 ? check.residual / check.scale : 0.0;
  return check;
}

Eigen::MatrixXd solve_forward_deterministic(
    const Mesh& mesh, int steps, double horizon, const Potentials& potentials,
    const std::function<Eigen::VectorXd(int level, double t)>& drift_source,
    const BulkSurfaceField& initial) {
  if (steps < 1) throw ValidationError("solve_forward_deterministic: steps < 1");
  if (!(horizon > 0.0))
    throw ValidationError("solve_forward_deterministic: horizon must be positive");
  const double dt = horizon / steps;
  if (dt < 1e-12 * horizon)
    throw ValidationError("solve_forward_deterministic: degenerate dt rejected");
  if (!potentials.diffusion.is_zero())
    throw ValidationError(
        "solve_forward_deterministic: diffusion data must be zero on a single path");
  if (!potentials.drift.is_deterministic())
    throw ValidationError(
        "solve_forward_deterministic: adapted drift coefficients need the tree solver");
  if (initial.values.size() != mesh.n_total())
    throw ShapeError("solve_forward_deterministic: initial datum mismatch");

  const ImplicitStep step(mesh, dt);
  Eigen::MatrixXd path(mesh.n_total(), steps + 1);
  path.col(0) = initial.values;
  for (int n = 0; n < steps; ++n) {
    Eigen::MatrixXd r = path.col(n);
    potentials.drift.multiply_add(mesh, 0, path.col(n), r, dt);
    if (drift_source) r.col(0) += dt * drift_source(n, n * dt);
    path.col(n + 1) = step.solve(r).col(0);
  }
  return path;
}

std::string adapted_field_csv(const NoiseTree& tree, const AdaptedField& field) {
  std::ostringstream out;
  out << "level,offset,node_index";
  for (int i = 0; i < field.dim(); ++i) out << ",v" << i;
  out << "\n";
  char buf[64];
  for (int n = 0; n < field.num_levels(); ++n) {
    const Eigen::MatrixXd& lvl = field.level(n);
    const std::int64_t level_base = tree.nodes_at(n) - 1;  // 2^n - 1
    for (Eigen::Index k = 0; k < lvl.cols(); ++k) {
      out << n << "," << k << "," << (level_base + k);
      for (int i = 0; i < field.dim(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", lvl(i, k));
        out << "," << buf;
      }
      out << "\n";
    }
  }
  return out.str();
}

std::string level_norms_json(const Mesh& mesh, const NoiseTree& tree,
                             const AdaptedField& field) {
  nlohmann::ordered_json j;
  j["levels"] = field.num_levels();
  std::vector<double> times, norms;
  for (int n = 0; n < field.num_levels(); ++n) {
    times.push_back(tree.time_at(n));
    norms.push_back(expectation_pairing(mesh, tree, field, field, n));
  }
  j["t_time"] = times;
  j["mean_sq_norm"] = norms;
  return j.dump(2);
}

}  // namespace stochins
