#include "stochins/mesh.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>
#include <vector>

namespace stochins {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Eigen::SparseMatrix<double> stiffness_from_edges(int n,
                                                 const std::vector<FormEdge>& bulk,
                                                 const std::vector<FormEdge>& surface) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(4 * (bulk.size() + surface.size()));
  auto add = [&](const FormEdge& e) {
    trip.emplace_back(e.i, e.i, e.conductance);
    trip.emplace_back(e.j, e.j, e.conductance);
    trip.emplace_back(e.i, e.j, -e.conductance);
    trip.emplace_back(e.j, e.i, -e.conductance);
  };
  for (const auto& e : bulk) add(e);
  for (const auto& e : surface) add(e);
  Eigen::SparseMatrix<double> k(n, n);
  k.setFromTriplets(trip.begin(), trip.end());
  return k;
}

void finalize(Mesh& mesh) {
  mesh.packed_weight.resize(mesh.n_total());
  mesh.packed_weight << mesh.interior_weight, mesh.boundary_weight;
  mesh.stiffness =
      stiffness_from_edges(mesh.n_total(), mesh.bulk_edges, mesh.surface_edges);
}

}  // namespace

Mesh build_interval_mesh(int cells, double length) {
  // At least one interior node is required for the bulk equation to exist.
  if (cells < 2)
    throw ValidationError("build_interval_mesh: invalid mesh, need cells >= 2, got " +
                          std::to_string(cells));
  if (!(length > 0.0))
    throw ValidationError("build_interval_mesh: length must be positive");

  Mesh mesh;
  mesh.kind = GeometryKind::Interval;
  mesh.cells = cells;
  mesh.length = length;
  mesh.h = length / cells;

  const int ni = cells - 1;
  mesh.interior_coord0.resize(ni);
  mesh.interior_coord1 = Eigen::VectorXd::Zero(ni);
  for (int j = 1; j < cells; ++j) mesh.interior_coord0(j - 1) = j * mesh.h;
  mesh.interior_weight = Eigen::VectorXd::Constant(ni, mesh.h);

  mesh.boundary_coord0.resize(2);
  mesh.boundary_coord0 << 0.0, length;
  mesh.boundary_coord1 = Eigen::VectorXd::Zero(2);
  mesh.boundary_weight = Eigen::VectorXd::Ones(2);  // counting measure
  mesh.boundary_side = {0, 1};

  // Packed index of grid node j.
  auto packed = [&](int j) {
    if (j == 0) return ni;
    if (j == cells) return ni + 1;
    return j - 1;
  };
  const double c = 1.0 / mesh.h;
  for (int j = 0; j < cells; ++j)
    mesh.bulk_edges.push_back({packed(j), packed(j + 1), c});

  mesh.normal_stencil.resize(2);
  mesh.normal_stencil[0] = {packed(1), c};          // x = 0
  mesh.normal_stencil[1] = {packed(cells - 1), c};  // x = L

  finalize(mesh);
  return mesh;
}

Mesh build_annulus_mesh(int radial_cells, int angular_cells, double inner_radius,
                        double outer_radius) {
  if (!(inner_radius > 0.0))
    throw ValidationError("build_annulus_mesh: singular geometry, inner radius must be > 0");
  if (!(outer_radius > inner_radius))
    throw ValidationError("build_annulus_mesh: outer radius must exceed inner radius");
  if (radial_cells < 3 || angular_cells < 4)
    throw ValidationError("build_annulus_mesh: need radial_cells >= 3 and angular_cells >= 4");

  Mesh mesh;
  mesh.kind = GeometryKind::Annulus;
  mesh.radial_cells = radial_cells;
  mesh.angular_cells = angular_cells;
  mesh.inner_radius = inner_radius;
  mesh.outer_radius = outer_radius;
  mesh.dr = (outer_radius - inner_radius) / radial_cells;
  mesh.dphi = kTwoPi / angular_cells;

  const int nr = radial_cells, np = angular_cells;
  const int ni = (nr - 1) * np;
  auto radius = [&](int k) { return inner_radius + k * mesh.dr; };

  mesh.interior_coord0.resize(ni);
  mesh.interior_coord1.resize(ni);
  mesh.interior_weight.resize(ni);
  for (int k = 1; k < nr; ++k) {
    for (int l = 0; l < np; ++l) {
      const int idx = (k - 1) * np + l;
      mesh.interior_coord0(idx) = radius(k);
      mesh.interior_coord1(idx) = l * mesh.dphi;
      mesh.interior_weight(idx) = radius(k) * mesh.dr * mesh.dphi;  // polar cell area
    }
  }

  const int nb = 2 * np;
  mesh.boundary_coord0.resize(nb);
  mesh.boundary_coord1.resize(nb);
  mesh.boundary_weight.resize(nb);
  mesh.boundary_side.resize(nb);
  for (int l = 0; l < np; ++l) {
    mesh.boundary_coord0(l) = inner_radius;
    mesh.boundary_coord1(l) = l * mesh.dphi;
    mesh.boundary_weight(l) = inner_radius * mesh.dphi;  // arc length
    mesh.boundary_side[l] = 0;
    mesh.boundary_coord0(np + l) = outer_radius;
    mesh.boundary_coord1(np + l) = l * mesh.dphi;
    mesh.boundary_weight(np + l) = outer_radius * mesh.dphi;
    mesh.boundary_side[np + l] = 1;
  }

  // Packed index of grid node (k, l), k = 0 inner circle, k = nr outer circle.
  auto packed = [&](int k, int l) {
    l = (l % np + np) % np;
    if (k == 0) return ni + l;
    if (k == nr) return ni + np + l;
    return (k - 1) * np + l;
  };

  // Radial fluxes through the arcs at half radii.
  for (int k = 0; k < nr; ++k) {
    const double c = (radius(k) + 0.5 * mesh.dr) * mesh.dphi / mesh.dr;
    for (int l = 0; l < np; ++l)
      mesh.bulk_edges.push_back({packed(k, l), packed(k + 1, l), c});
  }
  // Angular fluxes within interior rings.
  for (int k = 1; k < nr; ++k) {
    const double c = mesh.dr / (radius(k) * mesh.dphi);
    for (int l = 0; l < np; ++l)
      mesh.bulk_edges.push_back({packed(k, l), packed(k, l + 1), c});
  }
  // Tangential (Laplace-Beltrami) energy on each boundary circle.
  for (int l = 0; l < np; ++l) {
    mesh.surface_edges.push_back(
        {packed(0, l), packed(0, l + 1), 1.0 / (inner_radius * mesh.dphi)});
    mesh.surface_edges.push_back(
        {packed(nr, l), packed(nr, l + 1), 1.0 / (outer_radius * mesh.dphi)});
  }

  mesh.normal_stencil.resize(nb);
  for (int l = 0; l < np; ++l) {
    const double c_in = (radius(0) + 0.5 * mesh.dr) / (inner_radius * mesh.dr);
    const double c_out = (radius(nr) - 0.5 * mesh.dr) / (outer_radius * mesh.dr);
    mesh.normal_stencil[l] = {packed(1, l), c_in};
    mesh.normal_stencil[np + l] = {packed(nr - 1, l), c_out};
  }

  finalize(mesh);
  return mesh;
}

BulkSurfaceField BulkSurfaceField::from_parts(const Mesh& mesh,
                                              const Eigen::VectorXd& interior,
                                              const Eigen::VectorXd& boundary) {
  if (interior.size() != mesh.n_interior() || boundary.size() != mesh.n_boundary())
    throw ShapeError("BulkSurfaceField::from_parts: part sizes do not match mesh");
  BulkSurfaceField f(mesh);
  f.interior() = interior;
  f.boundary() = boundary;
  return f;
}

int RegionMask::active_nodes() const {
  int n = 0;
  for (Eigen::Index i = 0; i < weights.size(); ++i)
    if (weights(i) > 0.0) ++n;
  return n;
}

double RegionMask::measure(const Mesh& mesh) const {
  const Eigen::VectorXd& w =
      support == MaskSupport::Interior ? mesh.interior_weight : mesh.boundary_weight;
  if (w.size() != weights.size())
    throw ShapeError("RegionMask::measure: mask does not match mesh");
  return weights.dot(w);
}

Eigen::VectorXd packed_mask(const Mesh& mesh, const RegionMask& mask) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(mesh.n_total());
  if (mask.support == MaskSupport::Interior) {
    if (mask.weights.size() != mesh.n_interior())
      throw ShapeError("packed_mask: interior mask size mismatch");
    out.head(mesh.n_interior()) = mask.weights;
  } else {
    if (mask.weights.size() != mesh.n_boundary())
      throw ShapeError("packed_mask: boundary mask size mismatch");
    out.tail(mesh.n_boundary()) = mask.weights;
  }
  return out;
}

RegionMask mask_intersection(const RegionMask& a, const RegionMask& b) {
  if (a.support != b.support || a.weights.size() != b.weights.size())
    throw ShapeError("mask_intersection: incompatible masks");
  RegionMask out;
  out.support = a.support;
  out.weights = a.weights.cwiseMin(b.weights);
  return out;
}

namespace {

bool contains(double lo, double hi, double x) {
  const double tol = 1e-9 * (std::abs(lo) + std::abs(hi) + 1.0);
  return x >= lo - tol && x <= hi + tol;
}

// Angular containment modulo 2*pi; an empty arc (lo == hi) means nothing.
bool contains_angle(double lo, double hi, double phi) {
  auto wrap = [](double a) {
    a = std::fmod(a, kTwoPi);
    return a < 0 ? a + kTwoPi : a;
  };
  const double tol = 1e-9;
  lo = wrap(lo);
  hi = wrap(hi);
  phi = wrap(phi);
  if (lo <= hi) return phi >= lo - tol && phi <= hi + tol;
  return phi >= lo - tol || phi <= hi + tol;  // arc wraps through zero
}

}  // namespace

RegionMask interval_region(const Mesh& mesh, double lo, double hi) {
  if (mesh.kind != GeometryKind::Interval)
    throw ValidationError("interval_region: mesh is not an interval");
  RegionMask mask;
  mask.support = MaskSupport::Interior;
  mask.weights = Eigen::VectorXd::Zero(mesh.n_interior());
  for (int i = 0; i < mesh.n_interior(); ++i)
    if (contains(lo, hi, mesh.interior_coord0(i))) mask.weights(i) = 1.0;
  return mask;
}

RegionMask interval_boundary_region(const Mesh& mesh, bool left, bool right) {
  if (mesh.kind != GeometryKind::Interval)
    throw ValidationError("interval_boundary_region: mesh is not an interval");
  RegionMask mask;
  mask.support = MaskSupport::Boundary;
  mask.weights = Eigen::VectorXd::Zero(mesh.n_boundary());
  if (left) mask.weights(0) = 1.0;
  if (right) mask.weights(1) = 1.0;
  return mask;
}

RegionMask annulus_region(const Mesh& mesh, double r_lo, double r_hi, bool full_angle,
                          double phi_lo, double phi_hi) {
  if (mesh.kind != GeometryKind::Annulus)
    throw ValidationError("annulus_region: mesh is not an annulus");
  RegionMask mask;
  mask.support = MaskSupport::Interior;
  mask.weights = Eigen::VectorXd::Zero(mesh.n_interior());
  for (int i = 0; i < mesh.n_interior(); ++i) {
    if (!contains(r_lo, r_hi, mesh.interior_coord0(i))) continue;
    if (!full_angle && !contains_angle(phi_lo, phi_hi, mesh.interior_coord1(i))) continue;
    mask.weights(i) = 1.0;
  }
  return mask;
}

RegionMask annulus_boundary_region(const Mesh& mesh, bool inner, bool outer) {
  if (mesh.kind != GeometryKind::Annulus)
    throw ValidationError("annulus_boundary_region: mesh is not an annulus");
  RegionMask mask;
  mask.support = MaskSupport::Boundary;
  mask.weights = Eigen::VectorXd::Zero(mesh.n_boundary());
  for (int b = 0; b < mesh.n_boundary(); ++b) {
    if (mesh.boundary_side[b] == 0 && inner) mask.weights(b) = 1.0;
    if (mesh.boundary_side[b] == 1 && outer) mask.weights(b) = 1.0;
  }
  return mask;
}

BulkSurfaceField apply_operator(const Mesh& mesh, const BulkSurfaceField& field) {
  if (field.values.size() != mesh.n_total() || field.interior_size != mesh.n_interior())
    throw ShapeError("apply_operator: field does not conform to mesh");
  BulkSurfaceField out(mesh);
  out.values = -(mesh.stiffness * field.values).cwiseQuotient(mesh.packed_weight);
  return out;
}

double inner_product(const Mesh& mesh, const BulkSurfaceField& f,
                     const BulkSurfaceField& g) {
  if (f.values.size() != mesh.n_total() || g.values.size() != mesh.n_total() ||
      f.interior_size != mesh.n_interior() || g.interior_size != mesh.n_interior())
    throw ShapeError("inner_product: fields do not conform to mesh");
  return packed_dot(mesh, f.values, g.values);
}

double norm_h(const Mesh& mesh, const BulkSurfaceField& f) {
  return std::sqrt(std::max(0.0, inner_product(mesh, f, f)));
}

Eigen::VectorXd normal_derivative(const Mesh& mesh, const BulkSurfaceField& field) {
  if (field.values.size() != mesh.n_total() || field.interior_size != mesh.n_interior())
    throw ShapeError("normal_derivative: field does not conform to mesh");
  const int nb = mesh.n_boundary();
  Eigen::VectorXd out(nb);
  for (int b = 0; b < nb; ++b) {
    const auto& st = mesh.normal_stencil[b];
    out(b) = st.coeff *
             (field.values(mesh.n_interior() + b) - field.values(st.neighbor));
  }
  return out;
}

std::string mesh_to_json(const Mesh& mesh) {
  nlohmann::ordered_json j;
  j["kind"] = mesh.kind == GeometryKind::Interval ? "interval" : "annulus";
  if (mesh.kind == GeometryKind::Interval) {
    j["cells"] = mesh.cells;
    j["length"] = mesh.length;
    j["h"] = mesh.h;
  } else {
    j["radial_cells"] = mesh.radial_cells;
    j["angular_cells"] = mesh.angular_cells;
    j["inner_radius"] = mesh.inner_radius;
    j["outer_radius"] = mesh.outer_radius;
    j["dr"] = mesh.dr;
    j["dphi"] = mesh.dphi;
  }
  auto vec = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  j["interior"]["coord0"] = vec(mesh.interior_coord0);
  j["interior"]["coord1"] = vec(mesh.interior_coord1);
  j["interior"]["weight"] = vec(mesh.interior_weight);
  j["boundary"]["coord0"] = vec(mesh.boundary_coord0);
  j["boundary"]["coord1"] = vec(mesh.boundary_coord1);
  j["boundary"]["weight"] = vec(mesh.boundary_weight);
  j["boundary"]["side"] = mesh.boundary_side;
  return j.dump(2);
}

}  // namespace stochins
