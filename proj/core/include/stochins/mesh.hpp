#pragma once

// Discrete bulk-surface geometry.
//
// A field on the mesh is a pair (interior values, boundary values) packed into
// one vector, interior block first. The boundary block is independent storage:
// the coupling condition "boundary trace of y equals the surface unknown" is a
// property of the layout rather than an equation to enforce.
//
// The elliptic operator acts as
//     interior rows:  Laplacian
//     boundary rows:  Laplace-Beltrami along the boundary minus the outward
//                     normal derivative
// and is assembled from a symmetric stiffness form K so that it is exactly
// self-adjoint and negative semidefinite in the quadrature inner product:
//     <A y, z>_h = -y^T K z,   A = -W^{-1} K,   W = diag(quadrature weights).
// Constants are in the kernel of A. Exact symmetry here is what the adjoint
// solver pair and the Gramian build on, so it is a hard contract, tested to
// machine precision.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <string>
#include <vector>

#include "stochins/errors.hpp"

namespace stochins {

enum class GeometryKind { Interval, Annulus };

// One edge of a discrete Dirichlet form: contributes c*(y_i - y_j)^2 to the
// energy. Kept around for weighted gradient quadratures.
struct FormEdge {
  int i = 0;
  int j = 0;
  double conductance = 0.0;
};

// Outward normal derivative at a boundary node b is coeff*(y_b - y_neighbor),
// the one-sided difference baked into the symmetric assembly.
struct NormalStencil {
  int neighbor = 0;  // packed index of the adjacent interior node
  double coeff = 0.0;
};

class Mesh {
public:
  GeometryKind kind = GeometryKind::Interval;

  // Interval parameters (valid when kind == Interval)
  int cells = 0;        // J; nodes are x_0..x_J
  double length = 0.0;  // L
  double h = 0.0;       // L / J

  // Annulus parameters (valid when kind == Annulus)
  int radial_cells = 0;   // Nr
  int angular_cells = 0;  // Nphi
  double inner_radius = 0.0, outer_radius = 0.0;
  double dr = 0.0, dphi = 0.0;

  // Node coordinates. Interval: coord0 = x, coord1 unused (zero).
  // Annulus: coord0 = r, coord1 = phi in [0, 2*pi).
  Eigen::VectorXd interior_coord0, interior_coord1;
  Eigen::VectorXd boundary_coord0, boundary_coord1;
  std::vector<int> boundary_side;  // interval: 0 = left, 1 = right; annulus: 0 = inner circle, 1 = outer

  // Quadrature weights (strictly positive).
  Eigen::VectorXd interior_weight;  // units of length (1d) / area (2d)
  Eigen::VectorXd boundary_weight;  // surface measure
  Eigen::VectorXd packed_weight;    // [interior; boundary]

  // Symmetric stiffness K (packed indexing) and its edge decomposition.
  Eigen::SparseMatrix<double> stiffness;
  std::vector<FormEdge> bulk_edges;     // Dirichlet energy of the bulk gradient
  std::vector<FormEdge> surface_edges;  // Dirichlet energy of the tangential gradient
  std::vector<NormalStencil> normal_stencil;  // one per boundary node

  int n_interior() const { return static_cast<int>(interior_weight.size()); }
  int n_boundary() const { return static_cast<int>(boundary_weight.size()); }
  int n_total() const { return n_interior() + n_boundary(); }
};

Mesh build_interval_mesh(int cells, double length);
Mesh build_annulus_mesh(int radial_cells, int angular_cells, double inner_radius,
                        double outer_radius);

// JSON description of the mesh (geometry kind, parameters, nodes, weights).
std::string mesh_to_json(const Mesh& mesh);

class BulkSurfaceField {
public:
  BulkSurfaceField() = default;

  explicit BulkSurfaceField(const Mesh& mesh)
      : interior_size(mesh.n_interior()),
        values(Eigen::VectorXd::Zero(mesh.n_total())) {}

  BulkSurfaceField(const Mesh& mesh, Eigen::VectorXd packed)
      : interior_size(mesh.n_interior()), values(std::move(packed)) {
    if (values.size() != mesh.n_total())
      throw ShapeError("BulkSurfaceField: packed size does not match mesh");
  }

  static BulkSurfaceField from_parts(const Mesh& mesh,
                                     const Eigen::VectorXd& interior,
                                     const Eigen::VectorXd& boundary);

  int interior_size = 0;
  Eigen::VectorXd values;

  auto interior() { return values.head(interior_size); }
  auto interior() const { return values.head(interior_size); }
  auto boundary() { return values.tail(values.size() - interior_size); }
  auto boundary() const { return values.tail(values.size() - interior_size); }
};

// Indicator-style weights on one side of the mesh. Values live in [0,1] and
// are {0,1} unless smoothing was requested explicitly by the caller.
enum class MaskSupport { Interior, Boundary };

struct RegionMask {
  MaskSupport support = MaskSupport::Interior;
  Eigen::VectorXd weights;

  bool is_empty() const {
    return weights.size() == 0 || weights.maxCoeff() <= 0.0;
  }
  int active_nodes() const;
  double measure(const Mesh& mesh) const;  // quadrature mass of the indicator
};

// Mask spread onto the packed layout; zero on the opposite block.
Eigen::VectorXd packed_mask(const Mesh& mesh, const RegionMask& mask);
RegionMask mask_intersection(const RegionMask& a, const RegionMask& b);

// Region constructors. Interval coordinates snap by closed containment
// [lo, hi] with a small tolerance; angular intervals are treated the same way
// modulo 2*pi.
RegionMask interval_region(const Mesh& mesh, double lo, double hi);
RegionMask interval_boundary_region(const Mesh& mesh, bool left, bool right);
RegionMask annulus_region(const Mesh& mesh, double r_lo, double r_hi,
                          bool full_angle = true, double phi_lo = 0.0,
                          double phi_hi = 0.0);
RegionMask annulus_boundary_region(const Mesh& mesh, bool inner, bool outer);

// A = -W^{-1} K applied to a field: interior rows give the Laplacian, boundary
// rows Laplace-Beltrami minus the outward normal derivative.
BulkSurfaceField apply_operator(const Mesh& mesh, const BulkSurfaceField& field);

// <f, g>_h = sum_i w_i f_i g_i + sum_b w_b f_b g_b
double inner_product(const Mesh& mesh, const BulkSurfaceField& f,
                     const BulkSurfaceField& g);
double norm_h(const Mesh& mesh, const BulkSurfaceField& f);

// Unchecked fast path on packed vectors (used in per-node loops).
inline double packed_dot(const Mesh& mesh, const Eigen::VectorXd& a,
                         const Eigen::VectorXd& b) {
  return a.dot(mesh.packed_weight.cwiseProduct(b));
}

// Outward normal derivative at every boundary node.
Eigen::VectorXd normal_derivative(const Mesh& mesh, const BulkSurfaceField& field);

}  // namespace stochins
