#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <array>
#include <functional>
#include <vector>

#include "ferro/mesh.hpp"
#include "ferro/types.hpp"

namespace ferro {

using SparseMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

// Order-2 rule on the reference triangle {x,y >= 0, x+y <= 1}: edge
// midpoints with equal weights. Integrates quadratics exactly.
struct QuadratureRule {
  std::array<Vec2, 3> points;
  std::array<double, 3> weights;
};

inline QuadratureRule quadrature_rule(int order) {
  if (order != 2) throw config_error("quadrature_rule: only order 2 is supported");
  QuadratureRule q;
  q.points = {Vec2(0.5, 0.0), Vec2(0.5, 0.5), Vec2(0.0, 0.5)};
  q.weights = {1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0};
  return q;
}

// Two-point Gauss rule on [0,1] for boundary facet integrals.
inline std::array<std::pair<double, double>, 2> segment_rule() {
  const double d = 0.5 / std::numbers::sqrt3;
  return {{{0.5 - d, 0.5}, {0.5 + d, 0.5}}};
}

// Affine geometry of one triangle: physical quadrature points are
// x = v0 + J q, and P1 shape gradients are constant per element.
struct ElementGeometry {
  std::array<int, 3> nodes;
  Vec2 v0;
  Mat2 jac;                  // [v1-v0 | v2-v0]
  double area = 0.0;
  std::array<Vec2, 3> grad;  // physical gradients of the three hat functions

  Vec2 map(const Vec2& ref) const { return v0 + jac * ref; }
};

inline ElementGeometry element_geometry(const Mesh& mesh, int tri) {
  const auto& t = mesh.triangles[tri];
  ElementGeometry g;
  g.nodes = t;
  g.v0 = mesh.vertices[t[0]];
  g.jac.col(0) = mesh.vertices[t[1]] - g.v0;
  g.jac.col(1) = mesh.vertices[t[2]] - g.v0;
  const double det = g.jac.determinant();
  if (det <= 0.0) throw assembly_error("element_geometry: degenerate or inverted triangle " +
                                       std::to_string(tri));
  g.area = 0.5 * det;
  const Mat2 jinv_t = g.jac.inverse().transpose();
  g.grad[0] = jinv_t * Vec2(-1.0, -1.0);
  g.grad[1] = jinv_t * Vec2(1.0, 0.0);
  g.grad[2] = jinv_t * Vec2(0.0, 1.0);
  return g;
}

inline std::array<double, 3> shape_values(const Vec2& ref) {
  return {1.0 - ref.x() - ref.y(), ref.x(), ref.y()};
}

// Node-major DOF numbering for one field; a node is Dirichlet when any of
// its incident boundary facets is Dirichlet, so Dirichlet boundary parts are
// closed sets.
struct DofMap {
  Field field = Field::displacement;
  int components = 1;
  int n_nodes = 0;
  std::vector<char> node_dirichlet;
  std::vector<int> dirichlet_dofs;  // sorted

  int dof(int node, int comp = 0) const { return node * components + comp; }
  int size() const { return n_nodes * components; }

  static DofMap build(const Mesh& mesh, const BoundaryPartition& partition, Field field) {
    DofMap dm;
    dm.field = field;
    dm.components = field == Field::potential ? 1 : 2;
    dm.n_nodes = mesh.n_vertices();
    dm.node_dirichlet.assign(dm.n_nodes, 0);
    const auto& tags = partition.of(field);
    if (static_cast<int>(tags.size()) != mesh.n_boundary_facets())
      throw config_error("DofMap: partition does not match mesh facet count");
    for (int f = 0; f < mesh.n_boundary_facets(); ++f) {
      if (tags[f] == BcType::dirichlet) {
        dm.node_dirichlet[mesh.boundary_facets[f].v0] = 1;
        dm.node_dirichlet[mesh.boundary_facets[f].v1] = 1;
      }
    }
    for (int n = 0; n < dm.n_nodes; ++n)
      if (dm.node_dirichlet[n])
        for (int c = 0; c < dm.components; ++c) dm.dirichlet_dofs.push_back(dm.dof(n, c));
    return dm;
  }
};

// One element contribution: values(r, c) scatters to (rows[r], cols[c]).
struct LocalBlock {
  std::vector<int> rows, cols;
  MatX values;
};

using ElementKernel = std::function<LocalBlock(int tri)>;

// Scatter-add of per-element blocks in fixed element order; the resulting
// sparse structure and values are bit-reproducible.
inline SparseMat assemble_bilinear(const Mesh& mesh, int n_rows, int n_cols,
                                   const ElementKernel& kernel) {
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(mesh.n_triangles()) * 36);
  for (int tri = 0; tri < mesh.n_triangles(); ++tri) {
    const LocalBlock block = kernel(tri);
    if (block.values.rows() != static_cast<Eigen::Index>(block.rows.size()) ||
        block.values.cols() != static_cast<Eigen::Index>(block.cols.size()))
      throw assembly_error("assemble_bilinear: kernel block shape mismatch on triangle " +
                           std::to_string(tri));
    for (std::size_t r = 0; r < block.rows.size(); ++r) {
      if (block.rows[r] < 0 || block.rows[r] >= n_rows)
        throw assembly_error("assemble_bilinear: row index out of range on triangle " +
                             std::to_string(tri));
      for (std::size_t c = 0; c < block.cols.size(); ++c) {
        if (block.cols[c] < 0 || block.cols[c] >= n_cols)
          throw assembly_error("assemble_bilinear: column index out of range on triangle " +
                               std::to_string(tri));
        trips.emplace_back(block.rows[r], block.cols[c], block.values(r, c));
      }
    }
  }
  SparseMat a(n_rows, n_cols);
  a.setFromTriplets(trips.begin(), trips.end());
  a.makeCompressed();
  return a;
}

// P1 scalar mass and stiffness kernels, shared by the polarization step and
// several oracles.
inline SparseMat scalar_mass_matrix(const Mesh& mesh) {
  const QuadratureRule q = quadrature_rule(2);
  return assemble_bilinear(mesh, mesh.n_vertices(), mesh.n_vertices(), [&](int tri) {
    const ElementGeometry g = element_geometry(mesh, tri);
    LocalBlock b;
    b.rows.assign(g.nodes.begin(), g.nodes.end());
    b.cols = b.rows;
    b.values = MatX::Zero(3, 3);
    for (int k = 0; k < 3; ++k) {
      const auto n = shape_values(q.points[k]);
      const double w = q.weights[k] * 2.0 * g.area;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) b.values(i, j) += w * n[i] * n[j];
    }
    return b;
  });
}

inline SparseMat scalar_stiffness_matrix(const Mesh& mesh) {
  return assemble_bilinear(mesh, mesh.n_vertices(), mesh.n_vertices(), [&](int tri) {
    const ElementGeometry g = element_geometry(mesh, tri);
    LocalBlock b;
    b.rows.assign(g.nodes.begin(), g.nodes.end());
    b.cols = b.rows;
    b.values = MatX::Zero(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) b.values(i, j) = g.area * g.grad[i].dot(g.grad[j]);
    return b;
  });
}

struct SolveReport {
  double residual_norm = 0.0;
  double rhs_norm = 0.0;
  double rel_residual = 0.0;
  int n = 0;
};

// Linear system with Dirichlet constraints applied: constrained rows are
// identity rows with the prescribed value on the right-hand side, and
// constrained columns are folded into the right-hand side elsewhere.
struct ConstrainedSystem {
  SparseMat matrix;
  VecX rhs;
  std::vector<int> dirichlet_dofs;
  VecX dirichlet_values;
  SolveReport report;
};

inline ConstrainedSystem constrain(const SparseMat& a, const VecX& b,
                                   const std::vector<int>& dirichlet_dofs,
                                   const VecX& dirichlet_values) {
  if (a.rows() != a.cols() || a.rows() != b.size())
    throw constraint_error("constrain: matrix/rhs size mismatch");
  if (static_cast<Eigen::Index>(dirichlet_dofs.size()) != dirichlet_values.size())
    throw constraint_error("constrain: a Dirichlet value is missing (" +
                           std::to_string(dirichlet_dofs.size()) + " dofs, " +
                           std::to_string(dirichlet_values.size()) + " values)");
  if (!dirichlet_values.allFinite())
    throw constraint_error("constrain: non-finite Dirichlet value");

  const int n = static_cast<int>(a.rows());
  std::vector<char> is_dirichlet(n, 0);
  VecX value = VecX::Zero(n);
  for (std::size_t k = 0; k < dirichlet_dofs.size(); ++k) {
    const int d = dirichlet_dofs[k];
    if (d < 0 || d >= n) throw constraint_error("constrain: Dirichlet dof out of range");
    is_dirichlet[d] = 1;
    value[d] = dirichlet_values[static_cast<Eigen::Index>(k)];
  }

  ConstrainedSystem sys;
  sys.rhs = b;
  sys.dirichlet_dofs = dirichlet_dofs;
  sys.dirichlet_values = dirichlet_values;

  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(a.nonZeros()) + dirichlet_dofs.size());
  for (int col = 0; col < a.outerSize(); ++col) {
    for (SparseMat::InnerIterator it(a, col); it; ++it) {
      const int i = static_cast<int>(it.row()), j = static_cast<int>(it.col());
      if (is_dirichlet[i]) continue;
      if (is_dirichlet[j]) {
        sys.rhs[i] -= it.value() * value[j];
        continue;
      }
      trips.emplace_back(i, j, it.value());
    }
  }
  for (int d = 0; d < n; ++d)
    if (is_dirichlet[d]) {
      trips.emplace_back(d, d, 1.0);
      sys.rhs[d] = value[d];
    }
  sys.matrix.resize(n, n);
  sys.matrix.setFromTriplets(trips.begin(), trips.end());
  sys.matrix.makeCompressed();
  return sys;
}

// Direct sparse LU; the coupled operator is non-symmetric so nothing here
// may assume symmetry.
inline std::pair<VecX, SolveReport> solve_linear(const ConstrainedSystem& sys) {
  Eigen::SparseLU<SparseMat> lu;
  lu.compute(sys.matrix);
  SolveReport report;
  report.n = static_cast<int>(sys.matrix.rows());
  report.rhs_norm = sys.rhs.norm();
  if (lu.info() != Eigen::Success)
    throw solver_error("solve_linear: sparse LU factorization failed (singular matrix?)");
  VecX x = lu.solve(sys.rhs);
  report.residual_norm = (sys.matrix * x - sys.rhs).norm();
  report.rel_residual = report.residual_norm / (1.0 + report.rhs_norm);
  if (!x.allFinite() || report.residual_norm > 1e-10 * (1.0 + report.rhs_norm))
    throw solver_error("solve_linear: residual " + std::to_string(report.residual_norm) +
                       " exceeds tolerance (rhs norm " + std::to_string(report.rhs_norm) + ")");
  return {std::move(x), report};
}

}  // namespace ferro
