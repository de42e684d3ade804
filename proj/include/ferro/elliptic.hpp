#pragma once

#include <functional>
#include <random>
#include <utility>

#include "ferro/fem.hpp"
#include "ferro/materials.hpp"
#include "ferro/mesh.hpp"

namespace ferro {

// Time-dependent body loads, boundary flux densities and Dirichlet data.
// All maps must stay finite on the closed domain for the requested times.
struct LoadSet {
  using ScalarMap = std::function<double(double, const Vec2&)>;
  using VectorMap = std::function<Vec2(double, const Vec2&)>;

  VectorMap body_force;      // volume load in the momentum balance
  ScalarMap volume_charge;   // free charge density in the Gauss law
  VectorMap polar_force;     // volume load driving the polarization
  VectorMap traction;        // on the Neumann part for u
  ScalarMap surface_charge;  // on the Neumann part for phi
  VectorMap polar_flux;      // on the Neumann part for P
  VectorMap bc_displacement; // Dirichlet data for u (zero in the physical model)
  ScalarMap bc_potential;    // Dirichlet data for phi

  static LoadSet zero() {
    LoadSet l;
    l.body_force = [](double, const Vec2&) { return Vec2::Zero(); };
    l.volume_charge = [](double, const Vec2&) { return 0.0; };
    l.polar_force = [](double, const Vec2&) { return Vec2::Zero(); };
    l.traction = [](double, const Vec2&) { return Vec2::Zero(); };
    l.surface_charge = [](double, const Vec2&) { return 0.0; };
    l.polar_flux = [](double, const Vec2&) { return Vec2::Zero(); };
    l.bc_displacement = [](double, const Vec2&) { return Vec2::Zero(); };
    l.bc_potential = [](double, const Vec2&) { return 0.0; };
    return l;
  }
};

// Nodal 2-vector fields are stored node-major: (x0,y0,x1,y1,...).
inline Vec2 node_vec2(const VecX& field, int node) {
  return Vec2(field[2 * node], field[2 * node + 1]);
}
inline void set_node_vec2(VecX& field, int node, const Vec2& v) {
  field[2 * node] = v.x();
  field[2 * node + 1] = v.y();
}

// Coupled (u, phi) block layout: u dofs first (node-major, 2 per node), then
// one phi dof per node.
struct CoupledLayout {
  int n_nodes = 0;
  int u_dof(int node, int comp) const { return 2 * node + comp; }
  int phi_dof(int node) const { return 2 * n_nodes + node; }
  int size() const { return 3 * n_nodes; }
};

namespace detail {

// Mandel strain row triple of one displacement shape function: columns of
// the 3x6 strain-displacement matrix.
inline Vec3 strain_column(const Vec2& grad, int comp) {
  if (comp == 0) return Vec3(grad.x(), 0.0, grad.y() / std::numbers::sqrt2);
  return Vec3(0.0, grad.y(), grad.x() / std::numbers::sqrt2);
}

inline Vec2 interpolate_p(const VecX& p_field, const ElementGeometry& g,
                          const std::array<double, 3>& shp) {
  Vec2 p = Vec2::Zero();
  for (int i = 0; i < 3; ++i) p += shp[i] * node_vec2(p_field, g.nodes[i]);
  return p;
}

}  // namespace detail

enum class PiezoBlocks { full, diagonal_only };

// Bilinear form of the polarization-parameterized elliptic operator,
//   a((u,phi),(v,q)) = int B(P)(eps(u), grad phi) : (eps(v), grad q) dx,
// with the material evaluated at quadrature points through the P1
// interpolant of the nodal polarization. diagonal_only drops the coupling
// blocks; the quadratic forms of both variants agree identically because the
// coupling blocks are skew.
inline SparseMat assemble_piezo_matrix(const Mesh& mesh, const MaterialModel& model,
                                       const VecX& p_field, PiezoBlocks blocks = PiezoBlocks::full) {
  const CoupledLayout layout{mesh.n_vertices()};
  if (p_field.size() != 2 * mesh.n_vertices())
    throw assembly_error("assemble_piezo_matrix: polarization field has wrong size");
  const QuadratureRule quad = quadrature_rule(2);

  return assemble_bilinear(mesh, layout.size(), layout.size(), [&](int tri) {
    const ElementGeometry g = element_geometry(mesh, tri);
    LocalBlock block;
    block.rows.resize(9);
    for (int i = 0; i < 3; ++i) {
      block.rows[2 * i] = layout.u_dof(g.nodes[i], 0);
      block.rows[2 * i + 1] = layout.u_dof(g.nodes[i], 1);
      block.rows[6 + i] = layout.phi_dof(g.nodes[i]);
    }
    block.cols = block.rows;
    block.values = MatX::Zero(9, 9);

    Eigen::Matrix<double, 3, 6> bm;
    Eigen::Matrix<double, 2, 3> gm;
    for (int i = 0; i < 3; ++i) {
      bm.col(2 * i) = detail::strain_column(g.grad[i], 0);
      bm.col(2 * i + 1) = detail::strain_column(g.grad[i], 1);
      gm.col(i) = g.grad[i];
    }

    for (int k = 0; k < 3; ++k) {
      const auto shp = shape_values(quad.points[k]);
      const MaterialPoint mp = eval_material(model, detail::interpolate_p(p_field, g, shp));
      const double w = quad.weights[k] * 2.0 * g.area;
      block.values.block<6, 6>(0, 0) += w * bm.transpose() * mp.stiffness * bm;
      block.values.block<3, 3>(6, 6) += w * gm.transpose() * mp.permittivity * gm;
      if (blocks == PiezoBlocks::full) {
        block.values.block<6, 3>(0, 6) += w * bm.transpose() * mp.coupling.transpose() * gm;
        block.values.block<3, 6>(6, 0) -= w * gm.transpose() * mp.coupling * bm;
      }
    }
    return block;
  });
}

// Polarization-induced load,
//   l1(P)[v,q] = int C(P) eps0(P) : eps(v) - (e(P) eps0(P) - P) . grad q dx.
inline VecX assemble_polarization_load(const Mesh& mesh, const MaterialModel& model,
                                       const VecX& p_field) {
  const CoupledLayout layout{mesh.n_vertices()};
  const QuadratureRule quad = quadrature_rule(2);
  VecX rhs = VecX::Zero(layout.size());
  for (int tri = 0; tri < mesh.n_triangles(); ++tri) {
    const ElementGeometry g = element_geometry(mesh, tri);
    for (int k = 0; k < 3; ++k) {
      const auto shp = shape_values(quad.points[k]);
      const Vec2 p = detail::interpolate_p(p_field, g, shp);
      const MaterialPoint mp = eval_material(model, p);
      const double w = quad.weights[k] * 2.0 * g.area;
      const Vec3 strain0 = sym_to_vec(mp.spont_strain);
      const Vec3 stress0 = mp.stiffness * strain0;
      const Vec2 induced = mp.coupling * strain0 - p;
      for (int i = 0; i < 3; ++i) {
        for (int c = 0; c < 2; ++c)
          rhs[layout.u_dof(g.nodes[i], c)] += w * stress0.dot(detail::strain_column(g.grad[i], c));
        rhs[layout.phi_dof(g.nodes[i])] -= w * induced.dot(g.grad[i]);
      }
    }
  }
  return rhs;
}

// External load at time t,
//   l2(t)[v,q] = int f_sigma . v - f_D q dx
//              + int_{Neumann u} t_sigma . v dS - int_{Neumann phi} t_D q dS.
inline VecX assemble_external_load(const Mesh& mesh, const BoundaryPartition& partition,
                                   const LoadSet& loads, double t) {
  const CoupledLayout layout{mesh.n_vertices()};
  const QuadratureRule quad = quadrature_rule(2);
  VecX rhs = VecX::Zero(layout.size());
  for (int tri = 0; tri < mesh.n_triangles(); ++tri) {
    const ElementGeometry g = element_geometry(mesh, tri);
    for (int k = 0; k < 3; ++k) {
      const auto shp = shape_values(quad.points[k]);
      const Vec2 x = g.map(quad.points[k]);
      const Vec2 f = loads.body_force(t, x);
      const double charge = loads.volume_charge(t, x);
      const double w = quad.weights[k] * 2.0 * g.area;
      for (int i = 0; i < 3; ++i) {
        rhs[layout.u_dof(g.nodes[i], 0)] += w * shp[i] * f.x();
        rhs[layout.u_dof(g.nodes[i], 1)] += w * shp[i] * f.y();
        rhs[layout.phi_dof(g.nodes[i])] -= w * shp[i] * charge;
      }
    }
  }
  const auto seg = segment_rule();
  const auto& u_tags = partition.of(Field::displacement);
  const auto& phi_tags = partition.of(Field::potential);
  for (int f = 0; f < mesh.n_boundary_facets(); ++f) {
    const auto& facet = mesh.boundary_facets[f];
    const Vec2 a = mesh.vertices[facet.v0], b = mesh.vertices[facet.v1];
    const double len = (b - a).norm();
    for (const auto& [s, sw] : seg) {
      const Vec2 x = a + s * (b - a);
      const double w = sw * len;
      if (u_tags[f] == BcType::neumann) {
        const Vec2 trac = loads.traction(t, x);
        rhs[layout.u_dof(facet.v0, 0)] += w * (1.0 - s) * trac.x();
        rhs[layout.u_dof(facet.v0, 1)] += w * (1.0 - s) * trac.y();
        rhs[layout.u_dof(facet.v1, 0)] += w * s * trac.x();
        rhs[layout.u_dof(facet.v1, 1)] += w * s * trac.y();
      }
      if (phi_tags[f] == BcType::neumann) {
        const double charge = loads.surface_charge(t, x);
        rhs[layout.phi_dof(facet.v0)] -= w * (1.0 - s) * charge;
        rhs[layout.phi_dof(facet.v1)] -= w * s * charge;
      }
    }
  }
  return rhs;
}

struct EllipticOptions {
  bool check_coercivity = true;   // eigenvalue pre-flight at the nodal P values
  bool assume_isomorphism = false;  // allow empty Dirichlet parts for u or phi
};

struct EllipticSolve {
  VecX u;    // 2 per node
  VecX phi;  // 1 per node
  double residual = 0.0;
  SolveReport report;
};

inline ConstrainedSystem assemble_elliptic_system(const Mesh& mesh,
                                                  const BoundaryPartition& partition,
                                                  const MaterialModel& model, const VecX& p_field,
                                                  const LoadSet& loads, double t,
                                                  const EllipticOptions& options = {}) {
  if (!options.assume_isomorphism &&
      (!partition.has_dirichlet(Field::displacement) || !partition.has_dirichlet(Field::potential)))
    throw assumption_error(
        "elliptic solve requires non-empty Dirichlet parts for u and phi (pass "
        "assume_isomorphism to override)");

  if (options.check_coercivity) {
    std::vector<Vec2> samples(mesh.n_vertices());
    for (int n = 0; n < mesh.n_vertices(); ++n) samples[n] = node_vec2(p_field, n);
    const CoercivityReport rep = check_pointwise_coercivity(model, samples);
    if (rep.failed_sample)
      throw assumption_error("pointwise coercivity failed at P=(" +
                             std::to_string(rep.failed_sample->x()) + "," +
                             std::to_string(rep.failed_sample->y()) +
                             "), alpha=" + std::to_string(rep.alpha_min));
  }

  const CoupledLayout layout{mesh.n_vertices()};
  const SparseMat a = assemble_piezo_matrix(mesh, model, p_field);
  const VecX rhs = assemble_polarization_load(mesh, model, p_field) +
                   assemble_external_load(mesh, partition, loads, t);

  const DofMap u_map = DofMap::build(mesh, partition, Field::displacement);
  const DofMap phi_map = DofMap::build(mesh, partition, Field::potential);
  std::vector<int> dofs;
  std::vector<double> values;
  for (int n = 0; n < mesh.n_vertices(); ++n) {
    if (u_map.node_dirichlet[n]) {
      const Vec2 gu = loads.bc_displacement(t, mesh.vertices[n]);
      dofs.push_back(layout.u_dof(n, 0));
      values.push_back(gu.x());
      dofs.push_back(layout.u_dof(n, 1));
      values.push_back(gu.y());
    }
    if (phi_map.node_dirichlet[n]) {
      dofs.push_back(layout.phi_dof(n));
      values.push_back(loads.bc_potential(t, mesh.vertices[n]));
    }
  }
  return constrain(a, rhs, dofs, Eigen::Map<const VecX>(values.data(), values.size()));
}

inline EllipticSolve solve_elliptic(const Mesh& mesh, const BoundaryPartition& partition,
                                    const MaterialModel& model, const VecX& p_field,
                                    const LoadSet& loads, double t,
                                    const EllipticOptions& options = {}) {
  const ConstrainedSystem sys =
      assemble_elliptic_system(mesh, partition, model, p_field, loads, t, options);
  auto [x, report] = solve_linear(sys);
  EllipticSolve out;
  const int n = mesh.n_vertices();
  out.u = x.head(2 * n);
  out.phi = x.tail(n);
  out.residual = report.residual_norm;
  out.report = report;
  return out;
}

// Smallest singular value of the constrained operator by inverse power
// iteration on A^T A; the returned value is its reciprocal, a computable
// stand-in for the inverse operator norm at this discretization.
inline double estimate_inverse_norm_of(const ConstrainedSystem& sys, double tol = 1e-6,
                                       int max_iters = 10000) {
  Eigen::SparseLU<SparseMat> lu, lu_t;
  lu.compute(sys.matrix);
  if (lu.info() != Eigen::Success)
    throw estimation_error("estimate_inverse_norm: factorization of A failed");
  SparseMat at = SparseMat(sys.matrix.transpose());
  lu_t.compute(at);
  if (lu_t.info() != Eigen::Success)
    throw estimation_error("estimate_inverse_norm: factorization of A^T failed");

  std::mt19937 rng(2024);
  std::normal_distribution<double> gauss(0.0, 1.0);
  VecX x(sys.matrix.rows());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = gauss(rng);
  x.normalize();

  double sigma_prev = -1.0;
  for (int it = 1; it <= max_iters; ++it) {
    const VecX y = lu.solve(lu_t.solve(x));  // (A^T A)^{-1} x
    const double mu = y.norm();              // -> 1 / sigma_min^2
    if (!(mu > 0.0) || !std::isfinite(mu))
      throw estimation_error("estimate_inverse_norm: iteration collapsed");
    const double sigma = 1.0 / std::sqrt(mu);
    x = y / mu;
    if (it > 1 && std::abs(sigma - sigma_prev) <= tol * sigma) return 1.0 / sigma;
    sigma_prev = sigma;
  }
  throw estimation_error("estimate_inverse_norm: no convergence after " +
                         std::to_string(max_iters) + " iterations");
}

inline double estimate_inverse_norm(const Mesh& mesh, const BoundaryPartition& partition,
                                    const MaterialModel& model, const VecX& p_field,
                                    double tol = 1e-6) {
  const ConstrainedSystem sys = assemble_elliptic_system(mesh, partition, model, p_field,
                                                         LoadSet::zero(), 0.0);
  return estimate_inverse_norm_of(sys, tol);
}

}  // namespace ferro
