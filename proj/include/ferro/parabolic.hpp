#pragma once

#include <optional>

#include "ferro/elliptic.hpp"
#include "ferro/fem.hpp"
#include "ferro/materials.hpp"

namespace ferro {

// Electric enthalpy density
//   H(eps, g, P) = 1/2 B(P)(eps - eps0, -g) : (eps - eps0, g) + g . P
//                = 1/2 C(eps-eps0):(eps-eps0) - e(eps-eps0).g - 1/2 epsd g.g + g.P,
// convex in strain and saddle in the potential gradient.
inline double enthalpy_density(const MaterialPoint& mp, const Mat2& strain, const Vec2& grad_phi,
                               const Vec2& p) {
  const Vec3 v = sym_to_vec(strain - mp.spont_strain);
  return 0.5 * v.dot(mp.stiffness * v) - (mp.coupling * v).dot(grad_phi) -
         0.5 * grad_phi.dot(mp.permittivity * grad_phi) + grad_phi.dot(p);
}

// Pointwise polarization gradient of H, split into the material-derivative
// part, the spontaneous-strain part and the direct grad-phi part. Everything
// is linear in the direction, so the two unit components suffice.
inline Vec2 enthalpy_gradient_density(const MaterialPoint& mp, const Mat2& strain,
                                      const Vec2& grad_phi) {
  const Vec3 v = sym_to_vec(strain - mp.spont_strain);
  const Vec2& g = grad_phi;
  Vec2 h;
  for (int c = 0; c < 2; ++c) {
    const Mat3 dc = mp.d_stiffness[c];
    const Mat23 de = mp.d_coupling[c];
    const Mat2 dd = mp.d_permittivity[c];
    const Vec3 w = sym_to_vec(mp.d_spont_strain[c]);
    const double s1 = 0.5 * v.dot(dc * v) - (de * v).dot(g) - 0.5 * g.dot(dd * g);
    const double s2 = -(mp.stiffness * w).dot(v) + (mp.coupling * w).dot(g);
    h[c] = s1 + s2 + g[c];
  }
  return h;
}

namespace detail {

inline Mat2 element_strain(const ElementGeometry& g, const VecX& u) {
  Mat2 grad_u = Mat2::Zero();
  for (int i = 0; i < 3; ++i) grad_u += node_vec2(u, g.nodes[i]) * g.grad[i].transpose();
  return 0.5 * (grad_u + grad_u.transpose());
}

inline Vec2 element_grad_phi(const ElementGeometry& g, const VecX& phi) {
  Vec2 gp = Vec2::Zero();
  for (int i = 0; i < 3; ++i) gp += phi[g.nodes[i]] * g.grad[i];
  return gp;
}

}  // namespace detail

// Weak polarization gradient of the total enthalpy with (u, phi) frozen:
// the exact gradient of the quadrature-discretized int H dx with respect to
// the nodal polarization.
inline VecX assemble_enthalpy_gradient(const Mesh& mesh, const MaterialModel& model, const VecX& u,
                                       const VecX& phi, const VecX& p_field) {
  const QuadratureRule quad = quadrature_rule(2);
  VecX rhs = VecX::Zero(2 * mesh.n_vertices());
  for (int tri = 0; tri < mesh.n_triangles(); ++tri) {
    const ElementGeometry g = element_geometry(mesh, tri);
    const Mat2 strain = detail::element_strain(g, u);
    const Vec2 grad_phi = detail::element_grad_phi(g, phi);
    for (int k = 0; k < 3; ++k) {
      const auto shp = shape_values(quad.points[k]);
      const MaterialPoint mp = eval_material(model, detail::interpolate_p(p_field, g, shp));
      const Vec2 h = enthalpy_gradient_density(mp, strain, grad_phi);
      const double w = quad.weights[k] * 2.0 * g.area;
      for (int i = 0; i < 3; ++i) {
        rhs[2 * g.nodes[i]] += w * shp[i] * h.x();
        rhs[2 * g.nodes[i] + 1] += w * shp[i] * h.y();
      }
    }
  }
  return rhs;
}

// Polarization forcing, l3(t)[q] = int f_P . q dx + int_{Neumann P} t_P . q dS.
inline VecX assemble_polar_load(const Mesh& mesh, const BoundaryPartition& partition,
                                const LoadSet& loads, double t) {
  const QuadratureRule quad = quadrature_rule(2);
  VecX rhs = VecX::Zero(2 * mesh.n_vertices());
  for (int tri = 0; tri < mesh.n_triangles(); ++tri) {
    const ElementGeometry g = element_geometry(mesh, tri);
    for (int k = 0; k < 3; ++k) {
      const auto shp = shape_values(quad.points[k]);
      const Vec2 f = loads.polar_force(t, g.map(quad.points[k]));
      const double w = quad.weights[k] * 2.0 * g.area;
      for (int i = 0; i < 3; ++i) {
        rhs[2 * g.nodes[i]] += w * shp[i] * f.x();
        rhs[2 * g.nodes[i] + 1] += w * shp[i] * f.y();
      }
    }
  }
  const auto seg = segment_rule();
  const auto& tags = partition.of(Field::polarization);
  for (int f = 0; f < mesh.n_boundary_facets(); ++f) {
    if (tags[f] != BcType::neumann) continue;
    const auto& facet = mesh.boundary_facets[f];
    const Vec2 a = mesh.vertices[facet.v0], b = mesh.vertices[facet.v1];
    const double len = (b - a).norm();
    for (const auto& [s, sw] : seg) {
      const Vec2 flux = loads.polar_flux(t, a + s * (b - a));
      const double w = sw * len;
      rhs[2 * facet.v0] += w * (1.0 - s) * flux.x();
      rhs[2 * facet.v0 + 1] += w * (1.0 - s) * flux.y();
      rhs[2 * facet.v1] += w * s * flux.x();
      rhs[2 * facet.v1 + 1] += w * s * flux.y();
    }
  }
  return rhs;
}

// Semilinear source S(t, P) = -D_P H - D_P omega + l3 as a dual vector on
// the polarization space, with (u, phi) the elliptic solution already in
// hand. The separation term is integrated with the same quadrature as the
// energy, which keeps the discrete gradient identity exact.
inline VecX assemble_source(const Mesh& mesh, const BoundaryPartition& partition,
                            const MaterialModel& model, const LoadSet& loads, double t,
                            const VecX& u, const VecX& phi, const VecX& p_field) {
  const QuadratureRule quad = quadrature_rule(2);
  VecX rhs = -assemble_enthalpy_gradient(mesh, model, u, phi, p_field);
  for (int tri = 0; tri < mesh.n_triangles(); ++tri) {
    const ElementGeometry g = element_geometry(mesh, tri);
    for (int k = 0; k < 3; ++k) {
      const auto shp = shape_values(quad.points[k]);
      const Vec2 sg = model.separation_grad(detail::interpolate_p(p_field, g, shp));
      const double w = quad.weights[k] * 2.0 * g.area;
      for (int i = 0; i < 3; ++i) {
        rhs[2 * g.nodes[i]] -= w * shp[i] * sg.x();
        rhs[2 * g.nodes[i] + 1] -= w * shp[i] * sg.y();
      }
    }
  }
  rhs += assemble_polar_load(mesh, partition, loads, t);
  return rhs;
}

struct EnergyBreakdown {
  double bulk = 0.0;        // int H dx
  double separation = 0.0;  // int omega dx
  double exchange = 0.0;    // 1/2 int |grad P|^2 dx
  double total = 0.0;
  // 1/2 int P . grad phi dx; for the reduced gradient-flow configuration
  // exchange + separation + this is the decaying functional (H itself is a
  // saddle in phi and is not).
  double electrostatic_reduced = 0.0;
};

inline EnergyBreakdown compute_energy(const Mesh& mesh, const MaterialModel& model, const VecX& u,
                                      const VecX& phi, const VecX& p_field) {
  const QuadratureRule quad = quadrature_rule(2);
  EnergyBreakdown e;
  for (int tri = 0; tri < mesh.n_triangles(); ++tri) {
    const ElementGeometry g = element_geometry(mesh, tri);
    const Mat2 strain = detail::element_strain(g, u);
    const Vec2 grad_phi = detail::element_grad_phi(g, phi);
    Mat2 grad_p = Mat2::Zero();
    for (int i = 0; i < 3; ++i) grad_p += node_vec2(p_field, g.nodes[i]) * g.grad[i].transpose();
    e.exchange += 0.5 * g.area * grad_p.squaredNorm();
    for (int k = 0; k < 3; ++k) {
      const auto shp = shape_values(quad.points[k]);
      const Vec2 p = detail::interpolate_p(p_field, g, shp);
      const MaterialPoint mp = eval_material(model, p);
      const double w = quad.weights[k] * 2.0 * g.area;
      e.bulk += w * enthalpy_density(mp, strain, grad_phi, p);
      e.separation += w * mp.separation;
      e.electrostatic_reduced += 0.5 * w * p.dot(grad_phi);
    }
  }
  e.total = e.bulk + e.separation + e.exchange;
  return e;
}

// Componentwise expansion of a scalar P1 matrix to a nodal 2-vector space.
inline SparseMat expand_componentwise(const SparseMat& scalar) {
  std::vector<Triplet> trips;
  trips.reserve(2 * static_cast<std::size_t>(scalar.nonZeros()));
  for (int col = 0; col < scalar.outerSize(); ++col)
    for (SparseMat::InnerIterator it(scalar, col); it; ++it)
      for (int c = 0; c < 2; ++c)
        trips.emplace_back(2 * static_cast<int>(it.row()) + c,
                           2 * static_cast<int>(it.col()) + c, it.value());
  SparseMat out(2 * scalar.rows(), 2 * scalar.cols());
  out.setFromTriplets(trips.begin(), trips.end());
  out.makeCompressed();
  return out;
}

// Mass and vector-Laplacian stiffness on the polarization space plus the
// Dirichlet dof set (P = 0 on the Dirichlet part, natural flux elsewhere).
struct PolarizationOperators {
  SparseMat mass;       // 2N x 2N, componentwise
  SparseMat stiffness;  // 2N x 2N, componentwise
  DofMap map;

  static PolarizationOperators build(const Mesh& mesh, const BoundaryPartition& partition) {
    PolarizationOperators ops;
    ops.mass = expand_componentwise(scalar_mass_matrix(mesh));
    ops.stiffness = expand_componentwise(scalar_stiffness_matrix(mesh));
    ops.map = DofMap::build(mesh, partition, Field::polarization);
    return ops;
  }
};

// One implicit-Euler diffusion step with an explicit (or Picard-lagged)
// source:  (M + dt K) P_new = M P_old + dt source,  P_new = 0 on Dirichlet
// nodes. The factorization is reused while dt stays unchanged.
class ImexStepper {
 public:
  explicit ImexStepper(const PolarizationOperators& ops) : ops_(&ops) {}

  VecX step(const VecX& p_old, double dt, const VecX& source) {
    if (!(dt > 0.0)) throw config_error("step_imex: dt must be positive");
    prepare(dt);
    VecX rhs = ops_->mass * p_old + dt * source;
    for (int d : ops_->map.dirichlet_dofs) rhs[d] = 0.0;
    VecX p_new = lu_.solve(rhs);
    const double resid = (matrix_ * p_new - rhs).norm();
    if (!p_new.allFinite() || resid > 1e-10 * (1.0 + rhs.norm()))
      throw solver_error("step_imex: diffusion solve failed (residual " + std::to_string(resid) +
                         ")");
    return p_new;
  }

 private:
  void prepare(double dt) {
    if (dt == dt_) return;
    SparseMat a = ops_->mass + dt * ops_->stiffness;
    const VecX zeros = VecX::Zero(static_cast<Eigen::Index>(ops_->map.dirichlet_dofs.size()));
    matrix_ = constrain(a, VecX::Zero(a.rows()), ops_->map.dirichlet_dofs, zeros).matrix;
    lu_.compute(matrix_);
    if (lu_.info() != Eigen::Success)
      throw solver_error("step_imex: factorization of M + dt K failed");
    dt_ = dt;
  }

  const PolarizationOperators* ops_;
  double dt_ = -1.0;
  SparseMat matrix_;
  Eigen::SparseLU<SparseMat> lu_;
};

inline VecX step_imex(const Mesh& mesh, const BoundaryPartition& partition, const VecX& p_old,
                      double dt, const VecX& source) {
  const PolarizationOperators ops = PolarizationOperators::build(mesh, partition);
  ImexStepper stepper(ops);
  return stepper.step(p_old, dt, source);
}

}  // namespace ferro
