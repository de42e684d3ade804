#pragma once

#include <cstdio>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ferro/elliptic.hpp"
#include "ferro/parabolic.hpp"

namespace ferro {

// ---------------------------------------------------------------------------
// Convergence-order fitting
// ---------------------------------------------------------------------------

struct ConvergenceReport {
  std::string label;
  std::vector<double> resolution;  // h or dt, strictly decreasing
  std::vector<double> errors;
  double fitted_order = 0.0;  // least-squares slope in log-log
  double target_order = 0.0;
  bool monotone = true;
  bool machine_precision = false;  // every level at the round-off floor
  bool floor_saturated = false;    // refinement stopped reducing the error
  bool pass = false;

  std::string to_csv() const {
    std::ostringstream os;
    os << "level,resolution,error\n";
    char buf[64];
    for (std::size_t i = 0; i < resolution.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i, resolution[i], errors[i]);
      os << buf;
    }
    return os.str();
  }

  std::string to_text() const {
    std::ostringstream os;
    os << label << ": fitted order " << fitted_order << " (target " << target_order << ") -> "
       << (pass ? "pass" : "FAIL");
    if (machine_precision) os << " [machine precision]";
    if (floor_saturated) os << " [floor saturated]";
    if (!monotone) os << " [non-monotone errors]";
    os << "\n";
    for (std::size_t i = 0; i < resolution.size(); ++i)
      os << "  res " << resolution[i] << "  err " << errors[i] << "\n";
    return os.str();
  }
};

inline ConvergenceReport fit_order(std::string label, std::vector<double> resolution,
                                   std::vector<double> errors, double target_order) {
  if (resolution.size() != errors.size() || resolution.size() < 3)
    throw config_error("fit_order: need at least 3 matching levels");
  for (std::size_t i = 1; i < resolution.size(); ++i)
    if (!(resolution[i] < resolution[i - 1]))
      throw config_error("fit_order: resolutions must be strictly decreasing");

  ConvergenceReport rep;
  rep.label = std::move(label);
  rep.resolution = std::move(resolution);
  rep.errors = std::move(errors);
  rep.target_order = target_order;

  rep.machine_precision = true;
  for (double e : rep.errors) rep.machine_precision = rep.machine_precision && e <= 1e-12;

  for (std::size_t i = 1; i < rep.errors.size(); ++i) {
    if (rep.errors[i] >= rep.errors[i - 1] && !rep.machine_precision) rep.monotone = false;
    if (rep.errors[i] > 0.0 && rep.errors[i - 1] / rep.errors[i] < 1.2) rep.floor_saturated = true;
  }

  // Least-squares slope over all levels, robust to a single pre-asymptotic one.
  const std::size_t n = rep.errors.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::log(rep.resolution[i]);
    const double y = std::log(std::max(rep.errors[i], 1e-300));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  rep.fitted_order = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  rep.pass = rep.machine_precision || (rep.monotone && rep.fitted_order >= target_order);
  return rep;
}

// ---------------------------------------------------------------------------
// Manufactured solutions, elliptic
// ---------------------------------------------------------------------------

// An exact (u, phi) pair with the analytic derivatives needed to evaluate
// the strong-form residual pointwise. grad_u(i,j) = d u_i / d x_j.
struct ExactEllipticSolution {
  std::function<Vec2(const Vec2&)> u;
  std::function<Mat2(const Vec2&)> grad_u;
  std::function<Mat2(const Vec2&)> hess_u0;  // Hessian of the first component
  std::function<Mat2(const Vec2&)> hess_u1;
  std::function<double(const Vec2&)> phi;
  std::function<Vec2(const Vec2&)> grad_phi;
  std::function<Mat2(const Vec2&)> hess_phi;
};

// Frozen polarization coefficient field; grad(i,j) = d p_i / d x_j.
struct FrozenPolarization {
  std::function<Vec2(const Vec2&)> p;
  std::function<Mat2(const Vec2&)> grad;

  static FrozenPolarization zero() {
    return {[](const Vec2&) { return Vec2::Zero(); }, [](const Vec2&) { return Mat2::Zero(); }};
  }
};

// Body loads that make (u*, phi*) the exact solution: the negative row-wise
// divergences of the stress and of the dielectric displacement, evaluated
// with the chain rule through P(x). Boundary data is taken as Dirichlet from
// the exact fields, so no flux data needs manufacturing.
inline LoadSet manufactured_elliptic_loads(const MaterialModel& model,
                                           const ExactEllipticSolution& exact,
                                           const FrozenPolarization& frozen) {
  LoadSet loads = LoadSet::zero();
  loads.bc_displacement = [exact](double, const Vec2& x) { return exact.u(x); };
  loads.bc_potential = [exact](double, const Vec2& x) { return exact.phi(x); };

  auto strain_derivatives = [exact](const Vec2& x) {
    const Mat2 h0 = exact.hess_u0(x), h1 = exact.hess_u1(x);
    // deps[j](k,l) = d eps_kl / d x_j with eps = sym grad u.
    std::array<Mat2, 2> deps;
    for (int j = 0; j < 2; ++j) {
      Mat2 d;
      d(0, 0) = h0(j, 0);
      d(1, 1) = h1(j, 1);
      d(0, 1) = d(1, 0) = 0.5 * (h0(j, 1) + h1(j, 0));
      deps[j] = d;
    }
    return deps;
  };

  loads.body_force = [=](double, const Vec2& x) {
    const Vec2 p = frozen.p(x);
    const Mat2 gp = frozen.grad(x);
    const MaterialPoint mp = eval_material(model, p);
    const Mat2 eps = 0.5 * (exact.grad_u(x) + exact.grad_u(x).transpose());
    const Vec2 g = exact.grad_phi(x);
    const Mat2 hphi = exact.hess_phi(x);
    const auto deps = strain_derivatives(x);
    const Vec3 v = sym_to_vec(eps - mp.spont_strain);

    Vec2 f = Vec2::Zero();
    for (int j = 0; j < 2; ++j) {
      const Vec2 dp_dxj = gp.col(j);
      const Mat2 dsigma =
          vec_to_sym(mp.d_stiffness_dir(dp_dxj) * v +
                     mp.stiffness * sym_to_vec(deps[j] - mp.d_spont_strain_dir(dp_dxj)) +
                     mp.d_coupling_dir(dp_dxj).transpose() * g +
                     mp.coupling.transpose() * Vec2(hphi.col(j)));
      f -= dsigma.col(j);  // row-wise divergence, symmetric stress
    }
    return f;
  };

  loads.volume_charge = [=](double, const Vec2& x) {
    const Vec2 p = frozen.p(x);
    const Mat2 gp = frozen.grad(x);
    const MaterialPoint mp = eval_material(model, p);
    const Mat2 eps = 0.5 * (exact.grad_u(x) + exact.grad_u(x).transpose());
    const Vec2 g = exact.grad_phi(x);
    const Mat2 hphi = exact.hess_phi(x);
    const auto deps = strain_derivatives(x);
    const Vec3 v = sym_to_vec(eps - mp.spont_strain);

    double f = 0.0;
    for (int j = 0; j < 2; ++j) {
      const Vec2 dp_dxj = gp.col(j);
      const Vec2 dd = mp.d_coupling_dir(dp_dxj) * v +
                      mp.coupling * sym_to_vec(deps[j] - mp.d_spont_strain_dir(dp_dxj)) -
                      mp.d_permittivity_dir(dp_dxj) * g - mp.permittivity * Vec2(hphi.col(j)) +
                      dp_dxj;
      f -= dd(j);
    }
    return f;
  };
  return loads;
}

inline VecX interpolate_polarization(const Mesh& mesh, const FrozenPolarization& frozen) {
  VecX p(2 * mesh.n_vertices());
  for (int n = 0; n < mesh.n_vertices(); ++n) set_node_vec2(p, n, frozen.p(mesh.vertices[n]));
  return p;
}

// L2 errors of the coupled solve against the exact fields, by quadrature of
// the P1 interpolants.
inline double elliptic_l2_error(const Mesh& mesh, const EllipticSolve& sol,
                                const ExactEllipticSolution& exact) {
  const QuadratureRule quad = quadrature_rule(2);
  double err2 = 0.0;
  for (int tri = 0; tri < mesh.n_triangles(); ++tri) {
    const ElementGeometry g = element_geometry(mesh, tri);
    for (int k = 0; k < 3; ++k) {
      const auto shp = shape_values(quad.points[k]);
      const Vec2 x = g.map(quad.points[k]);
      Vec2 uh = Vec2::Zero();
      double phih = 0.0;
      for (int i = 0; i < 3; ++i) {
        uh += shp[i] * node_vec2(sol.u, g.nodes[i]);
        phih += shp[i] * sol.phi[g.nodes[i]];
      }
      const double w = quad.weights[k] * 2.0 * g.area;
      err2 += w * ((uh - exact.u(x)).squaredNorm() + std::pow(phih - exact.phi(x), 2));
    }
  }
  return std::sqrt(err2);
}

inline ConvergenceReport mms_elliptic(const std::vector<int>& levels, const MaterialModel& model,
                                      const ExactEllipticSolution& exact,
                                      const FrozenPolarization& frozen, double target_order = 1.8) {
  std::vector<double> hs, errs;
  for (int n : levels) {
    const Mesh mesh = build_structured_mesh(n, n);
    const BoundaryPartition part =
        tag_all(mesh, BcType::dirichlet, BcType::dirichlet, BcType::neumann);
    const LoadSet loads = manufactured_elliptic_loads(model, exact, frozen);
    const VecX p = interpolate_polarization(mesh, frozen);
    const EllipticSolve sol = solve_elliptic(mesh, part, model, p, loads, 0.0);
    hs.push_back(1.0 / n);
    errs.push_back(elliptic_l2_error(mesh, sol, exact));
  }
  return fit_order("elliptic mms", std::move(hs), std::move(errs), target_order);
}

// ---------------------------------------------------------------------------
// Manufactured solutions, parabolic
// ---------------------------------------------------------------------------

struct ExactPolarization {
  std::function<Vec2(double, const Vec2&)> p;
  std::function<Vec2(double, const Vec2&)> dp_dt;
  std::function<Vec2(double, const Vec2&)> laplacian;
};

inline VecX assemble_manufactured_source(const Mesh& mesh, const ExactPolarization& exact,
                                         double t) {
  const QuadratureRule quad = quadrature_rule(2);
  VecX rhs = VecX::Zero(2 * mesh.n_vertices());
  for (int tri = 0; tri < mesh.n_triangles(); ++tri) {
    const ElementGeometry g = element_geometry(mesh, tri);
    for (int k = 0; k < 3; ++k) {
      const auto shp = shape_values(quad.points[k]);
      const Vec2 x = g.map(quad.points[k]);
      const Vec2 s = exact.dp_dt(t, x) - exact.laplacian(t, x);
      const double w = quad.weights[k] * 2.0 * g.area;
      for (int i = 0; i < 3; ++i) {
        rhs[2 * g.nodes[i]] += w * shp[i] * s.x();
        rhs[2 * g.nodes[i] + 1] += w * shp[i] * s.y();
      }
    }
  }
  return rhs;
}

inline double polarization_l2_error(const Mesh& mesh, const VecX& p_field,
                                    const ExactPolarization& exact, double t) {
  const QuadratureRule quad = quadrature_rule(2);
  double err2 = 0.0;
  for (int tri = 0; tri < mesh.n_triangles(); ++tri) {
    const ElementGeometry g = element_geometry(mesh, tri);
    for (int k = 0; k < 3; ++k) {
      const auto shp = shape_values(quad.points[k]);
      Vec2 ph = Vec2::Zero();
      for (int i = 0; i < 3; ++i) ph += shp[i] * node_vec2(p_field, g.nodes[i]);
      const double w = quad.weights[k] * 2.0 * g.area;
      err2 += w * (ph - exact.p(t, g.map(quad.points[k]))).squaredNorm();
    }
  }
  return std::sqrt(err2);
}

// Implicit Euler with the manufactured source evaluated at the new time
// level, on a fixed mesh; the error is measured against the exact solution
// at the final time, so the spatial floor shows up as saturation when dt is
// pushed below it.
inline ConvergenceReport mms_parabolic(int mesh_n, const std::vector<double>& dts, double t_end,
                                       const ExactPolarization& exact, double target_order = 0.9) {
  const Mesh mesh = build_structured_mesh(mesh_n, mesh_n);
  const BoundaryPartition part =
      tag_all(mesh, BcType::dirichlet, BcType::dirichlet, BcType::dirichlet);
  const PolarizationOperators ops = PolarizationOperators::build(mesh, part);

  std::vector<double> errs;
  for (double dt : dts) {
    ImexStepper stepper(ops);
    VecX p(2 * mesh.n_vertices());
    for (int n = 0; n < mesh.n_vertices(); ++n) set_node_vec2(p, n, exact.p(0.0, mesh.vertices[n]));
    double t = 0.0;
    while (t < t_end - 0.5 * dt) {
      p = stepper.step(p, dt, assemble_manufactured_source(mesh, exact, t + dt));
      t += dt;
    }
    errs.push_back(polarization_l2_error(mesh, p, exact, t));
  }
  return fit_order("parabolic mms", std::vector<double>(dts), std::move(errs), target_order);
}

// ---------------------------------------------------------------------------
// Gradient check of the enthalpy source assembly
// ---------------------------------------------------------------------------

inline double gradient_check_enthalpy(const MaterialModel& model, int n_samples = 8,
                                      unsigned seed = 2025, double h = 1e-5) {
  const Mesh mesh = build_structured_mesh(3, 3);
  const int n = mesh.n_vertices();
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  auto rand_vec = [&](Eigen::Index m) {
    VecX v(m);
    for (Eigen::Index i = 0; i < m; ++i) v[i] = unif(rng);
    return v;
  };
  // Smooth (u, phi) with O(1) gradients keep the total energy small enough
  // that central differences at this h are not cancellation-limited; the
  // strain is made dominant so a corrupted stiffness derivative is not
  // drowned out by the electric terms.
  auto smooth_field = [&](int components, double amplitude) {
    VecX field(components * n);
    std::array<double, 10> c;
    for (double& ck : c) ck = amplitude * unif(rng);
    for (int v = 0; v < n; ++v) {
      const double x = mesh.vertices[v].x(), y = mesh.vertices[v].y();
      const double f0 = c[0] * x + c[1] * y + c[2] * x * y + c[3] * x * x + c[4] * y * y;
      const double f1 = c[5] * x + c[6] * y + c[7] * x * y + c[8] * x * x + c[9] * y * y;
      if (components == 2) {
        field[2 * v] = f0;
        field[2 * v + 1] = f1;
      } else {
        field[v] = f0;
      }
    }
    return field;
  };
  const VecX u = smooth_field(2, 1.6);
  const VecX phi = smooth_field(1, 0.2);
  VecX p = smooth_field(2, 0.3);
  for (int v = 0; v < n; ++v) p.segment<2>(2 * v) += Vec2(0.9, -0.6);  // biased away from 0
  const VecX dph = assemble_enthalpy_gradient(mesh, model, u, phi, p);

  // Constant directions first: they do not cancel spatially and expose a
  // uniformly scaled derivative map at full strength.
  std::vector<VecX> directions;
  for (int c = 0; c < 2; ++c) {
    VecX dir = VecX::Zero(2 * n);
    for (int v = 0; v < n; ++v) dir[2 * v + c] = 1.0;
    directions.push_back(std::move(dir));
  }
  for (int s = 0; s < n_samples; ++s) directions.push_back(rand_vec(2 * n));

  double worst = 0.0;
  for (const VecX& dir : directions) {
    const double plus = compute_energy(mesh, model, u, phi, VecX(p + h * dir)).bulk;
    const double minus = compute_energy(mesh, model, u, phi, VecX(p - h * dir)).bulk;
    const double fd = (plus - minus) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - dph.dot(dir)) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Empirical Lipschitz probe of the reduced source P -> S(t, P)
// ---------------------------------------------------------------------------

struct LipschitzProbe {
  double h_m = 0.0;  // max dual-norm ratio over sampled pairs
  int pairs_used = 0;
  int pairs_skipped = 0;
};

// Max of ||S(t,P1) - S(t,P2)||_dual / ||P1 - P2||_inf over sampled pairs
// with ||P_i||_inf <= radius; the elliptic problem is re-solved for each
// sample. Every unit pair is probed on a dyadic ladder of sub-radii, because
// a multi-well separation density is flattest near its wells and a
// single-scale sample can miss the small-|P| slopes entirely. The unit
// samples are fixed by the seed, so probes at nested radii see nested
// sample sets and the empirical max is monotone in the radius. The dual
// norm is the lumped-mass-inverse norm on the polarization space.
inline LipschitzProbe lipschitz_probe_source(const Mesh& mesh, const BoundaryPartition& partition,
                                             const MaterialModel& model, const LoadSet& loads,
                                             double t, double radius, int n_pairs,
                                             unsigned seed = 99) {
  if (!(radius > 0.0)) throw config_error("lipschitz_probe_source: radius must be positive");
  const int n2 = 2 * mesh.n_vertices();
  const SparseMat mass = expand_componentwise(scalar_mass_matrix(mesh));
  VecX lumped = mass * VecX::Ones(n2);
  auto dual_norm = [&](const VecX& v) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) acc += v[i] * v[i] / lumped[i];
    return std::sqrt(acc);
  };

  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  auto unit_sample = [&]() {
    VecX p(n2);
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = unif(rng);
    return p;
  };
  auto source_at = [&](const VecX& p) {
    const EllipticSolve sol = solve_elliptic(mesh, partition, model, p, loads, t);
    return assemble_source(mesh, partition, model, loads, t, sol.u, sol.phi, p);
  };

  // Absolute dyadic ladder up to the radius (plus the radius itself), so the
  // sample set at a larger radius contains the smaller one.
  std::vector<double> scales;
  for (int k = -7; std::pow(2.0, k) <= radius; ++k) scales.push_back(std::pow(2.0, k));
  if (scales.empty() || scales.back() != radius) scales.push_back(radius);

  LipschitzProbe probe;
  for (int k = 0; k < n_pairs; ++k) {
    const VecX u1 = unit_sample(), u2 = unit_sample();
    bool used = false;
    for (double scale : scales) {
      const VecX p1 = scale * u1, p2 = scale * u2;
      const double dist = (p1 - p2).cwiseAbs().maxCoeff();
      if (dist < 1e-12) continue;
      try {
        const VecX s1 = source_at(p1), s2 = source_at(p2);
        probe.h_m = std::max(probe.h_m, dual_norm(s1 - s2) / dist);
        used = true;
      } catch (const std::exception&) {
      }
    }
    used ? ++probe.pairs_used : ++probe.pairs_skipped;
  }
  return probe;
}

// ---------------------------------------------------------------------------
// Dense brute-force assembly oracle
// ---------------------------------------------------------------------------

// Deliberately independent route: P1 basis polynomials come from a
// per-triangle Vandermonde solve instead of reference-element gradients, the
// quadrature locations are hard-coded copies, and all operators are built as
// dense matrices by direct triple loops. Compared entrywise against the
// sparse pipeline. The mutation knob perturbs one oracle quadrature weight
// so tests can verify the comparison actually detects differences.
struct DenseOracleMutation {
  int quad_weight_index = -1;
  double scale = 1.0;
};

struct DenseOracleResult {
  double max_deviation = 0.0;
  std::map<std::string, double> per_operator;
};

namespace oracle {

struct Basis {
  // hat_i(x) = coeff(0,i) + coeff(1,i) x + coeff(2,i) y
  Mat3 coeff;
  double value(int i, const Vec2& x) const {
    return coeff(0, i) + coeff(1, i) * x.x() + coeff(2, i) * x.y();
  }
  Vec2 gradient(int i) const { return Vec2(coeff(1, i), coeff(2, i)); }
};

inline Basis basis_for(const Mesh& mesh, int tri) {
  Mat3 vandermonde;
  for (int r = 0; r < 3; ++r) {
    const Vec2 v = mesh.vertices[mesh.triangles[tri][r]];
    vandermonde(r, 0) = 1.0;
    vandermonde(r, 1) = v.x();
    vandermonde(r, 2) = v.y();
  }
  Basis b;
  b.coeff = vandermonde.inverse();
  return b;
}

struct QuadPoint {
  Vec2 x;
  double w;
};

inline std::array<QuadPoint, 3> quad_points(const Mesh& mesh, int tri,
                                            const DenseOracleMutation& mut) {
  const Vec2 a = mesh.vertices[mesh.triangles[tri][0]];
  const Vec2 b = mesh.vertices[mesh.triangles[tri][1]];
  const Vec2 c = mesh.vertices[mesh.triangles[tri][2]];
  const double area2 = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
  std::array<QuadPoint, 3> pts = {QuadPoint{0.5 * (a + b), area2 / 6.0},
                                  QuadPoint{0.5 * (b + c), area2 / 6.0},
                                  QuadPoint{0.5 * (a + c), area2 / 6.0}};
  if (mut.quad_weight_index >= 0 && mut.quad_weight_index < 3)
    pts[static_cast<std::size_t>(mut.quad_weight_index)].w *= mut.scale;
  return pts;
}

inline Mat2 basis_strain(const Basis& basis, int i, int comp) {
  Vec2 ec = Vec2::Zero();
  ec(comp) = 1.0;
  const Mat2 grad = ec * basis.gradient(i).transpose();
  return 0.5 * (grad + grad.transpose());
}

}  // namespace oracle

inline DenseOracleResult dense_oracle_compare(const Mesh& mesh, const BoundaryPartition& partition,
                                              const MaterialModel& model, const VecX& p_field,
                                              const LoadSet& loads, double t,
                                              const DenseOracleMutation& mut = {}) {
  const int n = mesh.n_vertices();
  const CoupledLayout layout{n};

  MatX dense_l = MatX::Zero(3 * n, 3 * n);
  MatX dense_mass = MatX::Zero(2 * n, 2 * n);
  MatX dense_stiff = MatX::Zero(2 * n, 2 * n);
  VecX dense_l1 = VecX::Zero(3 * n);
  VecX dense_l2 = VecX::Zero(3 * n);
  VecX dense_l3 = VecX::Zero(2 * n);

  for (int tri = 0; tri < mesh.n_triangles(); ++tri) {
    const oracle::Basis basis = oracle::basis_for(mesh, tri);
    const auto& nodes = mesh.triangles[tri];
    for (const auto& qp : oracle::quad_points(mesh, tri, mut)) {
      Vec2 p = Vec2::Zero();
      for (int i = 0; i < 3; ++i) p += basis.value(i, qp.x) * node_vec2(p_field, nodes[i]);
      const MaterialPoint mp = eval_material(model, p);

      for (int i = 0; i < 3; ++i) {
        // l1 and l2 rows
        const Vec3 strain0 = sym_to_vec(mp.spont_strain);
        for (int c = 0; c < 2; ++c) {
          const Vec3 col = sym_to_vec(oracle::basis_strain(basis, i, c));
          dense_l1[layout.u_dof(nodes[i], c)] += qp.w * (mp.stiffness * strain0).dot(col);
          dense_l2[layout.u_dof(nodes[i], c)] +=
              qp.w * basis.value(i, qp.x) * loads.body_force(t, qp.x)(c);
          dense_l3[2 * nodes[i] + c] += qp.w * basis.value(i, qp.x) * loads.polar_force(t, qp.x)(c);
        }
        dense_l1[layout.phi_dof(nodes[i])] -=
            qp.w * (mp.coupling * strain0 - p).dot(basis.gradient(i));
        dense_l2[layout.phi_dof(nodes[i])] -=
            qp.w * basis.value(i, qp.x) * loads.volume_charge(t, qp.x);

        for (int j = 0; j < 3; ++j) {
          // scalar mass/stiffness expanded componentwise
          const double mij = qp.w * basis.value(i, qp.x) * basis.value(j, qp.x);
          const double kij = qp.w * basis.gradient(i).dot(basis.gradient(j));
          for (int c = 0; c < 2; ++c) {
            dense_mass(2 * nodes[i] + c, 2 * nodes[j] + c) += mij;
            dense_stiff(2 * nodes[i] + c, 2 * nodes[j] + c) += kij;
          }
          // coupled operator blocks: rows test with i, columns trial with j
          for (int ci = 0; ci < 2; ++ci) {
            const Vec3 vi = sym_to_vec(oracle::basis_strain(basis, i, ci));
            for (int cj = 0; cj < 2; ++cj) {
              const Vec3 vj = sym_to_vec(oracle::basis_strain(basis, j, cj));
              dense_l(layout.u_dof(nodes[i], ci), layout.u_dof(nodes[j], cj)) +=
                  qp.w * (mp.stiffness * vj).dot(vi);
            }
            dense_l(layout.u_dof(nodes[i], ci), layout.phi_dof(nodes[j])) +=
                qp.w * (mp.coupling.transpose() * basis.gradient(j)).dot(vi);
          }
          for (int cj = 0; cj < 2; ++cj) {
            const Vec3 vj = sym_to_vec(oracle::basis_strain(basis, j, cj));
            dense_l(layout.phi_dof(nodes[i]), layout.u_dof(nodes[j], cj)) -=
                qp.w * (mp.coupling * vj).dot(basis.gradient(i));
          }
          dense_l(layout.phi_dof(nodes[i]), layout.phi_dof(nodes[j])) +=
              qp.w * (mp.permittivity * basis.gradient(j)).dot(basis.gradient(i));
        }
      }
    }
  }

  // Boundary contributions of l2 and l3 with an independent two-point rule.
  const double gauss_off = 0.5 / std::numbers::sqrt3;
  const auto& u_tags = partition.of(Field::displacement);
  const auto& phi_tags = partition.of(Field::potential);
  const auto& p_tags = partition.of(Field::polarization);
  for (int f = 0; f < mesh.n_boundary_facets(); ++f) {
    const auto& facet = mesh.boundary_facets[f];
    const Vec2 a = mesh.vertices[facet.v0], b = mesh.vertices[facet.v1];
    const double len = (b - a).norm();
    for (double s : {0.5 - gauss_off, 0.5 + gauss_off}) {
      const Vec2 x = a + s * (b - a);
      const double w = 0.5 * len;
      if (u_tags[f] == BcType::neumann) {
        const Vec2 trac = loads.traction(t, x);
        for (int c = 0; c < 2; ++c) {
          dense_l2[layout.u_dof(facet.v0, c)] += w * (1.0 - s) * trac(c);
          dense_l2[layout.u_dof(facet.v1, c)] += w * s * trac(c);
        }
      }
      if (phi_tags[f] == BcType::neumann) {
        dense_l2[layout.phi_dof(facet.v0)] -= w * (1.0 - s) * loads.surface_charge(t, x);
        dense_l2[layout.phi_dof(facet.v1)] -= w * s * loads.surface_charge(t, x);
      }
      if (p_tags[f] == BcType::neumann) {
        const Vec2 flux = loads.polar_flux(t, x);
        for (int c = 0; c < 2; ++c) {
          dense_l3[2 * facet.v0 + c] += w * (1.0 - s) * flux(c);
          dense_l3[2 * facet.v1 + c] += w * s * flux(c);
        }
      }
    }
  }

  DenseOracleResult result;
  auto record = [&](const std::string& name, double dev) {
    result.per_operator[name] = dev;
    result.max_deviation = std::max(result.max_deviation, dev);
  };
  record("coupled_operator",
         (MatX(assemble_piezo_matrix(mesh, model, p_field)) - dense_l).cwiseAbs().maxCoeff());
  record("mass", (MatX(expand_componentwise(scalar_mass_matrix(mesh))) - dense_mass)
                     .cwiseAbs()
                     .maxCoeff());
  record("stiffness", (MatX(expand_componentwise(scalar_stiffness_matrix(mesh))) - dense_stiff)
                          .cwiseAbs()
                          .maxCoeff());
  record("l1",
         (assemble_polarization_load(mesh, model, p_field) - dense_l1).cwiseAbs().maxCoeff());
  record("l2", (assemble_external_load(mesh, partition, loads, t) - dense_l2).cwiseAbs().maxCoeff());
  record("l3", (assemble_polar_load(mesh, partition, loads, t) - dense_l3).cwiseAbs().maxCoeff());
  return result;
}

}  // namespace ferro
