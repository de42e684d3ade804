#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "ferro/parabolic.hpp"

using namespace ferro;

namespace {

VecX random_vec(Eigen::Index n, double amplitude, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  VecX v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

VecX constant_p(const Mesh& mesh, const Vec2& value) {
  VecX p(2 * mesh.n_vertices());
  for (int i = 0; i < mesh.n_vertices(); ++i) set_node_vec2(p, i, value);
  return p;
}

}  // namespace

TEST_CASE("enthalpy density hand values") {
  SECTION("all-zero inputs") {
    const MaterialPoint mp = eval_material(make_lame_laplace(), Vec2::Zero());
    CHECK(enthalpy_density(mp, Mat2::Zero(), Vec2::Zero(), Vec2::Zero()) == 0.0);
  }

  SECTION("isotropic doubling stiffness, unit strain") {
    MaterialModel m = make_lame_laplace();
    m.stiffness = [](const Vec2&) { return Mat3(2.0 * Mat3::Identity()); };
    const MaterialPoint mp = eval_material(m, Vec2::Zero());
    const double h = enthalpy_density(mp, Mat2::Identity(), Vec2(1, 0), Vec2(0, 1));
    CHECK(h == Catch::Approx(1.5).margin(1e-15));
  }

  SECTION("pure electrostatic saddle plus polarization work") {
    const MaterialPoint mp = eval_material(make_lame_laplace(), Vec2(1, 0));
    const double h = enthalpy_density(mp, Mat2::Zero(), Vec2(1, 0), Vec2(1, 0));
    CHECK(h == Catch::Approx(0.5).margin(1e-15));
  }
}

TEST_CASE("enthalpy gradient of a constant-coefficient model is the grad-phi pairing") {
  const Mesh mesh = build_structured_mesh(3, 3);
  const int n = mesh.n_vertices();
  const MaterialModel model = make_lame_laplace();

  // phi = 2x - y has constant gradient (2, -1).
  VecX phi(n);
  for (int i = 0; i < n; ++i) phi[i] = 2.0 * mesh.vertices[i].x() - mesh.vertices[i].y();
  const VecX u = random_vec(2 * n, 0.4, 3);
  const VecX p = random_vec(2 * n, 0.4, 4);
  const VecX dph = assemble_enthalpy_gradient(mesh, model, u, phi, p);

  for (int i = 0; i < n; ++i) {
    double hat_mass = 0.0;  // int hat_i
    for (int tri = 0; tri < mesh.n_triangles(); ++tri)
      for (int v : mesh.triangles[tri])
        if (v == i) hat_mass += mesh.signed_area(tri) / 3.0;
    CHECK(dph[2 * i] == Catch::Approx(2.0 * hat_mass).margin(1e-14));
    CHECK(dph[2 * i + 1] == Catch::Approx(-hat_mass).margin(1e-14));
  }

  const VecX zero_phi = VecX::Zero(n);
  CHECK(assemble_enthalpy_gradient(mesh, model, u, zero_phi, p).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("enthalpy gradient equals finite differences of the discrete energy") {
  const Mesh mesh = build_structured_mesh(3, 3);
  const int n = mesh.n_vertices();
  for (const char* name : {"lame_laplace", "poly_piezo", "blowup_test"}) {
    const MaterialModel model = make_material(name);
    const VecX u = random_vec(2 * n, 0.5, 101);
    VecX phi = random_vec(n, 0.5, 102);
    const VecX p = random_vec(2 * n, 0.5, 103);
    const VecX dph = assemble_enthalpy_gradient(mesh, model, u, phi, p);

    std::mt19937 rng(55);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    const double h = 1e-5;
    for (int trial = 0; trial < 5; ++trial) {
      VecX dir(2 * n);
      for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = unif(rng);
      const double plus = compute_energy(mesh, model, u, phi, VecX(p + h * dir)).bulk;
      const double minus = compute_energy(mesh, model, u, phi, VecX(p - h * dir)).bulk;
      const double fd = (plus - minus) / (2.0 * h);
      const double paired = dph.dot(dir);
      CHECK(std::abs(fd - paired) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("polarization forcing functional") {
  const Mesh mesh = build_structured_mesh(4, 4);
  const int n = mesh.n_vertices();
  const BoundaryPartition part = tag_boundary(mesh, [](Field f, const Vec2& mid) {
    if (f == Field::polarization) return mid.y() > 1.0 - 1e-12 ? BcType::neumann : BcType::dirichlet;
    return BcType::dirichlet;
  });

  SECTION("zero loads") {
    CHECK(assemble_polar_load(mesh, part, LoadSet::zero(), 0.0).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("unit body load sums to the domain area") {
    LoadSet loads = LoadSet::zero();
    loads.polar_force = [](double, const Vec2&) { return Vec2(1.0, 0.0); };
    const VecX rhs = assemble_polar_load(mesh, part, loads, 0.0);
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += rhs[2 * i];
    CHECK(total == Catch::Approx(1.0).margin(1e-13));
  }

  SECTION("boundary flux on the top edge sums to the edge length") {
    LoadSet loads = LoadSet::zero();
    loads.polar_flux = [](double, const Vec2&) { return Vec2(0.0, 1.0); };
    const VecX rhs = assemble_polar_load(mesh, part, loads, 0.0);
    double total_y = 0.0, total_x = 0.0;
    for (int i = 0; i < n; ++i) {
      total_x += rhs[2 * i];
      total_y += rhs[2 * i + 1];
    }
    CHECK(total_y == Catch::Approx(1.0).margin(1e-13));
    CHECK(total_x == 0.0);
  }
}

TEST_CASE("semilinear source") {
  const Mesh mesh = build_structured_mesh(3, 3);
  const int n = mesh.n_vertices();
  const BoundaryPartition part =
      tag_all(mesh, BcType::dirichlet, BcType::dirichlet, BcType::neumann);

  SECTION("quiescent configuration gives the zero source") {
    const VecX src = assemble_source(mesh, part, make_lame_laplace(), LoadSet::zero(), 0.0,
                                     VecX::Zero(2 * n), VecX::Zero(n), VecX::Zero(2 * n));
    CHECK(src.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("quadratic well with constant P gives minus the mass action") {
    const MaterialModel model = make_lame_laplace({{"omega_quad", 1.0}});
    const VecX p = constant_p(mesh, Vec2(1.0, 0.0));
    const VecX src = assemble_source(mesh, part, model, LoadSet::zero(), 0.0, VecX::Zero(2 * n),
                                     VecX::Zero(n), p);
    const SparseMat mass = expand_componentwise(scalar_mass_matrix(mesh));
    CHECK((src + mass * p).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("implicit diffusion step") {
  const Mesh mesh = build_structured_mesh(4, 4);
  const int n = mesh.n_vertices();

  SECTION("constants are stationary under pure Neumann conditions") {
    const BoundaryPartition part =
        tag_all(mesh, BcType::dirichlet, BcType::dirichlet, BcType::neumann);
    const VecX p0 = constant_p(mesh, Vec2(0.3, -0.7));
    const VecX p1 = step_imex(mesh, part, p0, 0.05, VecX::Zero(2 * n));
    CHECK((p1 - p0).cwiseAbs().maxCoeff() <= 1e-12);
  }

  SECTION("Dirichlet nodes stay exactly zero") {
    const BoundaryPartition part =
        tag_all(mesh, BcType::dirichlet, BcType::dirichlet, BcType::dirichlet);
    const PolarizationOperators ops = PolarizationOperators::build(mesh, part);
    VecX p0 = random_vec(2 * n, 1.0, 8);
    for (int d : ops.map.dirichlet_dofs) p0[d] = 0.0;
    ImexStepper stepper(ops);
    const VecX p1 = stepper.step(p0, 0.02, random_vec(2 * n, 1.0, 9));
    for (int d : ops.map.dirichlet_dofs) CHECK(p1[d] == 0.0);
  }

  SECTION("M + dt K is symmetric positive definite") {
    const BoundaryPartition part =
        tag_all(mesh, BcType::dirichlet, BcType::dirichlet, BcType::neumann);
    const PolarizationOperators ops = PolarizationOperators::build(mesh, part);
    for (double dt : {1e-4, 1e-2, 1.0}) {
      const MatX a = MatX(ops.mass) + dt * MatX(ops.stiffness);
      CHECK((a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
      Eigen::SelfAdjointEigenSolver<MatX> es(a);
      CHECK(es.eigenvalues().minCoeff() > 0.0);
    }
  }

  SECTION("rejects non-positive dt") {
    const BoundaryPartition part =
        tag_all(mesh, BcType::dirichlet, BcType::dirichlet, BcType::neumann);
    CHECK_THROWS_AS(step_imex(mesh, part, constant_p(mesh, Vec2(0, 0)), 0.0, VecX::Zero(2 * n)),
                    config_error);
  }
}

TEST_CASE("spatially uniform cubic growth follows the closed-form ODE") {
  // With the destabilizing quartic well, zero loads and all-Dirichlet (u,phi),
  // a spatially constant state reduces to p' = p^3 with the source treated
  // explicitly, i.e. forward Euler: exact solution p0 / sqrt(1 - 2 p0^2 t).
  const Mesh mesh = build_structured_mesh(2, 2);
  const BoundaryPartition part =
      tag_all(mesh, BcType::dirichlet, BcType::dirichlet, BcType::neumann);
  const MaterialModel model = make_blowup_test();
  const PolarizationOperators ops = PolarizationOperators::build(mesh, part);
  ImexStepper stepper(ops);
  const int n = mesh.n_vertices();

  auto run_to = [&](double dt, double t_end) {
    VecX p = constant_p(mesh, Vec2(0.5, 0.0));
    double t = 0.0;
    while (t < t_end - 1e-12) {
      const EllipticSolve es = solve_elliptic(mesh, part, model, p, LoadSet::zero(), t);
      const VecX src = assemble_source(mesh, part, model, LoadSet::zero(), t, es.u, es.phi, p);
      p = stepper.step(p, dt, src);
      t += dt;
    }
    return p[0];
  };

  const double exact = 0.5 / std::sqrt(1.0 - 2.0 * 0.25 * 0.5);
  const double e1 = std::abs(run_to(1.0 / 256, 0.5) - exact);
  const double e2 = std::abs(run_to(1.0 / 512, 0.5) - exact);
  CHECK(e1 <= 2e-3);
  CHECK(e2 <= e1);
  CHECK(e1 / e2 == Catch::Approx(2.0).margin(0.4));  // first order in dt
}

TEST_CASE("energy breakdown sums exactly and all pieces are tracked") {
  const Mesh mesh = build_structured_mesh(4, 4);
  const int n = mesh.n_vertices();
  const MaterialModel model = make_poly_piezo();
  const VecX u = random_vec(2 * n, 0.3, 41);
  const VecX phi = random_vec(n, 0.3, 42);
  const VecX p = random_vec(2 * n, 0.8, 43);
  const EnergyBreakdown e = compute_energy(mesh, model, u, phi, p);
  CHECK(e.total == e.bulk + e.separation + e.exchange);
  CHECK(e.exchange > 0.0);
  CHECK(e.separation > 0.0);
}
