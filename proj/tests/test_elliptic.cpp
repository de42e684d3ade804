#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "ferro/elliptic.hpp"

using namespace ferro;

namespace {

VecX random_nodal_p(const Mesh& mesh, double amplitude, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  VecX p(2 * mesh.n_vertices());
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = u(rng);
  return p;
}

}  // namespace

TEST_CASE("coupling blocks vanish for the decoupled model at P = 0") {
  const Mesh mesh = build_structured_mesh(4, 4);
  const VecX p = VecX::Zero(2 * mesh.n_vertices());
  const MatX a = MatX(assemble_piezo_matrix(mesh, make_lame_laplace(), p));
  const int nu = 2 * mesh.n_vertices();
  const int nphi = mesh.n_vertices();
  CHECK(a.block(0, nu, nu, nphi).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(a.block(nu, 0, nphi, nu).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("quadratic form of the coupled matrix equals its diagonal part") {
  const Mesh mesh = build_structured_mesh(4, 4);
  const VecX p = random_nodal_p(mesh, 0.8, 21);
  const MaterialModel model = make_poly_piezo();
  const SparseMat a = assemble_piezo_matrix(mesh, model, p);
  const SparseMat d = assemble_piezo_matrix(mesh, model, p, PiezoBlocks::diagonal_only);

  std::mt19937 rng(4);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    VecX v(a.rows());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = gauss(rng);
    const double full = v.dot(a * v);
    const double diag = v.dot(d * v);
    CHECK(std::abs(full - diag) <= 1e-12 * std::abs(full));
  }
}

TEST_CASE("polarization-induced load") {
  const Mesh mesh = build_structured_mesh(1, 1);
  const int n = mesh.n_vertices();

  SECTION("zero spontaneous strain and zero P give the zero functional") {
    const VecX rhs =
        assemble_polarization_load(mesh, make_lame_laplace(), VecX::Zero(2 * n));
    CHECK(rhs.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("constant P pairs with a hat gradient: hand value") {
    VecX p(2 * n);
    for (int i = 0; i < n; ++i) {
      p[2 * i] = 1.0;
      p[2 * i + 1] = 0.0;
    }
    const VecX rhs = assemble_polarization_load(mesh, make_lame_laplace(), p);
    // phi entry of corner node (0,0): int P . grad hat = -1/2 on this mesh.
    CHECK(rhs[2 * n + 0] == Catch::Approx(-0.5).margin(1e-14));
    CHECK(rhs.head(2 * n).cwiseAbs().maxCoeff() <= 1e-15);  // u rows untouched
  }

  SECTION("the strain term is linear in the spontaneous strain") {
    Mat2 s;
    s << 0.2, 0.05, 0.05, -0.1;
    auto with_strain = [&](double scale) {
      MaterialModel m = make_lame_laplace();
      m.spont_strain = [=](const Vec2&) { return Mat2(scale * s); };
      return assemble_polarization_load(mesh, m, random_nodal_p(mesh, 0.5, 9));
    };
    const VecX base = with_strain(0.0), one = with_strain(1.0), two = with_strain(2.0);
    CHECK(((two - base) - 2.0 * (one - base)).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("external load functional") {
  const Mesh mesh = build_structured_mesh(4, 4);
  const int n = mesh.n_vertices();
  const BoundaryPartition part = tag_boundary(mesh, [](Field f, const Vec2& mid) {
    if (f == Field::potential && mid.x() > 1.0 - 1e-12) return BcType::neumann;
    return BcType::dirichlet;
  });

  SECTION("zero loads give the zero vector") {
    const VecX rhs = assemble_external_load(mesh, part, LoadSet::zero(), 0.0);
    CHECK(rhs.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("a unit body force integrates to the domain area") {
    LoadSet loads = LoadSet::zero();
    loads.body_force = [](double, const Vec2&) { return Vec2(1.0, 0.0); };
    const VecX rhs = assemble_external_load(mesh, part, loads, 0.0);
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += rhs[2 * i];
    CHECK(total == Catch::Approx(1.0).margin(1e-13));
  }

  SECTION("surface charge on the right edge integrates to minus the edge length") {
    LoadSet loads = LoadSet::zero();
    loads.surface_charge = [](double, const Vec2&) { return 1.0; };
    const VecX rhs = assemble_external_load(mesh, part, loads, 0.0);
    CHECK(rhs.tail(n).sum() == Catch::Approx(-1.0).margin(1e-13));
  }
}

TEST_CASE("elliptic solve basics") {
  const Mesh mesh = build_structured_mesh(4, 4);
  const BoundaryPartition part =
      tag_all(mesh, BcType::dirichlet, BcType::dirichlet, BcType::neumann);
  const VecX p0 = VecX::Zero(2 * mesh.n_vertices());

  SECTION("quiescent data give the zero solution") {
    const EllipticSolve sol =
        solve_elliptic(mesh, part, make_lame_laplace(), p0, LoadSet::zero(), 0.0);
    CHECK(sol.u.cwiseAbs().maxCoeff() <= 1e-14);
    CHECK(sol.phi.cwiseAbs().maxCoeff() <= 1e-14);
  }

  SECTION("a pure charge load does not move the decoupled displacement") {
    LoadSet loads = LoadSet::zero();
    loads.volume_charge = [](double, const Vec2& x) { return std::sin(3.0 * x.x()) + 0.5; };
    const EllipticSolve sol = solve_elliptic(mesh, part, make_lame_laplace(), p0, loads, 0.0);
    CHECK(sol.u.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(sol.phi.cwiseAbs().maxCoeff() > 1e-4);
  }

  SECTION("two identical solves are bit-identical") {
    LoadSet loads = LoadSet::zero();
    loads.body_force = [](double, const Vec2& x) { return Vec2(x.y(), -x.x()); };
    const VecX p = random_nodal_p(mesh, 0.5, 31);
    const EllipticSolve a = solve_elliptic(mesh, part, make_poly_piezo(), p, loads, 0.0);
    const EllipticSolve b = solve_elliptic(mesh, part, make_poly_piezo(), p, loads, 0.0);
    CHECK((a.u - b.u).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.phi - b.phi).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("missing Dirichlet parts are an assumption violation") {
    const BoundaryPartition neumann_only =
        tag_all(mesh, BcType::neumann, BcType::dirichlet, BcType::neumann);
    CHECK_THROWS_AS(
        solve_elliptic(mesh, neumann_only, make_lame_laplace(), p0, LoadSet::zero(), 0.0),
        assumption_error);
  }

  SECTION("coercivity pre-flight rejects an indefinite permittivity") {
    MaterialModel bad = make_lame_laplace();
    bad.permittivity = [](const Vec2&) { return Mat2(-Mat2::Identity()); };
    CHECK_THROWS_AS(solve_elliptic(mesh, part, bad, p0, LoadSet::zero(), 0.0), assumption_error);
  }
}

TEST_CASE("symmetric part of the constrained operator is positive definite") {
  const Mesh mesh = build_structured_mesh(8, 8);
  const BoundaryPartition part =
      tag_all(mesh, BcType::dirichlet, BcType::dirichlet, BcType::neumann);
  const VecX p = random_nodal_p(mesh, 0.7, 11);
  const ConstrainedSystem sys = assemble_elliptic_system(mesh, part, make_poly_piezo(), p,
                                                         LoadSet::zero(), 0.0);
  const MatX a = MatX(sys.matrix);
  Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (a + a.transpose()));
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("inverse-norm probe") {
  SECTION("identity matrix") {
    SparseMat eye(10, 10);
    eye.setIdentity();
    ConstrainedSystem sys;
    sys.matrix = eye;
    sys.rhs = VecX::Zero(10);
    CHECK(estimate_inverse_norm_of(sys) == Catch::Approx(1.0).epsilon(1e-9));
  }

  SECTION("scalar Laplacian at h = 1/8 matches the dense SVD oracle") {
    const Mesh mesh = build_structured_mesh(8, 8);
    const SparseMat k = scalar_stiffness_matrix(mesh);
    std::vector<int> dofs;
    for (int n = 0; n < mesh.n_vertices(); ++n) {
      const Vec2& v = mesh.vertices[n];
      if (v.x() < 1e-12 || v.x() > 1 - 1e-12 || v.y() < 1e-12 || v.y() > 1 - 1e-12)
        dofs.push_back(n);
    }
    const ConstrainedSystem sys =
        constrain(k, VecX::Zero(mesh.n_vertices()), dofs, VecX::Zero(dofs.size()));
    const double estimate = estimate_inverse_norm_of(sys);
    Eigen::JacobiSVD<MatX> svd(MatX(sys.matrix));
    const double oracle = 1.0 / svd.singularValues().minCoeff();
    CHECK(std::abs(estimate - oracle) <= 1e-6 * oracle);
  }

  SECTION("stability bound holds for an actual solve") {
    const Mesh mesh = build_structured_mesh(6, 6);
    const BoundaryPartition part =
        tag_all(mesh, BcType::dirichlet, BcType::dirichlet, BcType::neumann);
    const VecX p = random_nodal_p(mesh, 0.5, 77);
    LoadSet loads = LoadSet::zero();
    loads.body_force = [](double, const Vec2& x) { return Vec2(std::sin(x.x()), x.y()); };
    loads.volume_charge = [](double, const Vec2& x) { return x.x() * x.y(); };
    const ConstrainedSystem sys =
        assemble_elliptic_system(mesh, part, make_poly_piezo(), p, loads, 0.0);
    auto [x, rep] = solve_linear(sys);
    const double c_p = estimate_inverse_norm_of(sys);
    CHECK(x.norm() <= 1.0000001 * c_p * sys.rhs.norm());
  }

  SECTION("continuity of the estimate under small polarization changes") {
    const Mesh mesh = build_structured_mesh(4, 4);
    const BoundaryPartition part =
        tag_all(mesh, BcType::dirichlet, BcType::dirichlet, BcType::neumann);
    const MaterialModel model = make_poly_piezo();
    const VecX p = random_nodal_p(mesh, 0.5, 13);
    std::mt19937 rng(14);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    VecX delta(p.size());
    for (Eigen::Index i = 0; i < delta.size(); ++i) delta[i] = u(rng);
    delta *= 1e-3 / delta.cwiseAbs().maxCoeff();
    const double c0 = estimate_inverse_norm(mesh, part, model, p);
    const double c1 = estimate_inverse_norm(mesh, part, model, VecX(p + delta));
    CHECK(std::abs(c1 - c0) / c0 <= 0.1);
  }
}
