#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "ferro/materials.hpp"

using namespace ferro;

namespace {

Mat2 random_sym(std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double a = u(rng), b = u(rng), c = u(rng);
  Mat2 s;
  s << a, c, c, b;
  return s;
}

// Affine test model: constant maps except a spontaneous strain linear in P,
// so every derivative map is constant.
MaterialModel make_affine_model() {
  MaterialModel m = make_lame_laplace();
  m.name = "affine_test";
  Mat2 s1, s2;
  s1 << 0.3, 0.1, 0.1, -0.2;
  s2 << -0.1, 0.4, 0.4, 0.2;
  m.spont_strain = [=](const Vec2& p) { return Mat2(p.x() * s1 + p.y() * s2); };
  m.d_spont_strain = [=](const Vec2&) { return std::array<Mat2, 2>{s1, s2}; };
  m.separation = [](const Vec2& p) { return 0.3 * p.x() - 0.1 * p.y(); };
  m.separation_grad = [](const Vec2&) { return Vec2(0.3, -0.1); };
  return m;
}

}  // namespace

TEST_CASE("lame_laplace evaluates to the decoupled constant maps") {
  const MaterialModel m = make_lame_laplace();
  const MaterialPoint mp = eval_material(m, Vec2::Zero());

  std::mt19937 rng(42);
  for (int k = 0; k < 10; ++k) {
    const Mat2 eps = random_sym(rng);
    const Mat2 applied = vec_to_sym(mp.stiffness * sym_to_vec(eps));
    const Mat2 expected = eps.trace() * Mat2::Identity() + 2.0 * eps;
    CHECK((applied - expected).cwiseAbs().maxCoeff() <= 1e-14);
  }
  CHECK((mp.permittivity - Mat2::Identity()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(mp.coupling.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("quadratic separation well has gradient 2P") {
  const MaterialModel m = make_lame_laplace({{"omega_quad", 2.0}});
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 10; ++k) {
    const Vec2 p(u(rng), u(rng));
    const Vec2 d(u(rng), u(rng));
    CHECK(m.separation(p) == Catch::Approx(p.squaredNorm()).margin(1e-15));
    CHECK(m.separation_grad(p).dot(d) == Catch::Approx(2.0 * p.dot(d)).margin(1e-14));
  }
}

TEST_CASE("poly_piezo derivatives match central differences at a spot check") {
  const MaterialModel m = make_poly_piezo();
  const Vec2 p(0.3, -0.1);
  const double h = 1e-5;
  for (int k = 0; k < 2; ++k) {
    Vec2 dp = Vec2::Zero();
    dp(k) = h;
    const Mat3 fd_c = (m.stiffness(p + dp) - m.stiffness(p - dp)) / (2 * h);
    CHECK((fd_c - m.d_stiffness(p)[k]).norm() <= 1e-7 * (1.0 + fd_c.norm()));
    const Mat23 fd_e = (m.coupling(p + dp) - m.coupling(p - dp)) / (2 * h);
    CHECK((fd_e - m.d_coupling(p)[k]).norm() <= 1e-7 * (1.0 + fd_e.norm()));
    const Mat2 fd_s = (m.spont_strain(p + dp) - m.spont_strain(p - dp)) / (2 * h);
    CHECK((fd_s - m.d_spont_strain(p)[k]).norm() <= 1e-7 * (1.0 + fd_s.norm()));
    const Mat2 fd_d = (m.permittivity(p + dp) - m.permittivity(p - dp)) / (2 * h);
    CHECK((fd_d - m.d_permittivity(p)[k]).norm() <= 1e-7 * (1.0 + fd_d.norm()));
    const double fd_w = (m.separation(p + dp) - m.separation(p - dp)) / (2 * h);
    CHECK(std::abs(fd_w - m.separation_grad(p)(k)) <= 1e-7 * (1.0 + std::abs(fd_w)));
  }
}

TEST_CASE("all built-in models pass the derivative self check") {
  for (const char* name : {"lame_laplace", "poly_piezo", "blowup_test"})
    CHECK(check_derivatives(make_material(name)) <= 1e-6);
}

TEST_CASE("block map reproduces the hand-evaluated Lame-Laplace action") {
  const MaterialPoint mp = eval_material(make_lame_laplace(), Vec2::Zero());
  const Mat5 b = assemble_block_map(mp);

  Eigen::Matrix<double, 5, 1> in;
  in << sym_to_vec(Mat2::Identity()), Vec2(1.0, 0.0);
  const Eigen::Matrix<double, 5, 1> out = b * in;
  CHECK((vec_to_sym(out.head<3>()) - 4.0 * Mat2::Identity()).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK((out.tail<2>() - Vec2(1.0, 0.0)).cwiseAbs().maxCoeff() <= 1e-15);

  CHECK((b * Eigen::Matrix<double, 5, 1>::Zero()).norm() == 0.0);
}

TEST_CASE("coupling blocks cancel in the quadratic form") {
  const MaterialModel m = make_poly_piezo();
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    const MaterialPoint mp = eval_material(m, Vec2(u(rng), u(rng)));
    const Mat5 b = assemble_block_map(mp);
    Eigen::Matrix<double, 5, 1> in;
    const Mat2 eps = random_sym(rng);
    const Vec2 g(u(rng), u(rng));
    in << sym_to_vec(eps), g;
    const double paired = in.dot(b * in);
    const double diagonal =
        sym_to_vec(eps).dot(mp.stiffness * sym_to_vec(eps)) + g.dot(mp.permittivity * g);
    CHECK(std::abs(paired - diagonal) <= 1e-13 * (1.0 + std::abs(diagonal)));
  }
}

TEST_CASE("smoothness probe: affine model has zero derivative Lipschitz ratio") {
  const SmoothnessReport rep =
      check_smoothness(make_affine_model(), Vec2(-1, -1), Vec2(1, 1), 1e-3);
  CHECK(rep.ok);
  for (const auto& e : rep.entries) {
    CHECK(e.ratio <= 1e-10);
    CHECK_FALSE(e.flagged);
  }
}

TEST_CASE("smoothness probe: quartic well ratio is bounded by its Hessian bound") {
  MaterialModel m = make_lame_laplace();
  m.separation = [](const Vec2& p) { return 0.25 * p.squaredNorm() * p.squaredNorm(); };
  m.separation_grad = [](const Vec2& p) { return Vec2(p.squaredNorm() * p); };
  const SmoothnessReport rep = check_smoothness(m, Vec2(-1, -1), Vec2(1, 1), 1e-3);
  CHECK(rep.ok);
  for (const auto& e : rep.entries)
    if (e.map == "separation_grad") {
      CHECK(e.ratio > 0.0);
      CHECK(e.ratio <= 7.0);
    }
}

TEST_CASE("smoothness probe flags the |P| kink") {
  MaterialModel m = make_lame_laplace();
  m.separation = [](const Vec2& p) { return p.norm(); };
  m.separation_grad = [](const Vec2& p) { return Vec2(p.norm() > 0 ? Vec2(p / p.norm()) : Vec2::Zero()); };
  const SmoothnessReport rep = check_smoothness(m, Vec2(-1, -1), Vec2(1, 1), 1e-3);
  CHECK_FALSE(rep.ok);
  bool kink_flagged = false;
  for (const auto& e : rep.entries)
    if (e.map == "separation_grad") kink_flagged = e.flagged;
  CHECK(kink_flagged);
}

TEST_CASE("pointwise coercivity of the Lame-Laplace model") {
  // Operator eigenvalues of the isotropic stiffness are {2 lambda + 2 mu,
  // 2 mu, 2 mu}; with lambda = mu = gamma = 1 the stiffness floor is 2 and
  // the permittivity floor is 1.
  const MaterialModel m = make_lame_laplace();
  const CoercivityReport rep = check_pointwise_coercivity(m, {Vec2(0, 0), Vec2(1, 2)});
  CHECK_FALSE(rep.failed_sample.has_value());
  CHECK(rep.alpha_min == Catch::Approx(1.0).margin(1e-14));

  Eigen::SelfAdjointEigenSolver<Mat3> es(m.stiffness(Vec2::Zero()));
  CHECK(es.eigenvalues().minCoeff() == Catch::Approx(2.0).margin(1e-14));
  CHECK(es.eigenvalues().maxCoeff() == Catch::Approx(4.0).margin(1e-14));
}

TEST_CASE("coercivity failure cases are reported") {
  SECTION("negative permittivity") {
    MaterialModel m = make_lame_laplace();
    m.permittivity = [](const Vec2&) { return Mat2(-Mat2::Identity()); };
    const CoercivityReport rep = check_pointwise_coercivity(m, {Vec2(0.5, 0.5)});
    CHECK(rep.failed_sample.has_value());
    CHECK(rep.alpha_min <= 0.0);
  }
  SECTION("stiffness degenerate at a sampled point") {
    MaterialModel m = make_lame_laplace();
    m.stiffness = [](const Vec2& p) { return Mat3((1.0 - p.x() * p.x()) * isotropic_stiffness(1, 1)); };
    const CoercivityReport rep = check_pointwise_coercivity(m, {Vec2(0, 0), Vec2(1, 0)});
    CHECK(rep.alpha_min == Catch::Approx(0.0).margin(1e-15));
    CHECK(rep.failed_sample.has_value());
    CHECK((*rep.failed_sample - Vec2(1, 0)).norm() == 0.0);
  }
}

TEST_CASE("coercivity floor is monotone under adding samples") {
  const MaterialModel m = make_poly_piezo();
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::vector<Vec2> samples = {Vec2(0, 0)};
  double prev = check_pointwise_coercivity(m, samples).alpha_min;
  for (int k = 0; k < 20; ++k) {
    samples.emplace_back(u(rng), u(rng));
    const double cur = check_pointwise_coercivity(m, samples).alpha_min;
    CHECK(cur <= prev + 1e-15);
    prev = cur;
  }
}

TEST_CASE("decoupling check at zero polarization") {
  const DecouplingReport ll = check_decoupling_at_zero(make_lame_laplace());
  CHECK(ll.decoupled);
  CHECK(ll.deviation < 1e-15);
  CHECK(ll.lambda == Catch::Approx(1.0));
  CHECK(ll.mu == Catch::Approx(1.0));
  CHECK(ll.gamma == Catch::Approx(1.0));

  // Polynomial coupling vanishes at P = 0, so the piezo model decouples too.
  CHECK(check_decoupling_at_zero(make_poly_piezo()).decoupled);

  MaterialModel biased = make_lame_laplace();
  Mat23 e0;
  e0 << 0.1, 0, 0, 0, 0, 0;
  biased.coupling = [=](const Vec2&) { return e0; };
  const DecouplingReport bad = check_decoupling_at_zero(biased);
  CHECK_FALSE(bad.decoupled);
  CHECK(bad.deviation == Catch::Approx(0.1));
}

TEST_CASE("material construction rejects unknown names and parameters") {
  CHECK_THROWS_AS(make_material("unobtainium"), config_error);
  CHECK_THROWS_AS(make_lame_laplace({{"lambda", 1.0}, {"bogus", 2.0}}), config_error);
  CHECK_THROWS_AS(make_poly_piezo({{"kappa", 1.0}, {"kapa", 1.0}}), config_error);
}

TEST_CASE("non-finite material output names the offending map") {
  MaterialModel m = make_lame_laplace();
  m.permittivity = [](const Vec2&) {
    return Mat2(std::numeric_limits<double>::quiet_NaN() * Mat2::Identity());
  };
  try {
    eval_material(m, Vec2::Zero());
    FAIL("expected material_error");
  } catch (const material_error& ex) {
    CHECK(std::string(ex.what()).find("permittivity") != std::string::npos);
  }
}
