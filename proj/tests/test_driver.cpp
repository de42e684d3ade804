#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <random>

#include "ferro/driver.hpp"
#include "ferro/verify.hpp"

using namespace ferro;

namespace {

Problem quiescent_problem(int n = 4) {
  Problem p;
  p.mesh = build_structured_mesh(n, n);
  p.partition = tag_all(p.mesh, BcType::dirichlet, BcType::dirichlet, BcType::neumann);
  p.model = make_lame_laplace();
  p.loads = LoadSet::zero();
  p.p0 = VecX::Zero(2 * p.mesh.n_vertices());
  return p;
}

Problem blowup_problem(int n = 4) {
  Problem p;
  p.mesh = build_structured_mesh(n, n);
  p.partition = tag_all(p.mesh, BcType::dirichlet, BcType::dirichlet, BcType::neumann);
  p.model = make_blowup_test();
  p.loads = LoadSet::zero();
  p.p0 = VecX(2 * p.mesh.n_vertices());
  for (int i = 0; i < p.mesh.n_vertices(); ++i) set_node_vec2(p.p0, i, Vec2(1.0, 0.0));
  return p;
}

Problem relaxation_problem(int n = 6, unsigned seed = 12) {
  Problem p;
  p.mesh = build_structured_mesh(n, n);
  p.partition = tag_all(p.mesh, BcType::dirichlet, BcType::dirichlet, BcType::neumann);
  p.model = make_poly_piezo();
  p.loads = LoadSet::zero();
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  p.p0 = VecX(2 * p.mesh.n_vertices());
  for (Eigen::Index i = 0; i < p.p0.size(); ++i) p.p0[i] = u(rng);
  return p;
}

DriverParams default_params(double t_end) {
  DriverParams params;
  params.time = {t_end, 1e-2, 1e-6, 5e-2};
  params.picard = {true, 1e-10, 25};
  params.output_cadence = 1;
  return params;
}

}  // namespace

TEST_CASE("driver parameter validation names the offending keys") {
  DriverParams params = default_params(0.1);
  params.time.dt_min = 0.1;  // above dt0
  try {
    params.validate();
    FAIL("expected config_error");
  } catch (const config_error& ex) {
    const std::string msg = ex.what();
    CHECK(msg.find("dt_min") != std::string::npos);
    CHECK(msg.find("dt0") != std::string::npos);
  }
  params = default_params(-1.0);
  CHECK_THROWS_AS(params.validate(), config_error);
}

TEST_CASE("quiescent equilibrium is preserved for any dt") {
  const Problem problem = quiescent_problem();
  StepperContext ctx(problem);
  State state;
  state.t = 0.0;
  state.p = problem.p0;
  state.u = VecX::Zero(2 * problem.mesh.n_vertices());
  state.phi = VecX::Zero(problem.mesh.n_vertices());
  for (double dt : {1e-4, 1e-2, 0.5}) {
    const AdvanceResult r = advance(problem, ctx, state, dt, PicardControls{true, 1e-12, 10});
    REQUIRE(r.ok);
    CHECK(r.state.p.cwiseAbs().maxCoeff() <= 1e-14);
    CHECK(r.state.u.cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("quiescent run reaches the final time with the polarization pinned") {
  const Problem problem = quiescent_problem();
  const DriverParams params = default_params(0.1);
  const RunResult result = run(problem, params);
  CHECK(result.report.outcome == Outcome::reached_t_end);
  CHECK(result.report.t_hat == Catch::Approx(0.1).margin(1e-14));
  for (const Snapshot& s : result.snapshots)
    CHECK(s.state.p.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("picard fixed point is independent of the initial guess") {
  const Problem problem = relaxation_problem();
  StepperContext ctx(problem);
  State state;
  state.t = 0.0;
  state.p = problem.p0;
  state.u = VecX::Zero(2 * problem.mesh.n_vertices());
  state.phi = VecX::Zero(problem.mesh.n_vertices());

  const PicardControls picard{true, 1e-12, 60};
  const double dt = 5e-3;
  const VecX guess_a = state.p;
  const VecX guess_b = 1.1 * state.p;
  const AdvanceResult ra = advance(problem, ctx, state, dt, picard, &guess_a);
  const AdvanceResult rb = advance(problem, ctx, state, dt, picard, &guess_b);
  REQUIRE(ra.ok);
  REQUIRE(rb.ok);
  CHECK((ra.state.p - rb.state.p).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("picard converges whenever dt is small against the source Lipschitz constant") {
  const Problem problem = relaxation_problem();
  const LipschitzProbe probe = lipschitz_probe_source(problem.mesh, problem.partition,
                                                      problem.model, problem.loads, 0.0, 0.5, 6);
  REQUIRE(probe.h_m > 0.0);
  DriverParams params = default_params(0.05);
  params.time.dt0 = std::min(0.5 / probe.h_m, 5e-3);
  params.time.dt_max = params.time.dt0;
  const RunResult result = run(problem, params);
  CHECK(result.report.outcome == Outcome::reached_t_end);
  CHECK(result.report.steps_rejected == 0);
  for (std::size_t i = 1; i < result.snapshots.size(); ++i)
    CHECK(result.snapshots[i].record.picard_iters >= 1);
}

TEST_CASE("uniform destabilized state stalls before the closed-form blow-up time") {
  const Problem problem = blowup_problem();
  DriverParams params = default_params(1.0);
  params.time.dt0 = 1e-3;
  params.time.dt_min = 1e-6;
  params.time.dt_max = 1e-2;
  params.blowup_norm_threshold = 1e3;
  params.output_cadence = 50;
  const RunResult result = run(problem, params);
  CHECK(result.report.outcome != Outcome::reached_t_end);
  CHECK(result.report.t_hat >= 0.45);
  CHECK(result.report.t_hat <= 0.5);
  CHECK(result.report.steps_rejected > 0);
}

TEST_CASE("maximal time is monotone in the blow-up threshold") {
  // Past p ~ 1/sqrt(12 dt_min) the Picard contraction is lost even at the dt
  // floor, so very large thresholds end in a stall instead; these stay below
  // that and are detected by the norm.
  const Problem problem = blowup_problem(2);
  double prev = 0.0;
  for (double threshold : {3.0, 30.0, 100.0}) {
    DriverParams params = default_params(1.0);
    params.time.dt0 = 1e-3;
    params.time.dt_max = 1e-2;
    params.blowup_norm_threshold = threshold;
    params.output_cadence = 100;
    const RunResult result = run(problem, params);
    CHECK(result.report.outcome == Outcome::blowup_norm);
    CHECK(result.report.t_hat >= prev);
    prev = result.report.t_hat;
  }
}

TEST_CASE("identical configurations give bit-identical trajectories") {
  const Problem problem = relaxation_problem();
  DriverParams params = default_params(0.03);
  const RunResult a = run(problem, params);
  const RunResult b = run(problem, params);
  REQUIRE(a.snapshots.size() == b.snapshots.size());
  for (std::size_t i = 0; i < a.snapshots.size(); ++i) {
    CHECK((a.snapshots[i].state.p - b.snapshots[i].state.p).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.snapshots[i].state.u - b.snapshots[i].state.u).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.snapshots[i].state.t == b.snapshots[i].state.t);
  }
}

TEST_CASE("checkpoint restart reproduces the uninterrupted run") {
  const Problem problem = relaxation_problem();
  DriverParams params = default_params(0.08);
  params.output_cadence = 2;

  std::optional<ResumePoint> mid;
  RunCallbacks callbacks;
  callbacks.on_checkpoint = [&](const ResumePoint& rp) {
    if (!mid && rp.state.t >= 0.04) mid = rp;
  };
  const RunResult full = run(problem, params, callbacks);
  REQUIRE(mid.has_value());

  // Round-trip the resume point through the on-disk format.
  const std::string path = "test_checkpoint.txt";
  save_checkpoint(path, make_checkpoint("cafebabe", *mid));
  const Checkpoint cp = load_checkpoint(path);
  require_matching_hash(cp, "cafebabe");
  CHECK_THROWS_AS(require_matching_hash(cp, "deadbeef"), config_error);
  CHECK(cp.t == mid->state.t);
  CHECK((cp.p - mid->state.p).cwiseAbs().maxCoeff() == 0.0);

  const RunResult resumed = run(problem, params, {}, make_resume_point(cp));
  const VecX& p_full = full.snapshots.back().state.p;
  const VecX& p_resumed = resumed.snapshots.back().state.p;
  CHECK(full.snapshots.back().state.t == resumed.snapshots.back().state.t);
  CHECK((p_full - p_resumed).cwiseAbs().maxCoeff() <= 1e-12);
  std::filesystem::remove(path);
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
}

TEST_CASE("checkpoint loader rejects malformed files") {
  const std::string path = "bad_checkpoint.txt";
  {
    std::ofstream os(path);
    os << "ferrosim-checkpoint 1\nhash x\nstep 0\nstreak 0\nt 0\ndt 1\nresidual 0\nu 4\n1 2\n";
  }
  CHECK_THROWS_AS(load_checkpoint(path), io_error);
  {
    std::ofstream os(path);
    os << "not-a-checkpoint 7\n";
  }
  CHECK_THROWS_AS(load_checkpoint(path), io_error);
  std::filesystem::remove(path);
}

TEST_CASE("preflight rejects inconsistent material derivatives before stepping") {
  Problem problem = quiescent_problem();
  problem.model.separation_grad = [](const Vec2& p) { return Vec2(3.0 * p); };  // wrong slope
  CHECK_THROWS_AS(run(problem, default_params(0.01)), assumption_error);
}
