// ferrosim: coupled ferroelectric phase-field simulator on 2D rectangles.
//
// Subcommands:
//   run     advance the coupled system and write CSV / VTK / checkpoints
//   check   material assumption checks with a JSON summary
//   verify  manufactured-solution and oracle verification battery
//   probe   inverse-norm estimate of the coupled operator and its
//           sensitivity to polarization perturbations
//
// Exit codes: 0 success, 1 verification failure, 2 configuration error,
// 3 assumption-check failure, 4 solver failure, 5 blow-up before T.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "ferro/config.hpp"
#include "ferro/output.hpp"
#include "ferro/verify.hpp"

namespace {

using namespace ferro;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitAssumption = 3;
constexpr int kExitSolver = 4;
constexpr int kExitBlowup = 5;

struct CommonArgs {
  std::string config_path;
  std::string output_dir;
  std::vector<std::string> overrides;
};

SimulationSetup load_setup(const CommonArgs& args) {
  ParsedConfig cfg = load_config_file(args.config_path, args.overrides);
  SimulationSetup setup = realize_config(cfg);
  if (!args.output_dir.empty()) setup.output.dir = args.output_dir;
  std::filesystem::create_directories(setup.output.dir);
  return setup;
}

int cmd_run(const CommonArgs& args, const std::string& resume_path) {
  const SimulationSetup setup = load_setup(args);
  const std::filesystem::path dir(setup.output.dir);

  std::optional<ResumePoint> resume;
  if (!resume_path.empty()) {
    const Checkpoint cp = load_checkpoint(resume_path);
    require_matching_hash(cp, setup.hash);
    resume = make_resume_point(cp);
  }

  TimeSeriesLogger logger((dir / "timeseries.csv").string(), setup.problem);
  RunCallbacks callbacks;
  callbacks.on_snapshot = [&](const Snapshot& snap) {
    logger.append(snap);
    if (setup.output.write_snapshots) {
      char name[48];
      std::snprintf(name, sizeof name, "snapshot_%06ld.vtk", snap.record.index);
      write_vtk_snapshot_file((dir / name).string(), setup.problem.mesh, snap.state);
    }
  };
  if (!setup.output.checkpoint_path.empty()) {
    callbacks.on_checkpoint = [&](const ResumePoint& rp) {
      save_checkpoint(setup.output.checkpoint_path, make_checkpoint(setup.hash, rp));
    };
  }

  const RunResult result = run(setup.problem, setup.params, callbacks, resume);
  const MaximalTimeReport& rep = result.report;

  char buf[256];
  std::snprintf(buf, sizeof buf,
                "outcome %s\nT_hat %.17g\np_inf %.17g\np_h1 %.17g\nsteps_accepted %d\n"
                "steps_rejected %d\nfinal_dt %.17g\n",
                outcome_name(rep.outcome), rep.t_hat, rep.p_inf, rep.p_h1, rep.steps_accepted,
                rep.steps_rejected, rep.final_dt);
  std::ofstream report_file(dir / "report.txt");
  report_file << buf;
  std::cout << buf;

  return rep.outcome == Outcome::reached_t_end ? kExitOk : kExitBlowup;
}

int cmd_check(const CommonArgs& args) {
  const SimulationSetup setup = load_setup(args);
  const MaterialModel& model = setup.problem.model;
  json summary;

  const double deriv_err = check_derivatives(model);
  summary["derivatives"] = {{"max_rel_error", deriv_err}, {"pass", deriv_err <= 1e-6}};

  const SmoothnessReport smooth =
      check_smoothness(model, Vec2(-1.5, -1.5), Vec2(1.5, 1.5), 1e-4);
  json smooth_json;
  smooth_json["pass"] = smooth.ok;
  for (const auto& e : smooth.entries)
    smooth_json["maps"][e.map] = {{"lipschitz_ratio", e.ratio}, {"flagged", e.flagged}};
  summary["smoothness"] = smooth_json;

  std::vector<Vec2> samples;
  for (int i = 0; i <= 20; ++i)
    for (int j = 0; j <= 20; ++j)
      samples.emplace_back(-1.2 + 0.12 * i, -1.2 + 0.12 * j);
  for (int v = 0; v < setup.problem.mesh.n_vertices(); ++v)
    samples.push_back(node_vec2(setup.problem.p0, v));
  const CoercivityReport coercivity = check_pointwise_coercivity(model, samples);
  summary["coercivity"] = {{"alpha_min", coercivity.alpha_min},
                           {"samples", coercivity.samples},
                           {"pass", !coercivity.failed_sample.has_value()}};
  if (coercivity.failed_sample)
    summary["coercivity"]["failed_sample"] = {coercivity.failed_sample->x(),
                                              coercivity.failed_sample->y()};

  const DecouplingReport dec = check_decoupling_at_zero(model);
  summary["decoupling"] = {{"pass", dec.decoupled},
                           {"deviation", dec.deviation},
                           {"lambda", dec.lambda},
                           {"mu", dec.mu},
                           {"gamma", dec.gamma}};

  const bool all_pass = summary["derivatives"]["pass"].get<bool>() && smooth.ok &&
                        summary["coercivity"]["pass"].get<bool>() && dec.decoupled;
  summary["pass"] = all_pass;

  const std::filesystem::path out = std::filesystem::path(setup.output.dir) / "check.json";
  std::ofstream(out) << summary.dump(2) << "\n";
  std::cout << summary.dump(2) << "\n";
  return all_pass ? kExitOk : kExitAssumption;
}

ExactEllipticSolution verification_exact() {
  constexpr double pi = std::numbers::pi;
  ExactEllipticSolution e;
  e.u = [=](const Vec2& x) { return Vec2(std::sin(pi * x.x()) * std::sin(pi * x.y()), 0.0); };
  e.grad_u = [=](const Vec2& x) {
    Mat2 g = Mat2::Zero();
    g(0, 0) = pi * std::cos(pi * x.x()) * std::sin(pi * x.y());
    g(0, 1) = pi * std::sin(pi * x.x()) * std::cos(pi * x.y());
    return g;
  };
  e.hess_u0 = [=](const Vec2& x) {
    const double ss = std::sin(pi * x.x()) * std::sin(pi * x.y());
    const double cc = std::cos(pi * x.x()) * std::cos(pi * x.y());
    Mat2 h;
    h << -pi * pi * ss, pi * pi * cc, pi * pi * cc, -pi * pi * ss;
    return h;
  };
  e.hess_u1 = [](const Vec2&) { return Mat2::Zero(); };
  e.phi = [](const Vec2& x) { return x.x() * x.y() * (1.0 - x.x()) * (1.0 - x.y()); };
  e.grad_phi = [](const Vec2& x) {
    return Vec2((1.0 - 2.0 * x.x()) * (x.y() - x.y() * x.y()),
                (x.x() - x.x() * x.x()) * (1.0 - 2.0 * x.y()));
  };
  e.hess_phi = [](const Vec2& x) {
    Mat2 h;
    h(0, 0) = -2.0 * (x.y() - x.y() * x.y());
    h(1, 1) = -2.0 * (x.x() - x.x() * x.x());
    h(0, 1) = h(1, 0) = (1.0 - 2.0 * x.x()) * (1.0 - 2.0 * x.y());
    return h;
  };
  return e;
}

FrozenPolarization verification_frozen() {
  constexpr double pi = std::numbers::pi;
  FrozenPolarization f;
  f.p = [=](const Vec2& x) { return Vec2(0.3 * std::sin(pi * x.x()), 0.3 * std::cos(pi * x.y())); };
  f.grad = [=](const Vec2& x) {
    Mat2 g = Mat2::Zero();
    g(0, 0) = 0.3 * pi * std::cos(pi * x.x());
    g(1, 1) = -0.3 * pi * std::sin(pi * x.y());
    return g;
  };
  return f;
}

ExactPolarization verification_mode() {
  constexpr double pi = std::numbers::pi;
  ExactPolarization e;
  auto s = [=](const Vec2& x) { return std::sin(pi * x.x()) * std::sin(pi * x.y()); };
  e.p = [=](double t, const Vec2& x) { return Vec2(std::exp(-4.0 * t) * s(x) * Vec2(1, 1)); };
  e.dp_dt = [=](double t, const Vec2& x) {
    return Vec2(-4.0 * std::exp(-4.0 * t) * s(x) * Vec2(1, 1));
  };
  e.laplacian = [=](double t, const Vec2& x) {
    return Vec2(-2.0 * pi * pi * std::exp(-4.0 * t) * s(x) * Vec2(1, 1));
  };
  return e;
}

int cmd_verify(const CommonArgs& args) {
  const SimulationSetup setup = load_setup(args);
  const std::filesystem::path dir(setup.output.dir);
  bool all_pass = true;
  std::ostringstream text;

  auto record = [&](const ConvergenceReport& rep, const std::string& csv_name) {
    std::ofstream(dir / csv_name) << rep.to_csv();
    text << rep.to_text();
    all_pass = all_pass && rep.pass;
  };

  record(mms_elliptic({8, 16, 32, 64}, make_lame_laplace(), verification_exact(),
                      FrozenPolarization::zero()),
         "mms_elliptic_constant.csv");
  record(mms_elliptic({8, 16, 32, 64}, make_poly_piezo(), verification_exact(),
                      verification_frozen()),
         "mms_elliptic_frozen.csv");
  record(mms_parabolic(32, {1.0 / 20, 1.0 / 40, 1.0 / 80, 1.0 / 160}, 0.25, verification_mode()),
         "mms_parabolic.csv");

  for (const char* name : {"lame_laplace", "poly_piezo", "blowup_test"}) {
    const double err = gradient_check_enthalpy(make_material(name));
    text << "gradient check " << name << ": max rel error " << err << " -> "
         << (err <= 1e-6 ? "pass" : "FAIL") << "\n";
    all_pass = all_pass && err <= 1e-6;
  }

  {
    const Mesh mesh = build_structured_mesh(2, 2);
    const BoundaryPartition part =
        tag_all(mesh, BcType::dirichlet, BcType::dirichlet, BcType::neumann);
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> unif(-0.5, 0.5);
    VecX p(2 * mesh.n_vertices());
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = unif(rng);
    for (const char* name : {"lame_laplace", "poly_piezo", "blowup_test"}) {
      const DenseOracleResult r =
          dense_oracle_compare(mesh, part, make_material(name), p, setup.problem.loads, 0.0);
      text << "dense oracle " << name << ": max deviation " << r.max_deviation << " -> "
           << (r.max_deviation <= 1e-13 ? "pass" : "FAIL") << "\n";
      all_pass = all_pass && r.max_deviation <= 1e-13;
    }

    const Mesh probe_mesh = build_structured_mesh(4, 4);
    const BoundaryPartition probe_part =
        tag_all(probe_mesh, BcType::dirichlet, BcType::dirichlet, BcType::neumann);
    for (double radius : {0.5, 1.0, 2.0}) {
      const LipschitzProbe probe = lipschitz_probe_source(
          probe_mesh, probe_part, setup.problem.model, setup.problem.loads, 0.0, radius, 10);
      text << "lipschitz probe radius " << radius << ": h_M " << probe.h_m << " (pairs "
           << probe.pairs_used << ", skipped " << probe.pairs_skipped << ")\n";
    }
  }

  std::ofstream(dir / "verify.txt") << text.str();
  std::cout << text.str();
  std::cout << (all_pass ? "verification passed" : "verification FAILED") << "\n";
  return all_pass ? kExitOk : kExitVerifyFailed;
}

int cmd_probe(const CommonArgs& args, int n_perturbations, double delta) {
  const SimulationSetup setup = load_setup(args);
  const Problem& problem = setup.problem;
  const std::filesystem::path dir(setup.output.dir);

  const double c0 = estimate_inverse_norm(problem.mesh, problem.partition, problem.model,
                                          problem.p0);
  std::ostringstream text;
  char buf[160];
  std::snprintf(buf, sizeof buf, "C_P at initial polarization: %.12g\n", c0);
  text << buf;

  std::mt19937 rng(404);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::ofstream csv(dir / "probe.csv");
  csv << "perturbation,c_p,rel_change\n";
  csv << "0,"
      << c0 << ",0\n";
  double worst = 0.0;
  for (int k = 1; k <= n_perturbations; ++k) {
    VecX p = problem.p0;
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += delta * unif(rng);
    const double ck = estimate_inverse_norm(problem.mesh, problem.partition, problem.model, p);
    const double rel = std::abs(ck - c0) / c0;
    worst = std::max(worst, rel);
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", k, ck, rel);
    csv << buf;
    std::snprintf(buf, sizeof buf, "perturbation %d (inf-norm %.1e): C_P %.12g, rel change %.3e\n",
                  k, delta, ck, rel);
    text << buf;
  }
  std::snprintf(buf, sizeof buf, "max relative change: %.3e\n", worst);
  text << buf;
  std::ofstream(dir / "probe.txt") << text.str();
  std::cout << text.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ferrosim: coupled ferroelectric phase-field simulator"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string resume_path;
  int probe_samples = 5;
  double probe_delta = 1e-3;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", args.config_path, "configuration file")->required();
    cmd->add_option("-o,--output", args.output_dir, "output directory (overrides config)");
    cmd->add_option("-s,--set", args.overrides, "override section.key=value");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "advance the coupled evolution");
  add_common(run_cmd);
  run_cmd->add_option("--resume", resume_path, "checkpoint file to resume from");

  CLI::App* check_cmd = app.add_subcommand("check", "material assumption checks");
  add_common(check_cmd);

  CLI::App* verify_cmd = app.add_subcommand("verify", "verification battery");
  add_common(verify_cmd);

  CLI::App* probe_cmd = app.add_subcommand("probe", "inverse-norm probe");
  add_common(probe_cmd);
  probe_cmd->add_option("--samples", probe_samples, "number of perturbations");
  probe_cmd->add_option("--delta", probe_delta, "perturbation inf-norm");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return cmd_run(args, resume_path);
    if (check_cmd->parsed()) return cmd_check(args);
    if (verify_cmd->parsed()) return cmd_verify(args);
    if (probe_cmd->parsed()) return cmd_probe(args, probe_samples, probe_delta);
  } catch (const config_error& ex) {
    std::cerr << "configuration error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const assumption_error& ex) {
    std::cerr << "assumption check failed: " << ex.what() << "\n";
    return kExitAssumption;
  } catch (const material_error& ex) {
    std::cerr << "material evaluation error: " << ex.what() << "\n";
    return kExitAssumption;
  } catch (const solver_error& ex) {
    std::cerr << "solver failure: " << ex.what() << "\n";
    return kExitSolver;
  } catch (const estimation_error& ex) {
    std::cerr << "estimation failure: " << ex.what() << "\n";
    return kExitSolver;
  } catch (const io_error& ex) {
    std::cerr << "i/o error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitSolver;
  }
  return kExitOk;
}
