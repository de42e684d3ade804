#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ferro/elliptic.hpp"
#include "ferro/parabolic.hpp"

namespace ferro {

// Time, nodal fields and the residual of the elliptic solve they came from.
struct State {
  double t = 0.0;
  VecX u;    // 2 per node
  VecX phi;  // 1 per node
  VecX p;    // 2 per node
  double elliptic_residual = 0.0;
};

struct TimeControls {
  double t_end = 1.0;
  double dt0 = 1e-3;
  double dt_min = 1e-8;
  double dt_max = 1e-1;
};

struct PicardControls {
  bool enabled = true;
  double tol = 1e-10;
  int max_iters = 25;
};

struct DriverParams {
  TimeControls time;
  PicardControls picard;
  double blowup_norm_threshold = 1e3;
  int output_cadence = 1;
  bool preflight_checks = true;

  void validate() const {
    if (!(time.t_end > 0.0)) throw config_error("time.T must be positive");
    if (!(time.dt_min > 0.0)) throw config_error("time.dt_min must be positive");
    if (time.dt_min > time.dt0)
      throw config_error("time.dt_min must not exceed time.dt0 (dt_min > dt0)");
    if (time.dt0 > time.dt_max)
      throw config_error("time.dt0 must not exceed time.dt_max (dt0 > dt_max)");
    if (!(picard.tol > 0.0)) throw config_error("picard.tol must be positive");
    if (picard.max_iters < 1) throw config_error("picard.max_iters must be at least 1");
    if (output_cadence < 1) throw config_error("output.cadence must be at least 1");
    if (!(blowup_norm_threshold > 0.0)) throw config_error("blowup_norm_threshold must be positive");
  }
};

struct Problem {
  Mesh mesh;
  BoundaryPartition partition;
  MaterialModel model;
  LoadSet loads;
  VecX p0;  // nodal polarization at t = 0
};

// Cached operators reused across steps of one run.
struct StepperContext {
  PolarizationOperators polar_ops;
  ImexStepper stepper;
  EllipticOptions elliptic_options;

  explicit StepperContext(const Problem& problem, bool check_coercivity = true)
      : polar_ops(PolarizationOperators::build(problem.mesh, problem.partition)),
        stepper(polar_ops) {
    elliptic_options.check_coercivity = check_coercivity;
  }
};

struct AdvanceResult {
  bool ok = false;
  State state;
  int picard_iters = 0;
  std::string reason;  // set on failure
};

// One time step. Picard mode iterates elliptic solve / source / diffusion
// step to a fixed point of the implicit coupling; plain mode is one pass
// with the source lagged at the old polarization. Loads and source are
// evaluated at the new time level. A stalled Picard loop is a step failure
// (the driver halves dt); solver and assumption failures propagate.
inline AdvanceResult advance(const Problem& problem, StepperContext& ctx, const State& state,
                             double dt, const PicardControls& picard,
                             const VecX* initial_guess = nullptr) {
  const double t_new = state.t + dt;
  AdvanceResult result;

  auto solve_at = [&](const VecX& p_field) {
    return solve_elliptic(problem.mesh, problem.partition, problem.model, p_field, problem.loads,
                          t_new, ctx.elliptic_options);
  };
  auto source_at = [&](const EllipticSolve& es, const VecX& p_field) {
    return assemble_source(problem.mesh, problem.partition, problem.model, problem.loads, t_new,
                           es.u, es.phi, p_field);
  };

  if (!picard.enabled) {
    const EllipticSolve es = solve_at(state.p);
    try {
      const VecX p_new = ctx.stepper.step(state.p, dt, source_at(es, state.p));
      result.ok = true;
      result.picard_iters = 1;
      result.state = State{t_new, es.u, es.phi, p_new, es.residual};
    } catch (const solver_error& ex) {
      result.reason = std::string("diffusion step failed: ") + ex.what();
    }
    return result;
  }

  VecX p_iter = initial_guess ? *initial_guess : state.p;
  for (int j = 1; j <= picard.max_iters; ++j) {
    // A runaway iterate is a step failure (the driver halves dt), not a
    // solver defect; genuine elliptic failures below do propagate.
    if (!p_iter.allFinite() || p_iter.cwiseAbs().maxCoeff() > 1e12) {
      result.reason = "picard iterate diverged";
      return result;
    }
    const EllipticSolve es = solve_at(p_iter);
    VecX p_next;
    try {
      p_next = ctx.stepper.step(state.p, dt, source_at(es, p_iter));
    } catch (const solver_error& ex) {
      result.reason = std::string("diffusion step failed: ") + ex.what();
      return result;
    }
    if ((p_next - p_iter).cwiseAbs().maxCoeff() <= picard.tol) {
      result.ok = true;
      result.picard_iters = j;
      result.state = State{t_new, es.u, es.phi, p_next, es.residual};
      return result;
    }
    p_iter = p_next;
  }
  result.reason = "picard iteration did not reach tol within max_iters";
  return result;
}

enum class Outcome { reached_t_end, blowup_norm, picard_stall };

inline const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::reached_t_end: return "reached_T";
    case Outcome::blowup_norm: return "blowup_norm";
    case Outcome::picard_stall: return "picard_stall";
  }
  return "?";
}

struct MaximalTimeReport {
  double t_hat = 0.0;
  Outcome outcome = Outcome::reached_t_end;
  double p_inf = 0.0;
  double p_h1 = 0.0;
  int steps_accepted = 0;
  int steps_rejected = 0;
  double final_dt = 0.0;
};

struct StepRecord {
  long index = 0;
  double dt = 0.0;
  int picard_iters = 0;
  double elliptic_residual = 0.0;
};

struct Snapshot {
  State state;
  StepRecord record;
};

struct RunResult {
  std::vector<Snapshot> snapshots;
  MaximalTimeReport report;
};

struct ResumePoint {
  State state;
  double dt = 0.0;
  int success_streak = 0;
  long step_index = 0;
};

struct RunCallbacks {
  // Invoked for the initial state, every cadence-th accepted step and the
  // final state.
  std::function<void(const Snapshot&)> on_snapshot;
  // Invoked at the same cadence with the full loop state; restarting from it
  // reproduces the remaining trajectory including the dt adaptation.
  std::function<void(const ResumePoint&)> on_checkpoint;
};

// Advance until t_end is reached, the polarization norm crosses the blow-up
// threshold, or dt halving hits the floor. The norm and stall exits both
// report the last accepted time as the maximal time; they are distinguished
// in the outcome. Identical inputs produce bit-identical trajectories.
inline RunResult run(const Problem& problem, const DriverParams& params,
                     const RunCallbacks& callbacks = {},
                     const std::optional<ResumePoint>& resume = {}) {
  params.validate();
  const int n = problem.mesh.n_vertices();
  if (problem.p0.size() != 2 * n) throw config_error("run: initial polarization has wrong size");

  if (params.preflight_checks) {
    const double derr = check_derivatives(problem.model);
    if (derr > 1e-6)
      throw assumption_error("material derivative self-check failed (max error " +
                             std::to_string(derr) + ")");
    std::vector<Vec2> samples(n);
    for (int i = 0; i < n; ++i) samples[i] = node_vec2(problem.p0, i);
    const CoercivityReport coercivity = check_pointwise_coercivity(problem.model, samples);
    if (coercivity.failed_sample)
      throw assumption_error("pointwise coercivity fails at the initial polarization");
  }

  StepperContext ctx(problem, params.preflight_checks);

  RunResult result;
  State state;
  double dt;
  int streak;
  long step_index;
  if (resume) {
    state = resume->state;
    dt = resume->dt;
    streak = resume->success_streak;
    step_index = resume->step_index;
  } else {
    state.t = 0.0;
    state.p = problem.p0;
    for (int d : ctx.polar_ops.map.dirichlet_dofs) state.p[d] = 0.0;
    const EllipticSolve es0 = solve_elliptic(problem.mesh, problem.partition, problem.model,
                                             state.p, problem.loads, 0.0, ctx.elliptic_options);
    state.u = es0.u;
    state.phi = es0.phi;
    state.elliptic_residual = es0.residual;
    dt = params.time.dt0;
    streak = 0;
    step_index = 0;
  }

  auto p_h1_norm = [&](const VecX& p) {
    return std::sqrt(p.dot(ctx.polar_ops.stiffness * p) + p.dot(ctx.polar_ops.mass * p));
  };
  auto emit = [&](const StepRecord& rec) {
    result.snapshots.push_back({state, rec});
    if (callbacks.on_snapshot) callbacks.on_snapshot(result.snapshots.back());
    if (callbacks.on_checkpoint) callbacks.on_checkpoint(ResumePoint{state, dt, streak, step_index});
  };

  MaximalTimeReport& report = result.report;
  report.outcome = Outcome::reached_t_end;
  if (!resume) emit({0, dt, 0, state.elliptic_residual});

  long last_emitted = resume ? resume->step_index : 0;
  const double t_end = params.time.t_end;
  while (state.t < t_end - 1e-14 * t_end) {
    const double dt_step = std::min(dt, t_end - state.t);
    const AdvanceResult step = advance(problem, ctx, state, dt_step, params.picard);
    if (!step.ok) {
      ++report.steps_rejected;
      streak = 0;
      if (0.5 * dt < params.time.dt_min) {
        report.outcome = Outcome::picard_stall;
        break;
      }
      dt *= 0.5;
      continue;
    }
    state = step.state;
    ++report.steps_accepted;
    ++step_index;
    ++streak;
    if (streak >= 5) {
      dt = std::min(dt * 1.5, params.time.dt_max);
      streak = 0;
    }
    const bool blew_up = state.p.cwiseAbs().maxCoeff() >= params.blowup_norm_threshold &&
                         state.t < t_end - 1e-14 * t_end;
    if (step_index % params.output_cadence == 0 || blew_up) {
      emit({step_index, dt_step, step.picard_iters, state.elliptic_residual});
      last_emitted = step_index;
    }
    if (blew_up) {
      report.outcome = Outcome::blowup_norm;
      break;
    }
  }

  if (last_emitted != step_index) emit({step_index, dt, 0, state.elliptic_residual});
  report.t_hat = state.t;
  report.p_inf = state.p.size() ? state.p.cwiseAbs().maxCoeff() : 0.0;
  report.p_h1 = p_h1_norm(state.p);
  report.final_dt = dt;
  return result;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

struct Checkpoint {
  std::string config_hash;  // hex digest of the originating configuration
  long step_index = 0;
  int success_streak = 0;
  double t = 0.0;
  double dt = 0.0;
  double elliptic_residual = 0.0;
  VecX u, phi, p;
};

namespace detail {
inline void write_field(std::ostream& os, const char* name, const VecX& v) {
  os << name << " " << v.size() << "\n";
  char buf[32];
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g\n", v[i]);
    os << buf;
  }
}
inline VecX read_field(std::istream& is, const char* name) {
  std::string key;
  long size = 0;
  if (!(is >> key >> size) || key != name)
    throw io_error(std::string("checkpoint: expected field '") + name + "'");
  VecX v(size);
  for (long i = 0; i < size; ++i)
    if (!(is >> v[i])) throw io_error("checkpoint: truncated field data");
  return v;
}
}  // namespace detail

// Atomic write: the temp file is renamed into place only when complete, so a
// crash never leaves a half-written checkpoint behind.
inline void save_checkpoint(const std::string& path, const Checkpoint& cp) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw io_error("cannot open checkpoint file for writing: " + tmp);
    os << "ferrosim-checkpoint 1\n";
    os << "hash " << cp.config_hash << "\n";
    os << "step " << cp.step_index << "\n";
    os << "streak " << cp.success_streak << "\n";
    char buf[96];
    std::snprintf(buf, sizeof buf, "t %.17g\ndt %.17g\nresidual %.17g\n", cp.t, cp.dt,
                  cp.elliptic_residual);
    os << buf;
    detail::write_field(os, "u", cp.u);
    detail::write_field(os, "phi", cp.phi);
    detail::write_field(os, "p", cp.p);
    if (!os) throw io_error("failed writing checkpoint: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open checkpoint file: " + path);
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "ferrosim-checkpoint" || version != 1)
    throw io_error("checkpoint: unrecognized header in " + path);
  Checkpoint cp;
  auto expect_key = [&](const char* key) {
    std::string word;
    if (!(is >> word) || word != key)
      throw io_error(std::string("checkpoint: expected key '") + key + "'");
  };
  expect_key("hash");
  is >> cp.config_hash;
  expect_key("step");
  is >> cp.step_index;
  expect_key("streak");
  is >> cp.success_streak;
  expect_key("t");
  is >> cp.t;
  expect_key("dt");
  is >> cp.dt;
  expect_key("residual");
  is >> cp.elliptic_residual;
  if (!is) throw io_error("checkpoint: malformed scalar block in " + path);
  cp.u = detail::read_field(is, "u");
  cp.phi = detail::read_field(is, "phi");
  cp.p = detail::read_field(is, "p");
  return cp;
}

inline void require_matching_hash(const Checkpoint& cp, const std::string& expected) {
  if (cp.config_hash != expected)
    throw config_error("checkpoint was produced by a different configuration (hash " +
                       cp.config_hash + ", expected " + expected + ")");
}

inline Checkpoint make_checkpoint(const std::string& config_hash, const ResumePoint& rp) {
  Checkpoint cp;
  cp.config_hash = config_hash;
  cp.step_index = rp.step_index;
  cp.success_streak = rp.success_streak;
  cp.t = rp.state.t;
  cp.dt = rp.dt;
  cp.elliptic_residual = rp.state.elliptic_residual;
  cp.u = rp.state.u;
  cp.phi = rp.state.phi;
  cp.p = rp.state.p;
  return cp;
}

inline ResumePoint make_resume_point(const Checkpoint& cp) {
  ResumePoint rp;
  rp.state = State{cp.t, cp.u, cp.phi, cp.p, cp.elliptic_residual};
  rp.dt = cp.dt;
  rp.success_streak = cp.success_streak;
  rp.step_index = cp.step_index;
  return rp;
}

}  // namespace ferro
