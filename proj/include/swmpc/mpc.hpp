#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "swmpc/errors.hpp"
#include "swmpc/integrator.hpp"
#include "swmpc/mode_plan.hpp"
#include "swmpc/model.hpp"
#include "swmpc/ocp.hpp"
#include "swmpc/rounding.hpp"

namespace swmpc {

/// Intervals the active mode must still hold to satisfy the minimum dwell
/// time: ceil((dwell - t_act) / dt), floored at zero.
inline int compute_h(double dwell, double t_act, double dt) {
  if (!(dt > 0.0)) throw InputError("compute_h: dt must be positive");
  if (t_act < 0.0) throw InputError("compute_h: t_act must be nonnegative");
  const double r = (dwell - t_act) / dt;
  if (r <= 0.0) return 0;
  return std::max(0, static_cast<int>(std::ceil(r - 1e-9)));
}

/// Mode-transition bookkeeping of the combined shrinking/receding loop.
struct ControllerState {
  int l{1};
  int h{0};
  std::optional<ConvexCombination> b_act;
  double t_act{0.0};
  int i{0};
  std::optional<OcpSolution> prev_applied;
};

inline ControllerState make_controller(int l) {
  if (l < 1) throw ConfigError("make_controller: l must be >= 1");
  ControllerState cs;
  cs.l = l;
  cs.h = l;
  return cs;
}

struct SampleDiagnostics {
  SolveStatus status1{SolveStatus::max_iter};
  SolveStatus status2{SolveStatus::max_iter};
  double objective{0.0};
  double kkt1{0.0};
  double viol1{0.0};
  double viol2{0.0};
  int iters1{0};
  int iters2{0};
  double t_nlp1{0.0};
  double t_sur{0.0};
  double t_nlp2{0.0};
  bool assumption4_flag{false};
  int h{0};
  bool had_b_act{false};
};

struct MpcStepResult {
  Eigen::VectorXd u0;
  ConvexCombination b0{ConvexCombination::vertex(1, 0)};
  SampleDiagnostics diag;
  OcpSolution relaxed;
  OcpSolution applied;
};

/// Shift a horizon-i solution into the feasible candidate for horizon i+1.
/// Shrinking step: drop the first interval (and the first shooting state),
/// blocks unchanged. Receding step: drop the exhausted first block, shift the
/// rest forward and repeat the last block, input row and shooting state over
/// the appended tail.
inline OcpSolution shift_warm_start(const OcpSolution& prev, bool receding) {
  OcpSolution w = prev;
  const int Np = static_cast<int>(prev.inputs.rows());
  const int nu = static_cast<int>(prev.inputs.cols());
  const int ns = static_cast<int>(prev.states.rows());
  const int M = prev.mode_blocks.num_blocks();
  const int l = prev.mode_blocks.l;
  if (!receding) {
    if (Np < 1) throw InputError("shift_warm_start: empty horizon");
    w.inputs = prev.inputs.bottomRows(Np - 1).eval();
    if (ns > 1) w.states = prev.states.bottomRows(ns - 1).eval();
    w.mode_blocks.h = prev.mode_blocks.h - 1;
    return w;
  }
  Eigen::MatrixXd blocks(M, prev.mode_blocks.num_modes());
  for (int m = 0; m + 1 < M; ++m) blocks.row(m) = prev.mode_blocks.blocks.row(m + 1);
  blocks.row(M - 1) = prev.mode_blocks.blocks.row(M - 1);
  w.mode_blocks.blocks = blocks;
  w.mode_blocks.h = l;

  Eigen::MatrixXd inputs(M * l, nu);
  const int carried = Np - 1;
  if (carried > 0) inputs.topRows(carried) = prev.inputs.bottomRows(carried);
  const Eigen::RowVectorXd tail =
      Np > 0 ? Eigen::RowVectorXd(prev.inputs.row(Np - 1)) : Eigen::RowVectorXd::Zero(nu);
  for (int k = carried; k < M * l; ++k) inputs.row(k) = tail;
  w.inputs = inputs;

  if (ns > 1) {
    Eigen::MatrixXd states(M * l + 1, prev.states.cols());
    const int carried_s = std::min(ns - 1, M * l + 1);
    states.topRows(carried_s) = prev.states.bottomRows(ns - 1).topRows(carried_s);
    for (int k = carried_s; k <= M * l; ++k) states.row(k) = prev.states.row(ns - 1);
    w.states = states;
  }
  return w;
}

/// One pass of Algorithm 1: build P_i(h, b_act), solve the relaxed NLP,
/// round the free blocks, re-solve with the binary plan, apply its first
/// input and mode, then advance the dwell bookkeeping.
inline MpcStepResult mpc_step(ControllerState& cs, const SwitchedModel& model,
                              const GridSpec& grid, int l,
                              const Eigen::VectorXd& x_measured,
                              const SolverOptions& opts) {
  if (l != cs.l) throw InputError("mpc_step: l disagrees with the controller state");
  if (cs.h < 1 || cs.h > cs.l) throw InputError("mpc_step: controller h out of range");
  if (static_cast<bool>(cs.b_act) == (cs.h == cs.l))
    throw InputError("mpc_step: b_act must be absent exactly on fresh blocks");

  using clock = std::chrono::steady_clock;
  const auto seconds = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };

  MpcStepResult out;
  out.diag.h = cs.h;
  out.diag.had_b_act = cs.b_act.has_value();

  const BlockedOcp ocp =
      build(model, grid, l, cs.h, cs.b_act, x_measured, model.terminal_set);

  std::optional<OcpSolution> warm1;
  if (cs.prev_applied) warm1 = shift_warm_start(*cs.prev_applied, !cs.b_act.has_value());

  const auto t0 = clock::now();
  out.relaxed = solve_relaxed(ocp, warm1 ? &*warm1 : nullptr, opts);
  const auto t1 = clock::now();
  out.diag.t_nlp1 = seconds(t0, t1);
  out.diag.status1 = out.relaxed.status;
  out.diag.kkt1 = out.relaxed.kkt_residual;
  out.diag.viol1 = out.relaxed.constraint_violation;
  out.diag.iters1 = out.relaxed.iterations;

  const auto t2 = clock::now();
  const ModePlan plan = sur_round(out.relaxed.mode_blocks);
  const auto t3 = clock::now();
  out.diag.t_sur = seconds(t2, t3);

  // For autonomous models this call contains no decision variables and is
  // exactly the simulation of the rounded plan.
  OcpSolution warm2 = out.relaxed;
  const auto t4 = clock::now();
  out.applied = solve_fixed(ocp, plan, &warm2, opts);
  const auto t5 = clock::now();
  out.diag.t_nlp2 = seconds(t4, t5);
  out.diag.status2 = out.applied.status;
  out.diag.viol2 = out.applied.constraint_violation;
  out.diag.iters2 = out.applied.iterations;
  out.diag.objective = out.applied.objective;
  out.diag.assumption4_flag = out.applied.status == SolveStatus::infeasible;

  out.u0 = out.applied.inputs.rows() > 0 ? Eigen::VectorXd(out.applied.inputs.row(0))
                                         : Eigen::VectorXd(model.n_u);
  out.b0 = row_combination(plan, 0);

  const int prev_mode =
      cs.prev_applied && is_binary_plan(cs.prev_applied->mode_blocks)
          ? row_combination(cs.prev_applied->mode_blocks, 0).vertex_index()
          : -1;
  cs.t_act = (out.b0.vertex_index() == prev_mode) ? cs.t_act + grid.dt : grid.dt;
  cs.prev_applied = out.applied;
  cs.h -= 1;
  if (cs.h == 0) {
    cs.h = cs.l;
    cs.b_act.reset();
  } else {
    cs.b_act = out.b0;
  }
  cs.i += 1;
  return out;
}

struct ClosedLoopTrace {
  double dt{0.0};
  int l{1};
  std::vector<double> times;        // n+1
  Eigen::MatrixXd states;           // (n+1) x n_x, measured
  Eigen::MatrixXd inputs;           // n x n_u, applied
  std::vector<int> mode_indices;    // n, applied (0-based)
  Eigen::MatrixXd modes;            // n x Q, binary rows
  std::vector<SolveStatus> status1;
  std::vector<SolveStatus> status2;
  std::vector<double> objective;
  std::vector<SampleDiagnostics> diag;
  bool completed{true};
  std::string failure;
  double E{0.0};
  double res{0.0};
};

/// True iff every maximal run of one mode lasts at least l samples; the
/// final run may be truncated by the end of the simulation.
inline bool verify_dwell(const std::vector<int>& modes, int l) {
  if (l < 1) throw InputError("verify_dwell: l must be >= 1");
  const int n = static_cast<int>(modes.size());
  int start = 0;
  for (int i = 1; i <= n; ++i) {
    if (i == n || modes[static_cast<size_t>(i)] != modes[static_cast<size_t>(start)]) {
      if (i < n && i - start < l) return false;
      start = i;
    }
  }
  return true;
}

inline bool verify_dwell(const std::vector<ConvexCombination>& modes, int l) {
  std::vector<int> idx;
  idx.reserve(modes.size());
  for (const auto& b : modes) {
    if (!b.is_binary()) throw InputError("verify_dwell: modes must be binary");
    idx.push_back(b.vertex_index());
  }
  return verify_dwell(idx, l);
}

/// Closed-loop scores. Autonomous models: E is the summed squared tracking
/// error of the measured states after the initial sample and res accumulates
/// the positive parts of the state-box rows. Controlled models: E is the
/// summed stage cost of the applied inputs plus the terminal tracking error;
/// res accumulates positive path-constraint parts.
inline std::pair<double, double> metrics(const ClosedLoopTrace& trace,
                                         const SwitchedModel& model) {
  const int n = static_cast<int>(trace.inputs.rows());
  if (trace.states.rows() != n + 1)
    throw InputError("metrics: trace lengths are inconsistent");
  Eigen::VectorXd x_target = model.target_state.size() == model.n_x
                                 ? model.target_state
                                 : Eigen::VectorXd::Zero(model.n_x);

  double E = 0.0;
  if (model.n_u == 0) {
    for (int i = 1; i <= n; ++i)
      E += (trace.states.row(i).transpose() - x_target).squaredNorm();
  } else {
    for (int i = 0; i < n; ++i) {
      const int j = trace.mode_indices[static_cast<size_t>(i)];
      E += model.running_cost[static_cast<size_t>(j)].value(
          trace.states.row(i).transpose(), trace.inputs.row(i).transpose());
    }
    E += (trace.states.row(n).transpose() - x_target).squaredNorm();
  }

  double res = 0.0;
  for (int i = 1; i <= n; ++i) {
    for (int c = 0; c < model.n_x; ++c) {
      const double v = trace.states(i, c);
      if (std::isfinite(model.x_upper(c))) res += std::max(0.0, v - model.x_upper(c));
      if (std::isfinite(model.x_lower(c))) res += std::max(0.0, model.x_lower(c) - v);
    }
    if (model.path.count > 0) {
      const Eigen::VectorXd u =
          model.n_u > 0 ? Eigen::VectorXd(trace.inputs.row(std::min(i, n - 1)).transpose())
                        : Eigen::VectorXd(0);
      const Eigen::VectorXd g = model.path.g(trace.states.row(i).transpose(), u);
      for (int r = 0; r < g.size(); ++r) res += std::max(0.0, g(r));
    }
  }
  return {E, res};
}

/// Algorithm 1 driven against the nominal plant (the same integrator as the
/// transcription). A hard NLP #1 failure stops the run and is reported on
/// the returned trace.
inline ClosedLoopTrace run_closed_loop(const SwitchedModel& model, const GridSpec& grid,
                                       int l, const Eigen::VectorXd& x0, int n_steps,
                                       SolverOptions opts) {
  if (n_steps < 1) throw InputError("run_closed_loop: n_steps must be >= 1");
  validate_model(model);
  validate_grid(grid);
  opts.substeps = grid.substeps;

  ClosedLoopTrace trace;
  trace.dt = grid.dt;
  trace.l = l;
  const int Q = model.num_modes();
  trace.states.resize(n_steps + 1, model.n_x);
  trace.inputs.resize(n_steps, model.n_u);
  trace.modes.resize(n_steps, Q);
  trace.times.reserve(static_cast<size_t>(n_steps) + 1);

  ControllerState cs = make_controller(l);
  Eigen::VectorXd x = x0;
  int done = 0;
  trace.states.row(0) = x.transpose();
  trace.times.push_back(0.0);
  for (int i = 0; i < n_steps; ++i) {
    try {
      MpcStepResult r = mpc_step(cs, model, grid, l, x, opts);
      trace.inputs.row(i) = r.u0.transpose();
      trace.modes.row(i) = r.b0.weights().transpose();
      trace.mode_indices.push_back(r.b0.vertex_index());
      trace.status1.push_back(r.diag.status1);
      trace.status2.push_back(r.diag.status2);
      trace.objective.push_back(r.diag.objective);
      trace.diag.push_back(r.diag);
      x = step(model, x, r.u0, r.b0, grid.dt, grid.substeps);
    } catch (const std::runtime_error& e) {
      trace.completed = false;
      trace.failure = e.what();
      trace.mode_indices.resize(static_cast<size_t>(done));
      trace.status1.resize(static_cast<size_t>(done));
      trace.status2.resize(static_cast<size_t>(done));
      trace.objective.resize(static_cast<size_t>(done));
      trace.diag.resize(static_cast<size_t>(done));
      break;
    }
    ++done;
    trace.states.row(done) = x.transpose();
    trace.times.push_back(done * grid.dt);
  }

  if (done < n_steps) {
    trace.states.conservativeResize(done + 1, Eigen::NoChange);
    trace.inputs.conservativeResize(done, Eigen::NoChange);
    trace.modes.conservativeResize(done, Eigen::NoChange);
  }
  if (done > 0) {
    const auto [E, res] = metrics(trace, model);
    trace.E = E;
    trace.res = res;
  }
  return trace;
}

}  // namespace swmpc
