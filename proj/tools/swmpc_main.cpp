#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "swmpc/swmpc.hpp"

namespace fs = std::filesystem;

namespace {

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

fs::path output_root() {
  if (const char* env = std::getenv("SWMPC_OUTPUT_ROOT")) return fs::path(env);
  return fs::path("out");
}

swmpc::SwitchedModel make_model(const std::string& name) {
  if (name == "example1") return swmpc::builtin_example1();
  if (name == "example2") return swmpc::builtin_example2();
  throw swmpc::ConfigError("unknown model '" + name + "'");
}

Eigen::VectorXd default_x0(const swmpc::SwitchedModel& model) {
  if (model.name == "example1") {
    Eigen::VectorXd x(2);
    x << -1.0, 1.0;
    return x;
  }
  return Eigen::VectorXd::Zero(model.n_x);
}

// One-step discrete maps of the model's modes, valid for linear dynamics
// (the Jacobian at the origin is the system matrix).
swmpc::SwitchedLinearSystem linear_system(const swmpc::SwitchedModel& model, double dt,
                                          int substeps) {
  if (model.n_u != 0)
    throw swmpc::ConfigError("srci: only autonomous linear models are supported");
  swmpc::SwitchedLinearSystem sys;
  const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(model.n_x);
  const Eigen::VectorXd u0(0);
  for (int j = 0; j < model.num_modes(); ++j) {
    const auto& dyn = model.dynamics[static_cast<size_t>(j)];
    const Eigen::MatrixXd A = dyn.jac_x ? dyn.jac_x(x0, u0)
                                        : swmpc::detail::fd_jac_x(dyn.f, x0, u0);
    sys.A.push_back(swmpc::rk4_discretize(A, dt, substeps));
  }
  return sys;
}

swmpc::SrciResult attach_srci_terminal_set(swmpc::SwitchedModel& model, double dt,
                                           int substeps, int l, int max_iter,
                                           int max_rows) {
  const swmpc::SwitchedLinearSystem sys = linear_system(model, dt, substeps);
  const swmpc::Polytope X = swmpc::Polytope::box(model.x_lower, model.x_upper);
  const swmpc::SrciResult res = swmpc::compute_srci(X, sys, l, max_iter, max_rows);
  if (res.converged && !res.empty) model.terminal_set = res.set;
  return res;
}

void write_polytope_csv(const fs::path& path, const swmpc::Polytope& P) {
  std::ofstream os(path);
  if (!os) throw swmpc::InputError("cannot open '" + path.string() + "'");
  for (int c = 0; c < P.dim(); ++c) os << "c" << c + 1 << ",";
  os << "d\n";
  for (int i = 0; i < P.rows(); ++i) {
    for (int c = 0; c < P.dim(); ++c) os << g17(P.C(i, c)) << ",";
    os << g17(P.d(i)) << "\n";
  }
}

int emit_run(const swmpc::ClosedLoopTrace& trace, const fs::path& dir,
             const std::string& label) {
  fs::create_directories(dir);
  swmpc::write_trace((dir / "trace.csv").string(), trace);
  swmpc::write_metrics_summary((dir / "metrics.txt").string(), trace);
  swmpc::write_plot_script((dir / "plot.py").string());

  double t_total = 0.0;
  for (const auto& d : trace.diag) t_total += d.t_nlp1 + d.t_sur + d.t_nlp2;
  const double n = trace.diag.empty() ? 1.0 : static_cast<double>(trace.diag.size());
  std::cout << label << ": E=" << g17(trace.E) << " res=" << g17(trace.res)
            << " mean_solve_ms=" << g17(1e3 * t_total / n) << " trace="
            << (dir / "trace.csv").string() << "\n";
  if (!trace.completed) {
    std::cerr << label << ": run stopped early: " << trace.failure << "\n";
    return 3;
  }
  return 0;
}

int cmd_example(const std::string& model_name, int l, int steps, bool terminal_set,
                const swmpc::SolverOptions& opts, const std::string& out_name) {
  swmpc::SwitchedModel model = make_model(model_name);
  const int N = model_name == "example1" ? 20 : 40;
  const swmpc::GridSpec grid{N, 0.1, opts.substeps};
  if (l < 1) throw swmpc::ConfigError(model_name + ": l must be >= 1");
  if (N % l != 0)
    throw swmpc::ConfigError(model_name + ": l = " + std::to_string(l) +
                             " does not divide N = " + std::to_string(N));

  const fs::path dir = output_root() / out_name;
  fs::create_directories(dir);
  if (terminal_set) {
    const swmpc::SrciResult res =
        attach_srci_terminal_set(model, grid.dt, grid.substeps, l, 200, 5000);
    if (!res.converged)
      throw swmpc::NumericalError("terminal set computation did not converge");
    write_polytope_csv(dir / "terminal_set.csv", res.set);
  }

  const swmpc::ClosedLoopTrace trace =
      swmpc::run_closed_loop(model, grid, l, default_x0(model), steps, opts);
  return emit_run(trace, dir, model_name + " l=" + std::to_string(l));
}

int cmd_srci(const std::string& config_path) {
  const swmpc::ExperimentConfig cfg = swmpc::load_config(config_path);
  const swmpc::SwitchedModel model = make_model(cfg.model);
  const int l = cfg.srci_l > 0 ? cfg.srci_l : cfg.l;
  const swmpc::SwitchedLinearSystem sys =
      linear_system(model, cfg.dt, cfg.solver.substeps);
  const swmpc::Polytope X = swmpc::Polytope::box(model.x_lower, model.x_upper);
  const swmpc::SrciResult res =
      swmpc::compute_srci(X, sys, l, cfg.srci_max_iter, cfg.srci_max_rows);
  const bool certified =
      !res.empty && res.converged && swmpc::verify_srci(res.set, sys, l, cfg.srci_samples, cfg.seed);

  const fs::path dir = output_root() / cfg.output;
  fs::create_directories(dir);
  write_polytope_csv(dir / "srci.csv", res.set);
  std::ofstream report(dir / "srci_report.txt");
  report << "l = " << l << "\n"
         << "converged = " << (res.converged ? "true" : "false") << "\n"
         << "iterations = " << res.iterations << "\n"
         << "rows = " << res.set.rows() << "\n"
         << "empty = " << (res.empty ? "true" : "false") << "\n"
         << "certified = " << (certified ? "true" : "false") << "\n";
  std::cout << "srci l=" << l << ": converged=" << (res.converged ? "true" : "false")
            << " iterations=" << res.iterations << " rows=" << res.set.rows()
            << " certified=" << (certified ? "true" : "false") << " out=" << dir.string()
            << "\n";
  return res.converged && certified ? 0 : 3;
}

int cmd_round(const std::string& in_path, int l, double dt, int Q) {
  if (l < 1) throw swmpc::ConfigError("round: l must be >= 1");
  if (Q < 2) throw swmpc::ConfigError("round: Q must be >= 2");
  if (!(dt > 0.0)) throw swmpc::ConfigError("round: dt must be positive");

  std::ifstream in(in_path);
  if (!in) throw swmpc::ConfigError("round: cannot open '" + in_path + "'");
  std::vector<Eigen::VectorXd> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto items = swmpc::detail::split_csv(line);
    if (static_cast<int>(items.size()) != Q + 1)
      throw swmpc::InputError("round: line " + std::to_string(lineno) + ": expected " +
                              std::to_string(Q + 1) + " columns (m, p1..pQ)");
    try {
      Eigen::VectorXd p(Q);
      for (int j = 0; j < Q; ++j) p(j) = std::stod(items[static_cast<size_t>(j + 1)]);
      rows.push_back(p);
    } catch (const std::invalid_argument&) {
      if (rows.empty() && lineno <= 2) continue;  // header line
      throw swmpc::InputError("round: line " + std::to_string(lineno) + ": bad number");
    }
  }
  if (rows.empty()) throw swmpc::InputError("round: no plan rows in '" + in_path + "'");

  swmpc::ModePlan plan;
  plan.blocks.resize(static_cast<int>(rows.size()), Q);
  for (size_t m = 0; m < rows.size(); ++m)
    plan.blocks.row(static_cast<int>(m)) = rows[m].transpose();
  plan.l = l;
  plan.h = l;
  plan.dt = dt;
  swmpc::validate_plan(plan);

  const swmpc::ModePlan binary = swmpc::sur_round(plan);
  const double gap = swmpc::max_integration_gap(plan, binary);
  const double bound = swmpc::error_bound(l, Q, dt);

  std::cout << "m";
  for (int j = 0; j < Q; ++j) std::cout << ",p" << j + 1;
  std::cout << "\n";
  for (int m = 0; m < binary.num_blocks(); ++m) {
    std::cout << m;
    for (int j = 0; j < Q; ++j) std::cout << "," << g17(binary.blocks(m, j));
    std::cout << "\n";
  }
  std::cout << "gap = " << g17(gap) << "\n";
  std::cout << "bound = " << g17(bound) << "\n";
  return 0;
}

int cmd_oracle(const std::string& config_path) {
  const swmpc::ExperimentConfig cfg = swmpc::load_config(config_path);
  swmpc::SwitchedModel model = make_model(cfg.model);
  const swmpc::GridSpec grid{cfg.N, cfg.dt, cfg.solver.substeps};
  if (cfg.terminal_set == "srci")
    attach_srci_terminal_set(model, cfg.dt, cfg.solver.substeps, cfg.l, cfg.srci_max_iter,
                             cfg.srci_max_rows);
  const Eigen::VectorXd x0 = cfg.x0 ? *cfg.x0 : default_x0(model);
  if (x0.size() != model.n_x) throw swmpc::ConfigError("oracle: x0 dimension mismatch");

  const swmpc::OracleResult best =
      swmpc::best_plan(model, grid, cfg.l, x0, cfg.solver);

  const swmpc::BlockedOcp ocp =
      swmpc::build(model, grid, cfg.l, cfg.l, std::nullopt, x0, model.terminal_set);
  const swmpc::OcpSolution relaxed = swmpc::solve_relaxed(ocp, nullptr, cfg.solver);
  const swmpc::ModePlan rounded = swmpc::sur_round(relaxed.mode_blocks);
  swmpc::OcpSolution warm = relaxed;
  const swmpc::OcpSolution pipeline = swmpc::solve_fixed(ocp, rounded, &warm, cfg.solver);

  const double tol = 1e-6 * (1.0 + std::abs(best.objective));
  const bool sandwich = relaxed.objective <= best.objective + tol &&
                        best.objective <= pipeline.objective + tol;

  const fs::path dir = output_root() / cfg.output;
  fs::create_directories(dir);
  std::ofstream report(dir / "oracle.txt");
  const auto emit = [&](std::ostream& os) {
    os << "plans_evaluated = " << best.plans_evaluated << "\n";
    os << "oracle_feasible = " << (best.feasible ? "true" : "false") << "\n";
    os << "oracle_objective = " << g17(best.objective) << "\n";
    os << "oracle_plan =";
    for (int m = 0; m < best.plan.num_blocks(); ++m)
      os << " " << swmpc::row_combination(best.plan, m).vertex_index();
    os << "\n";
    os << "relaxed_objective = " << g17(relaxed.objective) << "\n";
    os << "pipeline_objective = " << g17(pipeline.objective) << "\n";
    os << "sandwich_ok = " << (sandwich ? "true" : "false") << "\n";
  };
  emit(report);
  emit(std::cout);
  return 0;
}

int cmd_sweep(const std::string& config_path) {
  const swmpc::ExperimentConfig cfg = swmpc::load_config(config_path);
  if (cfg.sweep_l.empty())
    throw swmpc::ConfigError("sweep: config needs [sweep] l_values");

  const fs::path dir = output_root() / cfg.output;
  fs::create_directories(dir);
  std::ofstream summary(dir / "summary.csv");
  summary << "l,E,res,mean_solve_ms,completed\n";

  int rc = 0;
  for (const int l : cfg.sweep_l) {
    swmpc::SwitchedModel model = make_model(cfg.model);
    const swmpc::GridSpec grid{cfg.N, cfg.dt, cfg.solver.substeps};
    if (cfg.terminal_set == "srci") {
      const swmpc::SrciResult res = attach_srci_terminal_set(
          model, cfg.dt, cfg.solver.substeps, l, cfg.srci_max_iter, cfg.srci_max_rows);
      if (!res.converged)
        throw swmpc::NumericalError("sweep: terminal set for l=" + std::to_string(l) +
                                    " did not converge");
    }
    const Eigen::VectorXd x0 = cfg.x0 ? *cfg.x0 : default_x0(model);
    const swmpc::ClosedLoopTrace trace =
        swmpc::run_closed_loop(model, grid, l, x0, cfg.steps, cfg.solver);
    const fs::path cell = dir / ("l" + std::to_string(l));
    const int cell_rc =
        emit_run(trace, cell, cfg.model + " l=" + std::to_string(l));
    rc = std::max(rc, cell_rc);

    double t_total = 0.0;
    for (const auto& d : trace.diag) t_total += d.t_nlp1 + d.t_sur + d.t_nlp2;
    const double n = trace.diag.empty() ? 1.0 : static_cast<double>(trace.diag.size());
    summary << l << "," << g17(trace.E) << "," << g17(trace.res) << ","
            << g17(1e3 * t_total / n) << "," << (trace.completed ? 1 : 0) << "\n";
  }
  std::cout << "sweep summary: " << (dir / "summary.csv").string() << "\n";
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model predictive control of switched nonlinear systems with minimum "
               "dwell-time constraints"};
  app.require_subcommand(1);

  auto* ex1 = app.add_subcommand("example1", "Closed-loop run of the switched linear "
                                             "regulator benchmark");
  int ex1_l = 1;
  int ex1_steps = 50;
  std::string ex1_terminal = "on";
  ex1->add_option("--l", ex1_l, "Dwell-time block length")->required();
  ex1->add_option("--steps", ex1_steps, "Closed-loop samples");
  ex1->add_option("--terminal-set", ex1_terminal, "on|off")
      ->check(CLI::IsMember({"on", "off"}));

  auto* ex2 = app.add_subcommand("example2", "Closed-loop run of the needle steering "
                                             "benchmark");
  int ex2_l = 1;
  double ex2_seconds = 8.0;
  ex2->add_option("--l", ex2_l, "Dwell-time block length")->required();
  ex2->add_option("--horizon-seconds", ex2_seconds, "Simulated duration");

  auto* srci = app.add_subcommand("srci", "Compute the switch-robust control-invariant "
                                          "terminal set");
  std::string srci_config;
  srci->add_option("--config", srci_config, "Config file")->required();

  auto* round = app.add_subcommand("round", "Sum-up round a relaxed plan CSV");
  std::string round_in;
  int round_l = 1, round_Q = 2;
  double round_dt = 0.1;
  round->add_option("--in", round_in, "Relaxed plan CSV (m, p1..pQ)")->required();
  round->add_option("--l", round_l, "Block length")->required();
  round->add_option("--dt", round_dt, "Grid interval")->required();
  round->add_option("--Q", round_Q, "Number of modes")->required();

  auto* oracle = app.add_subcommand("oracle", "Exhaustive plan enumeration on a small "
                                              "instance");
  std::string oracle_config;
  oracle->add_option("--config", oracle_config, "Config file")->required();

  auto* sweep = app.add_subcommand("sweep", "Closed-loop runs over a grid of l values");
  std::string sweep_config;
  sweep->add_option("--config", sweep_config, "Config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(ex1))
      return cmd_example("example1", ex1_l, ex1_steps, ex1_terminal == "on",
                         swmpc::SolverOptions{}, "example1_l" + std::to_string(ex1_l));
    if (app.got_subcommand(ex2)) {
      const int steps = static_cast<int>(std::lround(ex2_seconds / 0.1));
      if (steps < 1) throw swmpc::ConfigError("example2: horizon too short");
      return cmd_example("example2", ex2_l, steps, false, swmpc::SolverOptions{},
                         "example2_l" + std::to_string(ex2_l));
    }
    if (app.got_subcommand(srci)) return cmd_srci(srci_config);
    if (app.got_subcommand(round)) return cmd_round(round_in, round_l, round_dt, round_Q);
    if (app.got_subcommand(oracle)) return cmd_oracle(oracle_config);
    if (app.got_subcommand(sweep)) return cmd_sweep(sweep_config);
    return 2;
  } catch (const swmpc::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const swmpc::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 3;
  }
}
