#pragma once

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "swmpc/errors.hpp"
#include "swmpc/mpc.hpp"

namespace swmpc {

inline constexpr const char* kTraceHeader = "# switched-mpc trace v1";

namespace detail {

inline std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline SolveStatus status_from_string(const std::string& s) {
  if (s == "converged") return SolveStatus::converged;
  if (s == "max-iter") return SolveStatus::max_iter;
  if (s == "infeasible") return SolveStatus::infeasible;
  throw InputError("trace: unknown solver status '" + s + "'");
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

}  // namespace detail

/// Columns: i, t, states, applied inputs, applied mode (0-based), the two
/// solver statuses and the applied objective. The final row carries the
/// terminal state with mode_index -1 and no solver entries.
inline void write_trace(std::ostream& os, const ClosedLoopTrace& trace) {
  using detail::g17;
  const int n = static_cast<int>(trace.inputs.rows());
  const int nx = static_cast<int>(trace.states.cols());
  const int nu = static_cast<int>(trace.inputs.cols());
  const int Q = static_cast<int>(trace.modes.cols());

  os << kTraceHeader << "\n";
  os << "# meta l=" << trace.l << " dt=" << g17(trace.dt) << " q=" << Q
     << " completed=" << (trace.completed ? 1 : 0) << " E=" << g17(trace.E)
     << " res=" << g17(trace.res) << "\n";
  os << "i,t";
  for (int c = 0; c < nx; ++c) os << ",x" << c + 1;
  for (int c = 0; c < nu; ++c) os << ",u" << c + 1;
  os << ",mode_index,status1,status2,objective\n";

  for (int i = 0; i <= n; ++i) {
    os << i << "," << g17(trace.times[static_cast<size_t>(i)]);
    for (int c = 0; c < nx; ++c) os << "," << g17(trace.states(i, c));
    for (int c = 0; c < nu; ++c) os << "," << (i < n ? g17(trace.inputs(i, c)) : "0");
    if (i < n) {
      os << "," << trace.mode_indices[static_cast<size_t>(i)] << ","
         << to_string(trace.status1[static_cast<size_t>(i)]) << ","
         << to_string(trace.status2[static_cast<size_t>(i)]) << ","
         << g17(trace.objective[static_cast<size_t>(i)]);
    } else {
      os << ",-1,none,none,0";
    }
    os << "\n";
  }
}

inline void write_trace(const std::string& path, const ClosedLoopTrace& trace) {
  std::ofstream os(path);
  if (!os) throw InputError("write_trace: cannot open '" + path + "'");
  write_trace(os, trace);
}

inline ClosedLoopTrace read_trace(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kTraceHeader)
    throw InputError("read_trace: missing trace header line");

  ClosedLoopTrace trace;
  int Q = 0;
  if (!std::getline(is, line) || line.rfind("# meta ", 0) != 0)
    throw InputError("read_trace: missing meta line");
  {
    std::stringstream ss(line.substr(7));
    std::string kv;
    while (ss >> kv) {
      const size_t eq = kv.find('=');
      if (eq == std::string::npos) throw InputError("read_trace: bad meta entry '" + kv + "'");
      const std::string key = kv.substr(0, eq);
      const std::string val = kv.substr(eq + 1);
      if (key == "l") trace.l = std::stoi(val);
      else if (key == "dt") trace.dt = std::stod(val);
      else if (key == "q") Q = std::stoi(val);
      else if (key == "completed") trace.completed = val == "1";
      else if (key == "E") trace.E = std::stod(val);
      else if (key == "res") trace.res = std::stod(val);
      else throw InputError("read_trace: unknown meta key '" + key + "'");
    }
  }

  if (!std::getline(is, line)) throw InputError("read_trace: missing column header");
  const std::vector<std::string> cols = detail::split_csv(line);
  int nx = 0, nu = 0;
  for (const auto& c : cols) {
    if (c.rfind('x', 0) == 0 && c.size() > 1 && std::isdigit(static_cast<unsigned char>(c[1])))
      ++nx;
    if (c.rfind('u', 0) == 0 && c.size() > 1 && std::isdigit(static_cast<unsigned char>(c[1])))
      ++nu;
  }
  if (static_cast<int>(cols.size()) != 2 + nx + nu + 4)
    throw InputError("read_trace: unexpected column layout");

  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto items = detail::split_csv(line);
    if (static_cast<int>(items.size()) != static_cast<int>(cols.size()))
      throw InputError("read_trace: row width mismatch");
    rows.push_back(std::move(items));
  }
  if (rows.empty()) throw InputError("read_trace: no data rows");

  const int n = static_cast<int>(rows.size()) - 1;
  trace.states.resize(n + 1, nx);
  trace.inputs.resize(n, nu);
  trace.modes = Eigen::MatrixXd::Zero(n, Q);
  for (int i = 0; i <= n; ++i) {
    const auto& r = rows[static_cast<size_t>(i)];
    trace.times.push_back(std::stod(r[1]));
    for (int c = 0; c < nx; ++c) trace.states(i, c) = std::stod(r[static_cast<size_t>(2 + c)]);
    if (i < n) {
      for (int c = 0; c < nu; ++c)
        trace.inputs(i, c) = std::stod(r[static_cast<size_t>(2 + nx + c)]);
      const int mode = std::stoi(r[static_cast<size_t>(2 + nx + nu)]);
      if (mode < 0 || mode >= Q) throw InputError("read_trace: mode index out of range");
      trace.mode_indices.push_back(mode);
      trace.modes(i, mode) = 1.0;
      trace.status1.push_back(detail::status_from_string(r[static_cast<size_t>(2 + nx + nu + 1)]));
      trace.status2.push_back(detail::status_from_string(r[static_cast<size_t>(2 + nx + nu + 2)]));
      trace.objective.push_back(std::stod(r[static_cast<size_t>(2 + nx + nu + 3)]));
    }
  }
  return trace;
}

inline ClosedLoopTrace read_trace(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("read_trace: cannot open '" + path + "'");
  return read_trace(is);
}

inline void write_metrics_summary(std::ostream& os, const ClosedLoopTrace& trace) {
  using detail::g17;
  double t1 = 0.0, ts = 0.0, t2 = 0.0;
  for (const auto& d : trace.diag) {
    t1 += d.t_nlp1;
    ts += d.t_sur;
    t2 += d.t_nlp2;
  }
  const double n = trace.diag.empty() ? 1.0 : static_cast<double>(trace.diag.size());
  os << "E = " << g17(trace.E) << "\n";
  os << "res = " << g17(trace.res) << "\n";
  os << "samples = " << trace.inputs.rows() << "\n";
  os << "mean_nlp1_seconds = " << g17(t1 / n) << "\n";
  os << "mean_sur_seconds = " << g17(ts / n) << "\n";
  os << "mean_nlp2_seconds = " << g17(t2 / n) << "\n";
  os << "mean_solve_seconds = " << g17((t1 + ts + t2) / n) << "\n";
  os << "completed = " << (trace.completed ? "true" : "false") << "\n";
  if (!trace.completed) os << "failure = " << trace.failure << "\n";
}

inline void write_metrics_summary(const std::string& path, const ClosedLoopTrace& trace) {
  std::ofstream os(path);
  if (!os) throw InputError("write_metrics_summary: cannot open '" + path + "'");
  write_metrics_summary(os, trace);
}

/// Standalone script that renders state/input/mode figures from every
/// trace CSV sitting next to it.
inline void write_plot_script(const std::string& path) {
  static const char* kScript = R"PY(#!/usr/bin/env python3
"""Render state, input and mode figures from switched-mpc trace CSVs."""
import csv
import glob
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "# switched-mpc trace v1":
            raise SystemExit(f"{path}: not a switched-mpc trace")
        fh.readline()  # meta
        rows = list(csv.DictReader(fh))
    return rows


def plot(path):
    rows = load(path)
    xcols = [c for c in rows[0] if c.startswith("x") and c[1:].isdigit()]
    ucols = [c for c in rows[0] if c.startswith("u") and c[1:].isdigit()]
    t = [float(r["t"]) for r in rows]
    base = os.path.splitext(path)[0]

    fig, axes = plt.subplots(3, 1, figsize=(7, 9), sharex=True)
    for c in xcols:
        axes[0].plot(t, [float(r[c]) for r in rows], label=c)
    axes[0].set_ylabel("states")
    axes[0].legend(loc="best")
    axes[0].grid(True, alpha=0.3)

    tn, un = t[:-1], rows[:-1]
    if ucols:
        for c in ucols:
            axes[1].step(tn, [float(r[c]) for r in un], where="post", label=c)
        axes[1].legend(loc="best")
    axes[1].set_ylabel("inputs")
    axes[1].grid(True, alpha=0.3)

    axes[2].step(tn, [int(r["mode_index"]) + 1 for r in un], where="post")
    axes[2].set_ylabel("mode")
    axes[2].set_xlabel("t [s]")
    axes[2].grid(True, alpha=0.3)

    fig.tight_layout()
    fig.savefig(base + ".png", dpi=150)
    plt.close(fig)
    print(f"wrote {base}.png")


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    targets = sys.argv[1:] or sorted(glob.glob(os.path.join(here, "*.csv")))
    if not targets:
        raise SystemExit("no trace CSVs found")
    for path in targets:
        plot(path)


if __name__ == "__main__":
    main()
)PY";
  std::ofstream os(path);
  if (!os) throw InputError("write_plot_script: cannot open '" + path + "'");
  os << kScript;
}

}  // namespace swmpc
