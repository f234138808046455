#pragma once

#include <Eigen/Dense>

#include <sstream>
#include <vector>

#include "swmpc/errors.hpp"
#include "swmpc/model.hpp"

namespace swmpc {

struct GridSpec {
  int N{1};
  double dt{0.1};
  int substeps{2};
};

inline void validate_grid(const GridSpec& g) {
  if (g.N < 1) throw InputError("GridSpec: N must be >= 1");
  if (!(g.dt > 0.0)) throw InputError("GridSpec: dt must be positive");
  if (g.substeps < 1) throw InputError("GridSpec: substeps must be >= 1");
}

namespace detail {

[[noreturn]] inline void throw_diverged(const Eigen::VectorXd& x) {
  std::ostringstream os;
  os << "integration diverged, state = [" << x.transpose() << "]";
  throw IntegrationDivergedError(os.str());
}

}  // namespace detail

/// Classical RK4 over one grid interval, split into `substeps` sub-intervals.
inline Eigen::VectorXd step(const SwitchedModel& model, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& u, const ConvexCombination& b, double dt,
                            int substeps = 2) {
  if (!(dt > 0.0) || substeps < 1) throw InputError("step: dt must be > 0, substeps >= 1");
  const double h = dt / substeps;
  Eigen::VectorXd xs = x;
  for (int s = 0; s < substeps; ++s) {
    const Eigen::VectorXd k1 = eval_convexified(model, xs, u, b);
    const Eigen::VectorXd k2 = eval_convexified(model, xs + 0.5 * h * k1, u, b);
    const Eigen::VectorXd k3 = eval_convexified(model, xs + 0.5 * h * k2, u, b);
    const Eigen::VectorXd k4 = eval_convexified(model, xs + h * k3, u, b);
    xs += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!xs.allFinite()) detail::throw_diverged(xs);
  }
  return xs;
}

struct StepSensitivities {
  Eigen::VectorXd x_next;
  Eigen::MatrixXd d_x;  // n_x x n_x
  Eigen::MatrixXd d_u;  // n_x x n_u
  Eigen::MatrixXd d_b;  // n_x x Q
};

/// RK4 step with exact forward sensitivities w.r.t. x, u and the mode
/// weights, obtained by differentiating each stage. The combined seed
/// W = [d/dx | d/du | d/db] is propagated at once; the direct term of a
/// stage is [0 | B(x_s) | F(x_s)] with F's columns the mode fields f_j.
inline StepSensitivities step_with_sensitivities(const SwitchedModel& model,
                                                 const Eigen::VectorXd& x,
                                                 const Eigen::VectorXd& u,
                                                 const ConvexCombination& b, double dt,
                                                 int substeps = 2) {
  if (!(dt > 0.0) || substeps < 1)
    throw InputError("step_with_sensitivities: dt must be > 0, substeps >= 1");
  const int n_x = model.n_x, n_u = model.n_u, Q = model.num_modes();
  const int n_w = n_x + n_u + Q;
  const double h = dt / substeps;

  Eigen::VectorXd xs = x;
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n_x, n_w);
  W.leftCols(n_x).setIdentity();

  const auto stage = [&](const Eigen::VectorXd& x_s, const Eigen::MatrixXd& W_s,
                         Eigen::VectorXd& k, Eigen::MatrixXd& dk) {
    k = eval_convexified(model, x_s, u, b);
    const Eigen::MatrixXd A = convexified_jac_x(model, x_s, u, b);
    dk = A * W_s;
    if (n_u > 0) dk.middleCols(n_x, n_u) += convexified_jac_u(model, x_s, u, b);
    dk.rightCols(Q) += mode_tangents(model, x_s, u);
  };

  Eigen::VectorXd k1, k2, k3, k4;
  Eigen::MatrixXd d1, d2, d3, d4;
  for (int s = 0; s < substeps; ++s) {
    stage(xs, W, k1, d1);
    stage(xs + 0.5 * h * k1, W + 0.5 * h * d1, k2, d2);
    stage(xs + 0.5 * h * k2, W + 0.5 * h * d2, k3, d3);
    stage(xs + h * k3, W + h * d3, k4, d4);
    xs += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    W += (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
    if (!xs.allFinite() || !W.allFinite()) detail::throw_diverged(xs);
  }

  StepSensitivities out;
  out.x_next = std::move(xs);
  out.d_x = W.leftCols(n_x);
  out.d_u = W.middleCols(n_x, n_u);
  out.d_b = W.rightCols(Q);
  return out;
}

/// Roll the dynamics over the grid; returns N+1 states including x0.
inline std::vector<Eigen::VectorXd> simulate(const SwitchedModel& model,
                                             const Eigen::VectorXd& x0,
                                             const std::vector<Eigen::VectorXd>& inputs,
                                             const std::vector<ConvexCombination>& modes,
                                             const GridSpec& grid) {
  validate_grid(grid);
  const size_t N = static_cast<size_t>(grid.N);
  if (modes.size() != N) throw InputError("simulate: modes must have length N");
  const bool no_inputs = model.n_u == 0 && inputs.empty();
  if (!no_inputs && inputs.size() != N)
    throw InputError("simulate: inputs must have length N");
  const Eigen::VectorXd u_empty(0);

  std::vector<Eigen::VectorXd> states;
  states.reserve(N + 1);
  states.push_back(x0);
  for (size_t k = 0; k < N; ++k) {
    const Eigen::VectorXd& u = no_inputs ? u_empty : inputs[k];
    states.push_back(step(model, states.back(), u, modes[k], grid.dt, grid.substeps));
  }
  return states;
}

}  // namespace swmpc
