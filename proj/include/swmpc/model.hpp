#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "swmpc/errors.hpp"
#include "swmpc/polytope.hpp"

namespace swmpc {

/// Point on the unit simplex over the Q modes. Binary combinations are the
/// vertices e^j.
class ConvexCombination {
public:
  explicit ConvexCombination(Eigen::VectorXd w) : w_(std::move(w)) {
    if (w_.size() < 1) throw InputError("ConvexCombination: empty weight vector");
    if (std::abs(w_.sum() - 1.0) > 1e-10)
      throw InputError("ConvexCombination: weights must sum to 1");
    if ((w_.array() < -1e-12).any() || (w_.array() > 1.0 + 1e-12).any())
      throw InputError("ConvexCombination: weights must lie in [0, 1]");
  }

  static ConvexCombination uniform(int Q) {
    return ConvexCombination(Eigen::VectorXd::Constant(Q, 1.0 / Q));
  }

  static ConvexCombination vertex(int Q, int j) {
    if (j < 0 || j >= Q) throw InputError("ConvexCombination::vertex: index out of range");
    Eigen::VectorXd w = Eigen::VectorXd::Zero(Q);
    w(j) = 1.0;
    return ConvexCombination(std::move(w));
  }

  const Eigen::VectorXd& weights() const { return w_; }
  int size() const { return static_cast<int>(w_.size()); }

  bool is_binary(double tol = 1e-9) const {
    int ones = 0;
    for (int j = 0; j < size(); ++j) {
      if (std::abs(w_(j) - 1.0) <= tol)
        ++ones;
      else if (std::abs(w_(j)) > tol)
        return false;
    }
    return ones == 1;
  }

  int vertex_index() const {
    int j = 0;
    w_.maxCoeff(&j);
    return j;
  }

private:
  Eigen::VectorXd w_;
};

using VectorFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>;
using MatrixFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>;
using ScalarFn = std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

/// One mode's vector field with optional analytic Jacobians (finite
/// differences are used downstream when absent).
struct ModeDynamics {
  VectorFn f;
  MatrixFn jac_x;
  MatrixFn jac_u;
};

/// Per-mode running cost with optional derivatives. The Hessian callbacks
/// supply the Gauss-Newton blocks used by the SQP.
struct StageCost {
  ScalarFn value;
  VectorFn grad_x;
  VectorFn grad_u;
  MatrixFn hess_xx;
  MatrixFn hess_uu;
};

struct TerminalCost {
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> hess;
};

/// Stacked general inequalities g(x,u) <= 0 with `count` rows.
struct PathConstraints {
  int count{0};
  VectorFn g;
  MatrixFn jac_x;
  MatrixFn jac_u;
};

struct SwitchedModel {
  std::string name;
  int n_x{0};
  int n_u{0};
  std::vector<ModeDynamics> dynamics;
  std::vector<StageCost> running_cost;
  TerminalCost terminal_cost;
  Eigen::VectorXd x_lower, x_upper;
  Eigen::VectorXd u_lower, u_upper;
  PathConstraints path;
  std::optional<Polytope> terminal_set;
  Eigen::VectorXd target_state;

  int num_modes() const { return static_cast<int>(dynamics.size()); }
};

inline void validate_model(const SwitchedModel& m) {
  if (m.num_modes() < 2) throw InputError("SwitchedModel: at least two modes required");
  if (m.running_cost.size() != m.dynamics.size())
    throw InputError("SwitchedModel: running_cost must have one entry per mode");
  if (m.n_x < 1 || m.n_u < 0) throw InputError("SwitchedModel: bad dimensions");
  if (m.x_lower.size() != m.n_x || m.x_upper.size() != m.n_x)
    throw InputError("SwitchedModel: state box size mismatch");
  if (m.u_lower.size() != m.n_u || m.u_upper.size() != m.n_u)
    throw InputError("SwitchedModel: input box size mismatch");
  if (((m.u_upper - m.u_lower).array() < 0).any())
    throw InputError("SwitchedModel: input box lower exceeds upper");
  for (const auto& dyn : m.dynamics)
    if (!dyn.f) throw InputError("SwitchedModel: every mode needs a vector field");
  for (const auto& cost : m.running_cost)
    if (!cost.value) throw InputError("SwitchedModel: every mode needs a running cost");
  if (!m.terminal_cost.value) throw InputError("SwitchedModel: terminal cost required");
}

/// Convexified vector field sum_j b^j f_j(x, u).
inline Eigen::VectorXd eval_convexified(const SwitchedModel& model, const Eigen::VectorXd& x,
                                        const Eigen::VectorXd& u, const ConvexCombination& b) {
  if (x.size() != model.n_x || u.size() != model.n_u)
    throw InputError("eval_convexified: state or input dimension mismatch");
  if (b.size() != model.num_modes())
    throw InputError("eval_convexified: weight count does not match mode count");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(model.n_x);
  for (int j = 0; j < model.num_modes(); ++j) {
    const double w = b.weights()(j);
    if (w != 0.0) out += w * model.dynamics[j].f(x, u);
  }
  return out;
}

namespace detail {

inline constexpr double kFdStep = 1e-6;

inline Eigen::MatrixXd fd_jac_x(const VectorFn& f, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& u) {
  const Eigen::VectorXd f0 = f(x, u);
  Eigen::MatrixXd J(f0.size(), x.size());
  Eigen::VectorXd xp = x;
  for (int k = 0; k < x.size(); ++k) {
    xp(k) += kFdStep;
    J.col(k) = (f(xp, u) - f0) / kFdStep;
    xp(k) = x(k);
  }
  return J;
}

inline Eigen::MatrixXd fd_jac_u(const VectorFn& f, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& u) {
  const Eigen::VectorXd f0 = f(x, u);
  Eigen::MatrixXd J(f0.size(), u.size());
  Eigen::VectorXd up = u;
  for (int k = 0; k < u.size(); ++k) {
    up(k) += kFdStep;
    J.col(k) = (f(x, up) - f0) / kFdStep;
    up(k) = u(k);
  }
  return J;
}

}  // namespace detail

/// d(eval_convexified)/dx = sum_j b^j A_j(x,u).
inline Eigen::MatrixXd convexified_jac_x(const SwitchedModel& model, const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& u, const ConvexCombination& b) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(model.n_x, model.n_x);
  for (int j = 0; j < model.num_modes(); ++j) {
    const double w = b.weights()(j);
    if (w == 0.0) continue;
    const auto& dyn = model.dynamics[j];
    J += w * (dyn.jac_x ? dyn.jac_x(x, u) : detail::fd_jac_x(dyn.f, x, u));
  }
  return J;
}

/// d(eval_convexified)/du = sum_j b^j B_j(x,u).
inline Eigen::MatrixXd convexified_jac_u(const SwitchedModel& model, const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& u, const ConvexCombination& b) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(model.n_x, model.n_u);
  if (model.n_u == 0) return J;
  for (int j = 0; j < model.num_modes(); ++j) {
    const double w = b.weights()(j);
    if (w == 0.0) continue;
    const auto& dyn = model.dynamics[j];
    J += w * (dyn.jac_u ? dyn.jac_u(x, u) : detail::fd_jac_u(dyn.f, x, u));
  }
  return J;
}

/// d(eval_convexified)/db: column j holds f_j(x,u).
inline Eigen::MatrixXd mode_tangents(const SwitchedModel& model, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& u) {
  Eigen::MatrixXd F(model.n_x, model.num_modes());
  for (int j = 0; j < model.num_modes(); ++j) F.col(j) = model.dynamics[j].f(x, u);
  return F;
}

/// Two-mode autonomous planar system with a quadratic regulation cost.
inline SwitchedModel builtin_example1() {
  SwitchedModel m;
  m.name = "example1";
  m.n_x = 2;
  m.n_u = 0;

  Eigen::Matrix2d A1, A2;
  A1 << -5.0, -3.0, 5.0, -1.0;
  A2 << -1.0, 5.0, -3.0, -5.0;
  for (const Eigen::Matrix2d& A : {A1, A2}) {
    ModeDynamics dyn;
    dyn.f = [A](const Eigen::VectorXd& x, const Eigen::VectorXd&) -> Eigen::VectorXd {
      return A * x;
    };
    dyn.jac_x = [A](const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::MatrixXd {
      return A;
    };
    dyn.jac_u = [](const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::MatrixXd {
      return Eigen::MatrixXd::Zero(2, 0);
    };
    m.dynamics.push_back(std::move(dyn));
  }

  StageCost cost;
  cost.value = [](const Eigen::VectorXd& x, const Eigen::VectorXd&) { return x.squaredNorm(); };
  cost.grad_x = [](const Eigen::VectorXd& x, const Eigen::VectorXd&) -> Eigen::VectorXd {
    return 2.0 * x;
  };
  cost.grad_u = [](const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::VectorXd {
    return Eigen::VectorXd::Zero(0);
  };
  cost.hess_xx = [](const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::MatrixXd {
    return 2.0 * Eigen::MatrixXd::Identity(2, 2);
  };
  cost.hess_uu = [](const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::MatrixXd {
    return Eigen::MatrixXd::Zero(0, 0);
  };
  m.running_cost = {cost, cost};

  m.terminal_cost.value = [](const Eigen::VectorXd& x) { return 10.0 * x.squaredNorm(); };
  m.terminal_cost.grad = [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return 20.0 * x; };
  m.terminal_cost.hess = [](const Eigen::VectorXd&) -> Eigen::MatrixXd {
    return 20.0 * Eigen::MatrixXd::Identity(2, 2);
  };

  m.x_lower = Eigen::Vector2d(-1.0, -0.05);
  m.x_upper = Eigen::Vector2d(0.05, 1.0);
  m.u_lower = Eigen::VectorXd(0);
  m.u_upper = Eigen::VectorXd(0);
  m.target_state = Eigen::Vector2d::Zero();
  return m;
}

/// Bevel-tip needle: insertion kinematics in mode 1, in-place rotation in
/// mode 2, spherical obstacle avoidance, energy-weighted cost.
inline SwitchedModel builtin_example2() {
  constexpr double kappa = 0.22;
  SwitchedModel m;
  m.name = "example2";
  m.n_x = 6;
  m.n_u = 2;

  ModeDynamics insert;
  insert.f = [](const Eigen::VectorXd& x, const Eigen::VectorXd& u) -> Eigen::VectorXd {
    const double s4 = std::sin(x(3)), c4 = std::cos(x(3));
    const double s5 = std::sin(x(4)), c5 = std::cos(x(4));
    const double s6 = std::sin(x(5)), c6 = std::cos(x(5));
    Eigen::VectorXd dx(6);
    dx << s5 * u(0), -c5 * s4 * u(0), c4 * c5 * u(0), kappa * c6 / c5 * u(0),
        kappa * s6 * u(0), -kappa * c6 * (s5 / c5) * u(0);
    return dx;
  };
  insert.jac_x = [](const Eigen::VectorXd& x, const Eigen::VectorXd& u) -> Eigen::MatrixXd {
    const double s4 = std::sin(x(3)), c4 = std::cos(x(3));
    const double s5 = std::sin(x(4)), c5 = std::cos(x(4));
    const double s6 = std::sin(x(5)), c6 = std::cos(x(5));
    const double u1 = u(0);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(6, 6);
    J(0, 4) = c5 * u1;
    J(1, 3) = -c5 * c4 * u1;
    J(1, 4) = s5 * s4 * u1;
    J(2, 3) = -s4 * c5 * u1;
    J(2, 4) = -c4 * s5 * u1;
    J(3, 4) = kappa * c6 * s5 / (c5 * c5) * u1;
    J(3, 5) = -kappa * s6 / c5 * u1;
    J(4, 5) = kappa * c6 * u1;
    J(5, 4) = -kappa * c6 / (c5 * c5) * u1;
    J(5, 5) = kappa * s6 * (s5 / c5) * u1;
    return J;
  };
  insert.jac_u = [](const Eigen::VectorXd& x, const Eigen::VectorXd&) -> Eigen::MatrixXd {
    const double s4 = std::sin(x(3)), c4 = std::cos(x(3));
    const double s5 = std::sin(x(4)), c5 = std::cos(x(4));
    const double s6 = std::sin(x(5)), c6 = std::cos(x(5));
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(6, 2);
    J(0, 0) = s5;
    J(1, 0) = -c5 * s4;
    J(2, 0) = c4 * c5;
    J(3, 0) = kappa * c6 / c5;
    J(4, 0) = kappa * s6;
    J(5, 0) = -kappa * c6 * (s5 / c5);
    return J;
  };

  ModeDynamics rotate;
  rotate.f = [](const Eigen::VectorXd&, const Eigen::VectorXd& u) -> Eigen::VectorXd {
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(6);
    dx(5) = u(1);
    return dx;
  };
  rotate.jac_x = [](const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::MatrixXd {
    return Eigen::MatrixXd::Zero(6, 6);
  };
  rotate.jac_u = [](const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::MatrixXd {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(6, 2);
    J(5, 1) = 1.0;
    return J;
  };

  m.dynamics = {std::move(insert), std::move(rotate)};

  StageCost cost;
  cost.value = [](const Eigen::VectorXd&, const Eigen::VectorXd& u) {
    return 0.01 * u.squaredNorm();
  };
  cost.grad_x = [](const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::VectorXd {
    return Eigen::VectorXd::Zero(6);
  };
  cost.grad_u = [](const Eigen::VectorXd&, const Eigen::VectorXd& u) -> Eigen::VectorXd {
    return 0.02 * u;
  };
  cost.hess_xx = [](const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::MatrixXd {
    return Eigen::MatrixXd::Zero(6, 6);
  };
  cost.hess_uu = [](const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::MatrixXd {
    return 0.02 * Eigen::MatrixXd::Identity(2, 2);
  };
  m.running_cost = {cost, cost};

  Eigen::VectorXd xT(6);
  xT << -2.0, 3.5, 10.0, 0.0, 0.0, 0.0;
  m.terminal_cost.value = [xT](const Eigen::VectorXd& x) {
    return 10.0 * (x - xT).squaredNorm();
  };
  m.terminal_cost.grad = [xT](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return 20.0 * (x - xT);
  };
  m.terminal_cost.hess = [](const Eigen::VectorXd&) -> Eigen::MatrixXd {
    return 20.0 * Eigen::MatrixXd::Identity(6, 6);
  };

  const std::vector<Eigen::Vector3d> centers = {
      {0.0, 0.0, 5.0}, {1.0, 3.0, 7.0}, {-2.0, 0.0, 10.0}};
  constexpr double radius = 2.0;
  m.path.count = static_cast<int>(centers.size());
  m.path.g = [centers](const Eigen::VectorXd& x, const Eigen::VectorXd&) -> Eigen::VectorXd {
    Eigen::VectorXd r(centers.size());
    for (size_t i = 0; i < centers.size(); ++i)
      r(static_cast<int>(i)) = radius * radius - (x.head<3>() - centers[i]).squaredNorm();
    return r;
  };
  m.path.jac_x = [centers](const Eigen::VectorXd& x, const Eigen::VectorXd&) -> Eigen::MatrixXd {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(centers.size(), 6);
    for (size_t i = 0; i < centers.size(); ++i)
      J.row(static_cast<int>(i)).head<3>() = -2.0 * (x.head<3>() - centers[i]).transpose();
    return J;
  };
  m.path.jac_u = [](const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::MatrixXd {
    return Eigen::MatrixXd::Zero(3, 2);
  };

  const double inf = std::numeric_limits<double>::infinity();
  m.x_lower = Eigen::VectorXd::Constant(6, -inf);
  m.x_upper = Eigen::VectorXd::Constant(6, inf);
  m.u_lower = Eigen::Vector2d(0.0, -M_PI / 2.0);
  m.u_upper = Eigen::Vector2d(5.0, M_PI / 2.0);
  m.target_state = xT;
  return m;
}

}  // namespace swmpc
