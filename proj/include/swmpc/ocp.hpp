#pragma once

#include <Eigen/Dense>

#include <cmath>
#ifdef SWMPC_SQP_TRACE
#include <cstdio>
#endif
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "swmpc/errors.hpp"
#include "swmpc/integrator.hpp"
#include "swmpc/mode_plan.hpp"
#include "swmpc/model.hpp"
#include "swmpc/polytope.hpp"
#include "swmpc/qp.hpp"

namespace swmpc {

struct SolverOptions {
  double tol_kkt{1e-6};
  int max_iter{100};
  double rho{1e4};
  bool soften{true};
  int substeps{2};
  double reg{1e-8};
  double tol_feas{1e-6};
};

enum class SolveStatus { converged, max_iter, infeasible };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::max_iter: return "max-iter";
    case SolveStatus::infeasible: return "infeasible";
  }
  return "unknown";
}

struct OcpSolution {
  Eigen::MatrixXd states;  // (N+1) x n_x
  Eigen::MatrixXd inputs;  // N x n_u
  ModePlan mode_blocks;
  double objective{0.0};
  /// Stationarity residual of the Lagrangian under the last QP multipliers,
  /// scaled by the objective gradient magnitude.
  double kkt_residual{std::numeric_limits<double>::infinity()};
  SolveStatus status{SolveStatus::max_iter};
  double constraint_violation{std::numeric_limits<double>::infinity()};
  int iterations{0};
};

enum class ModeDomain { relaxed, binary_fixed };

/// Move-blocked discretization of the parametric problem P_i(h, b_act).
/// `grid` holds the per-problem horizon h + (M-1) l; with h = l this is the
/// nominal M l.
struct BlockedOcp {
  const SwitchedModel* model{nullptr};
  GridSpec grid;
  int l{1};
  int M{1};
  int h{1};
  std::optional<ConvexCombination> fixed_first_block;
  Eigen::VectorXd initial_state;
  std::optional<Polytope> terminal_set;
  ModeDomain mode_domain{ModeDomain::relaxed};
};

/// Lay out the blocked problem over the nominal grid (N = M l intervals).
/// h < l shortens the first block, as in the shrinking-horizon phase.
inline BlockedOcp build(const SwitchedModel& model, const GridSpec& grid, int l, int h,
                        const std::optional<ConvexCombination>& b_act,
                        const Eigen::VectorXd& x0,
                        const std::optional<Polytope>& terminal_set = std::nullopt) {
  validate_model(model);
  validate_grid(grid);
  if (l < 1) throw ConfigError("build: l must be >= 1");
  if (grid.N % l != 0)
    throw ConfigError("build: block length l must divide the nominal horizon N");
  const int M = grid.N / l;
  if (h < 1 || h > l) throw ConfigError("build: require 1 <= h <= l");
  if (x0.size() != model.n_x) throw InputError("build: initial state dimension mismatch");
  if (b_act) {
    if (b_act->size() != model.num_modes())
      throw InputError("build: b_act mode count mismatch");
    if (!b_act->is_binary()) throw InputError("build: b_act must be binary");
  }
  if (terminal_set && terminal_set->dim() != model.n_x)
    throw InputError("build: terminal set dimension mismatch");

  BlockedOcp ocp;
  ocp.model = &model;
  ocp.grid = GridSpec{h + (M - 1) * l, grid.dt, grid.substeps};
  ocp.l = l;
  ocp.M = M;
  ocp.h = h;
  ocp.fixed_first_block = b_act;
  ocp.initial_state = x0;
  ocp.terminal_set = terminal_set;
  ocp.mode_domain = ModeDomain::relaxed;
  return ocp;
}

namespace detail {

inline Eigen::VectorXd fd_grad_x(const ScalarFn& f, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& u) {
  const double f0 = f(x, u);
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (int k = 0; k < x.size(); ++k) {
    xp(k) += kFdStep;
    g(k) = (f(xp, u) - f0) / kFdStep;
    xp(k) = x(k);
  }
  return g;
}

inline Eigen::VectorXd fd_grad_u(const ScalarFn& f, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& u) {
  const double f0 = f(x, u);
  Eigen::VectorXd g(u.size());
  Eigen::VectorXd up = u;
  for (int k = 0; k < u.size(); ++k) {
    up(k) += kFdStep;
    g(k) = (f(x, up) - f0) / kFdStep;
    up(k) = u(k);
  }
  return g;
}

/// Direct multiple-shooting SQP shared by NLP #1 (free mode blocks) and
/// NLP #2 (fixed plan). The decision vector stacks the shooting states
/// x_1..x_N, the inputs u_0..u_{N-1} and the free simplex blocks. The
/// shooting constraints enter the QP as equality rows linearized with the
/// integrator sensitivities; their nonlinear residuals join the softened
/// inequality rows in an l1 merit function.
class SqpSolver {
public:
  SqpSolver(const BlockedOcp& ocp, const SolverOptions& opts, bool free_modes)
      : ocp_(ocp), model_(*ocp.model), opts_(opts), free_modes_(free_modes) {
    N_ = ocp.grid.N;
    nx_ = model_.n_x;
    nu_ = model_.n_u;
    Q_ = model_.num_modes();
    M_ = ocp.M;
    m0_ = (free_modes_ && ocp.fixed_first_block) ? 1 : 0;
    n_free_blocks_ = free_modes_ ? M_ - m0_ : 0;
    nz_ = N_ * nx_ + N_ * nu_ + n_free_blocks_ * Q_;
    use_bfgs_ = missing_hessians();
  }

  OcpSolution run(const OcpSolution* warm, const ModePlan* fixed_plan) {
    init_iterate(warm, fixed_plan);

    OcpSolution sol;
    if (nu_ == 0 && n_free_blocks_ == 0) {
      // No inputs and no free blocks: the shooting constraints pin every
      // decision state, so the solve degenerates to a simulation plus cost
      // evaluation.
      rollout_states();
      Trial cur = evaluate(X_, U_, P_);
      if (!cur.ok) throw NumericalError("ocp: initial trajectory diverged");
      const SolveStatus st = cur.max_viol > opts_.tol_feas ? SolveStatus::infeasible
                                                           : SolveStatus::converged;
      finish(sol, cur, 0.0, st, 0);
      return sol;
    }

    Trial cur = evaluate(X_, U_, P_);
    if (!cur.ok) throw NumericalError("ocp: initial trajectory diverged");

    double kkt = std::numeric_limits<double>::infinity();
    SolveStatus status = SolveStatus::max_iter;
    std::vector<int> warm_active;
    Eigen::MatrixXd bfgs = Eigen::MatrixXd::Identity(nz_, nz_);
    Eigen::VectorXd g_prev;

    int it = 0;
    for (; it < opts_.max_iter; ++it) {
      Sensitivities sens = linearize(cur);
      Eigen::VectorXd g_z;
      Eigen::MatrixXd H_z;
      build_objective(cur, g_z, H_z);
      if (use_bfgs_) {
        if (g_prev.size() == nz_) bfgs_update(bfgs, last_step_, g_z - g_prev);
        H_z = bfgs;
      }
      g_prev = g_z;

      // Interior continuation on the free simplex variables: a log barrier,
      // seeded from the first gradient scale and decayed geometrically, keeps
      // the mode weights away from the vertices until the coupled input
      // variables carry curvature information of their own. Warm starts are
      // already near a vertex the previous solve selected; perturbing them
      // off it only to crawl back is pure loss, so the continuation runs on
      // cold starts alone.
      if (it == 0 && n_free_blocks_ > 0 && !warm_started_) {
        mu_scale_ = 1.0 + g_z.lpNorm<Eigen::Infinity>();
        mu_ = 0.01 * mu_scale_;
      } else if (mu_ > 0.0) {
        mu_ *= 0.2;
        if (mu_ < 1e-8 * mu_scale_) mu_ = 0.0;
      }
      add_barrier(g_z, H_z);
      cur.barrier = barrier_value(P_);

      QpProblem qp;
      std::vector<SoftRow> soft;
      assemble_qp(cur, sens, g_z, H_z, qp, soft);
      const Eigen::VectorXd z0 = feasible_start(cur, sens, soft,
                                                static_cast<int>(qp.g.size()));

      QpResult qpres = solve_qp(qp, z0, warm_active);
      if (qpres.status == QpStatus::infeasible_start) {
        status = SolveStatus::infeasible;
        break;
      }
      warm_active = qpres.active_set;

      const Eigen::VectorXd dz = qpres.z.head(nz_);
      if (!dz.allFinite()) throw NumericalError("ocp: search direction is not finite");
      // QP stationarity gives H dz + g = A'lambda over the active rows, so
      // H dz equals the Lagrangian gradient of the transcription at the
      // current iterate under the QP multipliers. This is the KKT residual
      // proper: it keeps contracting in the ill-conditioned tail where the
      // raw step norm merely plateaus. Scaling by the gradient magnitude
      // makes the tolerance meaningful across cost scales.
      kkt = (H_z * dz).lpNorm<Eigen::Infinity>() /
            (1.0 + g_z.lpNorm<Eigen::Infinity>());
      if (kkt <= opts_.tol_kkt) {
        if (mu_ > 0.0) {
          mu_ = 0.0;
          continue;
        }
        if (cur.defect_inf <= opts_.tol_feas) {
          status = cur.max_viol <= opts_.tol_feas ? SolveStatus::converged
                                                  : SolveStatus::infeasible;
          break;
        }
        // Shooting residuals are still above tolerance: fall through and keep
        // stepping; the equality-constrained steps contract them quadratically.
      }

      const double merit0 = cur.F + cur.barrier + opts_.rho * (cur.soft_l1 + cur.defect_l1);
      const double model1 = cur.F + cur.barrier + g_z.dot(dz) + 0.5 * dz.dot(H_z * dz) +
                            opts_.rho * qpres.z.tail(qpres.z.size() - nz_).sum();
      const double pred = merit0 - model1;
      if (pred <= 1e-11 * (1.0 + std::abs(merit0))) {
        if (mu_ > 0.0) {
          mu_ = 0.0;
          continue;
        }
        break;
      }

      const auto armijo = [&](const Trial& t, double a) {
        return t.ok && t.F + t.barrier + opts_.rho * (t.soft_l1 + t.defect_l1) <=
                           merit0 - 1e-4 * a * pred;
      };
      bool accepted = false;
      bool restored = false;
      double alpha = 1.0;
      std::vector<Eigen::VectorXd> Xs;
      Eigen::MatrixXd Us, Ps;
      Trial trial;
      while (alpha >= 1e-8) {
        trial = evaluate_step(dz, alpha);
        if (armijo(trial, alpha)) {
          accepted = true;
          break;
        }
        // Second-order correction: the l1 defect term grows quadratically
        // along the step and rejects step lengths whose input and mode
        // components are perfectly good (Maratos effect). Restore the
        // shooting constraints exactly by rolling the states forward from
        // the stepped inputs and blocks, and retest the same step length on
        // the true reduced merit before shortening it.
        step_candidate(dz, alpha, Xs, Us, Ps);
        bool ok = true;
        try {
          for (int k = 0; k < N_; ++k)
            Xs[static_cast<size_t>(k) + 1] =
                step(model_, Xs[static_cast<size_t>(k)], Us.row(k).transpose(),
                     row_comb(Ps, block_of(k)), ocp_.grid.dt, opts_.substeps);
        } catch (const IntegrationDivergedError&) {
          ok = false;
        }
        if (ok) {
          Trial tsoc = evaluate(Xs, Us, Ps);
          if (armijo(tsoc, alpha)) {
            accepted = true;
            restored = true;
            trial = std::move(tsoc);
            break;
          }
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        if (mu_ > 0.0) {
          mu_ = 0.0;
          continue;
        }
        break;
      }

      last_step_ = alpha * dz;
      if (restored) {
        for (int k = 1; k <= N_; ++k)
          last_step_.segment(sx(k), nx_) =
              Xs[static_cast<size_t>(k)] - X_[static_cast<size_t>(k)];
        X_ = std::move(Xs);
        U_ = std::move(Us);
        P_ = std::move(Ps);
      } else {
        apply_step(dz, alpha);
      }
      cur = trial;
#ifdef SWMPC_SQP_TRACE
      std::fprintf(stderr,
                   "[sqp] it=%3d mu=%9.2e kkt=%9.2e pred=%9.2e alpha=%7.1e F=%12.6f "
                   "soft=%9.2e defect=%9.2e qpit=%d\n",
                   it, mu_, kkt, pred, alpha, cur.F, cur.soft_l1, cur.defect_l1,
                   qpres.iterations);
#endif
    }

    finish(sol, cur, kkt, status, it);
    return sol;
  }

private:
  struct Trial {
    bool ok{false};
    double F{0.0};
    double soft_l1{0.0};
    double max_viol{0.0};
    double defect_l1{0.0};
    double defect_inf{0.0};
    double barrier{0.0};
    std::vector<Eigen::VectorXd> X;     // N+1 decision states, X[0] = x0
    std::vector<Eigen::VectorXd> gaps;  // N shooting residuals
  };

  struct Sensitivities {
    std::vector<Eigen::MatrixXd> A, B, C;  // per interval
  };

  struct SoftRow {
    Eigen::VectorXd a;   // row over the z variables
    double margin;       // rhs minus current value; negative when violated
  };

  bool missing_hessians() const {
    if (!model_.terminal_cost.hess) return true;
    for (const auto& c : model_.running_cost)
      if (!c.hess_xx || (nu_ > 0 && !c.hess_uu)) return true;
    return false;
  }

  int block_of(int k) const { return block_index(k, ocp_.h, ocp_.l); }

  // Offsets into the decision vector: states first (x_0 is data, not a
  // variable), then inputs, then the free simplex blocks.
  int sx(int k) const { return (k - 1) * nx_; }
  int su(int k) const { return N_ * nx_ + k * nu_; }
  int p_col(int m, int j) const { return N_ * (nx_ + nu_) + (m - m0_) * Q_ + j; }

  // Weights below this floor see a saturated barrier; without it the
  // curvature mu / p^2 would dominate the QP Hessian and wreck its
  // conditioning once a weight approaches zero.
  static constexpr double kBarrierFloor = 1e-4;

  double barrier_value(const Eigen::MatrixXd& P) const {
    if (mu_ <= 0.0 || n_free_blocks_ == 0) return 0.0;
    double s = 0.0;
    for (int m = m0_; m < M_; ++m)
      for (int j = 0; j < Q_; ++j) s += std::log(std::max(P(m, j), kBarrierFloor));
    return -mu_ * s;
  }

  void add_barrier(Eigen::VectorXd& g_z, Eigen::MatrixXd& H_z) const {
    if (mu_ <= 0.0 || n_free_blocks_ == 0) return;
    for (int m = m0_; m < M_; ++m) {
      for (int j = 0; j < Q_; ++j) {
        const double p = std::max(P_(m, j), kBarrierFloor);
        const int c = p_col(m, j);
        g_z(c) -= mu_ / p;
        H_z(c, c) += mu_ / (p * p);
      }
    }
  }

  ConvexCombination row_comb(const Eigen::MatrixXd& P, int m) const {
    Eigen::VectorXd w = P.row(m).transpose().cwiseMax(0.0).cwiseMin(1.0);
    return ConvexCombination(w / w.sum());
  }

  void init_iterate(const OcpSolution* warm, const ModePlan* fixed_plan) {
    warm_started_ = warm != nullptr;
    X_.assign(static_cast<size_t>(N_) + 1, ocp_.initial_state);
    U_ = Eigen::MatrixXd::Zero(N_, nu_);
    for (int c = 0; c < nu_; ++c) {
      double v = 0.0;
      if (std::isfinite(model_.u_lower(c))) v = std::max(v, model_.u_lower(c));
      if (std::isfinite(model_.u_upper(c))) v = std::min(v, model_.u_upper(c));
      U_.col(c).setConstant(v);
    }
    if (fixed_plan) {
      P_ = fixed_plan->blocks;
    } else {
      P_ = Eigen::MatrixXd::Constant(M_, Q_, 1.0 / Q_);
      if (ocp_.fixed_first_block) P_.row(0) = ocp_.fixed_first_block->weights().transpose();
    }
    if (warm) {
      if (warm->states.rows() == N_ + 1 && warm->states.cols() == nx_) {
        for (int k = 1; k <= N_; ++k) X_[static_cast<size_t>(k)] = warm->states.row(k).transpose();
      }
      if (warm->inputs.rows() == N_ && warm->inputs.cols() == nu_) {
        U_ = warm->inputs;
        for (int c = 0; c < nu_; ++c) {
          if (std::isfinite(model_.u_lower(c)))
            U_.col(c) = U_.col(c).cwiseMax(model_.u_lower(c));
          if (std::isfinite(model_.u_upper(c)))
            U_.col(c) = U_.col(c).cwiseMin(model_.u_upper(c));
        }
      }
      if (!fixed_plan && warm->mode_blocks.blocks.rows() == M_ &&
          warm->mode_blocks.blocks.cols() == Q_) {
        for (int m = m0_; m < M_; ++m) {
          Eigen::VectorXd w =
              warm->mode_blocks.blocks.row(m).transpose().cwiseMax(0.0).cwiseMin(1.0);
          const double s = w.sum();
          if (s > 1e-9) P_.row(m) = (w / s).transpose();
        }
      }
    }
    last_step_ = Eigen::VectorXd::Zero(nz_);
  }

  void rollout_states() {
    try {
      for (int k = 0; k < N_; ++k)
        X_[static_cast<size_t>(k) + 1] =
            step(model_, X_[static_cast<size_t>(k)], U_.row(k).transpose(),
                 row_comb(P_, block_of(k)), ocp_.grid.dt, opts_.substeps);
    } catch (const IntegrationDivergedError&) {
      throw NumericalError("ocp: initial trajectory diverged");
    }
  }

  Trial evaluate(const std::vector<Eigen::VectorXd>& X, const Eigen::MatrixXd& U,
                 const Eigen::MatrixXd& P) const {
    Trial t;
    t.X = X;
    t.gaps.reserve(static_cast<size_t>(N_));
    try {
      for (int k = 0; k < N_; ++k) {
        const ConvexCombination b = row_comb(P, block_of(k));
        const Eigen::VectorXd xn = step(model_, X[static_cast<size_t>(k)],
                                        U.row(k).transpose(), b, ocp_.grid.dt,
                                        opts_.substeps);
        t.gaps.push_back(xn - X[static_cast<size_t>(k) + 1]);
      }
    } catch (const IntegrationDivergedError&) {
      return t;
    }
    t.ok = true;

    double F = 0.0;
    for (int k = 0; k < N_; ++k) {
      const Eigen::VectorXd u = U.row(k).transpose();
      const int m = block_of(k);
      for (int j = 0; j < Q_; ++j) {
        const double w = P(m, j);
        if (w != 0.0)
          F += w * model_.running_cost[static_cast<size_t>(j)].value(
                       X[static_cast<size_t>(k)], u);
      }
    }
    F += model_.terminal_cost.value(X.back());
    t.F = F;

    for (const Eigen::VectorXd& gap : t.gaps) {
      t.defect_l1 += gap.lpNorm<1>();
      t.defect_inf = std::max(t.defect_inf, gap.lpNorm<Eigen::Infinity>());
    }

    double l1 = 0.0, worst = 0.0;
    const auto add = [&](double viol) {
      if (viol > 0.0) {
        l1 += viol;
        worst = std::max(worst, viol);
      }
    };
    for (int k = 1; k <= N_; ++k) {
      for (int c = 0; c < nx_; ++c) {
        const double v = X[static_cast<size_t>(k)](c);
        if (std::isfinite(model_.x_upper(c))) add(v - model_.x_upper(c));
        if (std::isfinite(model_.x_lower(c))) add(model_.x_lower(c) - v);
      }
    }
    if (model_.path.count > 0) {
      for (int k = 0; k < N_; ++k) {
        const Eigen::VectorXd gv =
            model_.path.g(X[static_cast<size_t>(k)], U.row(k).transpose());
        for (int r = 0; r < gv.size(); ++r) add(gv(r));
      }
    }
    if (ocp_.terminal_set) {
      const Eigen::VectorXd r = ocp_.terminal_set->C * X.back() - ocp_.terminal_set->d;
      for (int i = 0; i < r.size(); ++i) add(r(i));
    }
    t.soft_l1 = l1;
    t.max_viol = std::max(worst, t.defect_inf);
    t.barrier = barrier_value(P);
    return t;
  }

  // Builds the candidate iterate for a step, projecting out the drift the
  // QP leaves behind: bounds and the simplex are hard rows the solver
  // honors only to its own tolerances, while the outer iterate must satisfy
  // them exactly (also for downstream warm starts). Evaluating and applying
  // share this path so the accepted trial is the stored iterate.
  void step_candidate(const Eigen::VectorXd& dz, double alpha,
                      std::vector<Eigen::VectorXd>& X, Eigen::MatrixXd& U,
                      Eigen::MatrixXd& P) const {
    X = X_;
    U = U_;
    P = P_;
    for (int k = 1; k <= N_; ++k)
      X[static_cast<size_t>(k)] += alpha * dz.segment(sx(k), nx_);
    for (int k = 0; k < N_; ++k)
      for (int c = 0; c < nu_; ++c) U(k, c) += alpha * dz(su(k) + c);
    for (int c = 0; c < nu_; ++c) {
      if (std::isfinite(model_.u_lower(c)))
        U.col(c) = U.col(c).cwiseMax(model_.u_lower(c));
      if (std::isfinite(model_.u_upper(c)))
        U.col(c) = U.col(c).cwiseMin(model_.u_upper(c));
    }
    if (free_modes_) {
      for (int m = m0_; m < M_; ++m) {
        for (int j = 0; j < Q_; ++j) P(m, j) += alpha * dz(p_col(m, j));
        Eigen::VectorXd w = P.row(m).transpose().cwiseMax(0.0).cwiseMin(1.0);
        const double s = w.sum();
        if (s > 0.0) P.row(m) = (w / s).transpose();
      }
    }
  }

  Trial evaluate_step(const Eigen::VectorXd& dz, double alpha) const {
    std::vector<Eigen::VectorXd> X;
    Eigen::MatrixXd U, P;
    step_candidate(dz, alpha, X, U, P);
    return evaluate(X, U, P);
  }

  void apply_step(const Eigen::VectorXd& dz, double alpha) {
    std::vector<Eigen::VectorXd> X;
    Eigen::MatrixXd U, P;
    step_candidate(dz, alpha, X, U, P);
    X_ = std::move(X);
    U_ = std::move(U);
    P_ = std::move(P);
  }

  Sensitivities linearize(const Trial& cur) const {
    Sensitivities s;
    s.A.resize(static_cast<size_t>(N_));
    s.B.resize(static_cast<size_t>(N_));
    s.C.resize(static_cast<size_t>(N_));
    for (int k = 0; k < N_; ++k) {
      const StepSensitivities st = step_with_sensitivities(
          model_, cur.X[static_cast<size_t>(k)], U_.row(k).transpose(),
          row_comb(P_, block_of(k)), ocp_.grid.dt, opts_.substeps);
      s.A[static_cast<size_t>(k)] = st.d_x;
      s.B[static_cast<size_t>(k)] = st.d_u;
      s.C[static_cast<size_t>(k)] = st.d_b;
    }
    return s;
  }

  void build_objective(const Trial& cur, Eigen::VectorXd& g_z, Eigen::MatrixXd& H_z) const {
    g_z = Eigen::VectorXd::Zero(nz_);
    H_z = Eigen::MatrixXd::Zero(nz_, nz_);

    for (int k = 0; k < N_; ++k) {
      const Eigen::VectorXd& x = cur.X[static_cast<size_t>(k)];
      const Eigen::VectorXd u = U_.row(k).transpose();
      const int m = block_of(k);

      Eigen::VectorXd gx = Eigen::VectorXd::Zero(nx_);
      Eigen::VectorXd gu = Eigen::VectorXd::Zero(nu_);
      Eigen::MatrixXd Hx = Eigen::MatrixXd::Zero(nx_, nx_);
      Eigen::MatrixXd Hu = Eigen::MatrixXd::Zero(nu_, nu_);
      for (int j = 0; j < Q_; ++j) {
        const double w = P_(m, j);
        const auto& c = model_.running_cost[static_cast<size_t>(j)];
        if (w != 0.0) {
          if (k > 0) gx += w * (c.grad_x ? c.grad_x(x, u) : fd_grad_x(c.value, x, u));
          if (nu_ > 0) gu += w * (c.grad_u ? c.grad_u(x, u) : fd_grad_u(c.value, x, u));
          if (!use_bfgs_) {
            if (k > 0) Hx += w * c.hess_xx(x, u);
            if (nu_ > 0) Hu += w * c.hess_uu(x, u);
          }
        }
        if (free_modes_ && m >= m0_) g_z(p_col(m, j)) += c.value(x, u);
      }

      if (k > 0) {
        g_z.segment(sx(k), nx_) += gx;
        if (!use_bfgs_) H_z.block(sx(k), sx(k), nx_, nx_) += Hx;
      }
      if (nu_ > 0) {
        g_z.segment(su(k), nu_) += gu;
        if (!use_bfgs_) H_z.block(su(k), su(k), nu_, nu_) += Hu;
      }
    }

    const Eigen::VectorXd& xN = cur.X.back();
    const Eigen::VectorXd gpsi = model_.terminal_cost.grad
                                     ? model_.terminal_cost.grad(xN)
                                     : fd_grad_x([this](const Eigen::VectorXd& x,
                                                        const Eigen::VectorXd&) {
                                         return model_.terminal_cost.value(x);
                                       }, xN, Eigen::VectorXd(0));
    g_z.segment(sx(N_), nx_) += gpsi;
    if (!use_bfgs_) H_z.block(sx(N_), sx(N_), nx_, nx_) += model_.terminal_cost.hess(xN);
  }

  void assemble_qp(const Trial& cur, const Sensitivities& sens, const Eigen::VectorXd& g_z,
                   const Eigen::MatrixXd& H_z, QpProblem& qp,
                   std::vector<SoftRow>& soft) const {
    std::vector<Eigen::VectorXd> hard_rows;
    std::vector<double> hard_rhs;

    for (int k = 0; k < N_; ++k) {
      for (int c = 0; c < nu_; ++c) {
        const double v = U_(k, c);
        if (std::isfinite(model_.u_upper(c))) {
          Eigen::VectorXd a = Eigen::VectorXd::Zero(nz_);
          a(su(k) + c) = 1.0;
          hard_rows.push_back(a);
          hard_rhs.push_back(model_.u_upper(c) - v);
        }
        if (std::isfinite(model_.u_lower(c))) {
          Eigen::VectorXd a = Eigen::VectorXd::Zero(nz_);
          a(su(k) + c) = -1.0;
          hard_rows.push_back(a);
          hard_rhs.push_back(v - model_.u_lower(c));
        }
      }
    }
    if (free_modes_) {
      // Lower bounds only: p <= 1 already follows from the simplex equality
      // and the siblings' lower bounds, and carrying the redundant rows
      // makes every simplex vertex degenerate for the active-set method.
      // While the barrier is active, a fraction-to-boundary margin keeps the
      // next iterate strictly inside the simplex.
      const double tau = mu_ > 0.0 ? 0.95 : 1.0;
      for (int m = m0_; m < M_; ++m) {
        for (int j = 0; j < Q_; ++j) {
          Eigen::VectorXd a = Eigen::VectorXd::Zero(nz_);
          a(p_col(m, j)) = -1.0;
          hard_rows.push_back(a);
          hard_rhs.push_back(tau * P_(m, j));
        }
      }
    }

    soft.clear();
    const auto push_soft = [&](const Eigen::VectorXd& a, double margin) {
      soft.push_back(SoftRow{a, margin});
    };
    for (int k = 1; k <= N_; ++k) {
      for (int c = 0; c < nx_; ++c) {
        const double v = cur.X[static_cast<size_t>(k)](c);
        if (std::isfinite(model_.x_upper(c))) {
          Eigen::VectorXd a = Eigen::VectorXd::Zero(nz_);
          a(sx(k) + c) = 1.0;
          push_soft(a, model_.x_upper(c) - v);
        }
        if (std::isfinite(model_.x_lower(c))) {
          Eigen::VectorXd a = Eigen::VectorXd::Zero(nz_);
          a(sx(k) + c) = -1.0;
          push_soft(a, v - model_.x_lower(c));
        }
      }
    }
    if (model_.path.count > 0) {
      for (int k = 0; k < N_; ++k) {
        const Eigen::VectorXd& x = cur.X[static_cast<size_t>(k)];
        const Eigen::VectorXd u = U_.row(k).transpose();
        const Eigen::VectorXd gv = model_.path.g(x, u);
        const Eigen::MatrixXd Jx = model_.path.jac_x ? model_.path.jac_x(x, u)
                                                     : fd_jac_x(model_.path.g, x, u);
        Eigen::MatrixXd Ju;
        if (nu_ > 0)
          Ju = model_.path.jac_u ? model_.path.jac_u(x, u) : fd_jac_u(model_.path.g, x, u);
        for (int r = 0; r < model_.path.count; ++r) {
          Eigen::VectorXd a = Eigen::VectorXd::Zero(nz_);
          if (k > 0) a.segment(sx(k), nx_) = Jx.row(r).transpose();
          if (nu_ > 0) a.segment(su(k), nu_) = Ju.row(r).transpose();
          push_soft(a, -gv(r));
        }
      }
    }
    if (ocp_.terminal_set) {
      const Eigen::VectorXd r = ocp_.terminal_set->C * cur.X.back() - ocp_.terminal_set->d;
      for (int i = 0; i < ocp_.terminal_set->rows(); ++i) {
        Eigen::VectorXd a = Eigen::VectorXd::Zero(nz_);
        a.segment(sx(N_), nx_) = ocp_.terminal_set->C.row(i).transpose();
        push_soft(a, -r(i));
      }
    }

    const int n_soft = static_cast<int>(soft.size());
    const int n_ext = nz_ + (opts_.soften ? n_soft : 0);

    qp.H = Eigen::MatrixXd::Zero(n_ext, n_ext);
    qp.H.topLeftCorner(nz_, nz_) = H_z;
    // The Gauss-Newton model leaves directions the costs never see with zero
    // curvature (mode weights always, states under input-only costs), which
    // would hand the QP a Hessian conditioned like 1/reg. Scale the shift
    // with the model so the factorizations stay trustworthy.
    qp.H.topLeftCorner(nz_, nz_).diagonal().array() +=
        std::max(opts_.reg, 1e-6 * (1.0 + H_z.diagonal().maxCoeff()));
    qp.g = Eigen::VectorXd::Zero(n_ext);
    qp.g.head(nz_) = g_z;
    if (opts_.soften) {
      qp.H.bottomRightCorner(n_soft, n_soft).setIdentity();
      qp.g.tail(n_soft).setConstant(opts_.rho);
    }

    const int n_eq = N_ * nx_ + n_free_blocks_;
    qp.A_eq = Eigen::MatrixXd::Zero(n_eq, n_ext);
    qp.b_eq = Eigen::VectorXd::Zero(n_eq);
    for (int k = 0; k < N_; ++k) {
      const int r0 = k * nx_;
      if (k > 0) qp.A_eq.block(r0, sx(k), nx_, nx_) = sens.A[static_cast<size_t>(k)];
      if (nu_ > 0) qp.A_eq.block(r0, su(k), nx_, nu_) = sens.B[static_cast<size_t>(k)];
      const int m = block_of(k);
      if (free_modes_ && m >= m0_)
        qp.A_eq.block(r0, p_col(m, 0), nx_, Q_) = sens.C[static_cast<size_t>(k)];
      qp.A_eq.block(r0, sx(k + 1), nx_, nx_) = -Eigen::MatrixXd::Identity(nx_, nx_);
      qp.b_eq.segment(r0, nx_) = -cur.gaps[static_cast<size_t>(k)];
    }
    if (free_modes_) {
      for (int m = m0_; m < M_; ++m) {
        const int r = N_ * nx_ + (m - m0_);
        for (int j = 0; j < Q_; ++j) qp.A_eq(r, p_col(m, j)) = 1.0;
        qp.b_eq(r) = 1.0 - P_.row(m).sum();
      }
    }

    const int n_hard = static_cast<int>(hard_rows.size());
    const int n_in = n_hard + n_soft + (opts_.soften ? n_soft : 0);
    qp.A_in = Eigen::MatrixXd::Zero(n_in, n_ext);
    qp.b_in = Eigen::VectorXd::Zero(n_in);
    int row = 0;
    for (int i = 0; i < n_hard; ++i, ++row) {
      qp.A_in.row(row).head(nz_) = hard_rows[static_cast<size_t>(i)].transpose();
      qp.b_in(row) = hard_rhs[static_cast<size_t>(i)];
    }
    for (int i = 0; i < n_soft; ++i, ++row) {
      qp.A_in.row(row).head(nz_) = soft[static_cast<size_t>(i)].a.transpose();
      if (opts_.soften) qp.A_in(row, nz_ + i) = -1.0;
      qp.b_in(row) = soft[static_cast<size_t>(i)].margin;
    }
    if (opts_.soften) {
      for (int i = 0; i < n_soft; ++i, ++row) qp.A_in(row, nz_ + i) = -1.0;
    }
  }

  // The active-set QP needs a feasible start. Rolling the linearized defects
  // forward with du = dp = 0 satisfies the shooting equalities exactly, and
  // each slack is then lifted to cover its row's residual at that point.
  Eigen::VectorXd feasible_start(const Trial& cur, const Sensitivities& sens,
                                 const std::vector<SoftRow>& soft, int n_ext) const {
    Eigen::VectorXd z0 = Eigen::VectorXd::Zero(n_ext);
    for (int k = 0; k < N_; ++k) {
      Eigen::VectorXd dxn = cur.gaps[static_cast<size_t>(k)];
      if (k > 0) dxn += sens.A[static_cast<size_t>(k)] * z0.segment(sx(k), nx_);
      z0.segment(sx(k + 1), nx_) = dxn;
    }
    if (opts_.soften) {
      for (size_t i = 0; i < soft.size(); ++i)
        z0(nz_ + static_cast<int>(i)) =
            std::max(0.0, soft[i].a.dot(z0.head(nz_)) - soft[i].margin);
    }
    return z0;
  }

  static void bfgs_update(Eigen::MatrixXd& B, const Eigen::VectorXd& s,
                          const Eigen::VectorXd& y) {
    if (s.size() == 0 || s.lpNorm<Eigen::Infinity>() < 1e-14) return;
    const Eigen::VectorXd Bs = B * s;
    const double sBs = s.dot(Bs);
    double sy = s.dot(y);
    Eigen::VectorXd yy = y;
    if (sy < 0.2 * sBs) {
      const double theta = 0.8 * sBs / (sBs - sy);
      yy = theta * y + (1.0 - theta) * Bs;
      sy = s.dot(yy);
    }
    if (sy <= 1e-14 || sBs <= 1e-14) return;
    B += yy * yy.transpose() / sy - Bs * Bs.transpose() / sBs;
  }

  void finish(OcpSolution& sol, const Trial& cur, double kkt, SolveStatus status,
              int iterations) const {
    sol.states.resize(N_ + 1, nx_);
    for (int k = 0; k <= N_; ++k) sol.states.row(k) = cur.X[static_cast<size_t>(k)].transpose();
    sol.inputs = U_;
    sol.mode_blocks = ModePlan{P_, ocp_.l, ocp_.h, ocp_.grid.dt};
    sol.objective = cur.F + opts_.rho * cur.soft_l1;
    sol.kkt_residual = kkt;
    sol.status = status;
    sol.constraint_violation = cur.max_viol;
    sol.iterations = iterations;
  }

  const BlockedOcp& ocp_;
  const SwitchedModel& model_;
  SolverOptions opts_;
  bool free_modes_;
  int N_{0}, nx_{0}, nu_{0}, Q_{0}, M_{0}, m0_{0}, n_free_blocks_{0}, nz_{0};
  bool use_bfgs_{false};
  bool warm_started_{false};
  double mu_{0.0};
  double mu_scale_{1.0};
  std::vector<Eigen::VectorXd> X_;
  Eigen::MatrixXd U_;
  Eigen::MatrixXd P_;
  Eigen::VectorXd last_step_;
};

}  // namespace detail

/// NLP #1: relaxed mode blocks on the simplex.
inline OcpSolution solve_relaxed(const BlockedOcp& ocp, const OcpSolution* warm_start,
                                 const SolverOptions& opts) {
  if (ocp.mode_domain != ModeDomain::relaxed)
    throw InputError("solve_relaxed: problem is not in relaxed mode domain");
  detail::SqpSolver solver(ocp, opts, true);
  return solver.run(warm_start, nullptr);
}

/// NLP #2: modes fixed to a binary plan. Autonomous models reduce to pure
/// simulation plus cost evaluation.
inline OcpSolution solve_fixed(const BlockedOcp& ocp, const ModePlan& plan,
                               const OcpSolution* warm_start, const SolverOptions& opts) {
  validate_plan(plan);
  if (!is_binary_plan(plan)) throw InputError("solve_fixed: plan must be binary");
  if (plan.num_blocks() != ocp.M || plan.num_modes() != ocp.model->num_modes() ||
      plan.l != ocp.l || plan.h != ocp.h)
    throw InputError("solve_fixed: plan does not match the problem blocking");
  if (ocp.fixed_first_block &&
      (plan.blocks.row(0).transpose() - ocp.fixed_first_block->weights())
              .lpNorm<Eigen::Infinity>() > 1e-9)
    throw InputError("solve_fixed: plan contradicts the fixed first block");
  detail::SqpSolver solver(ocp, opts, false);
  return solver.run(warm_start, &plan);
}

}  // namespace swmpc
