#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef SWMPC_QP_TRACE
#include <cstdio>
#endif

#include "swmpc/errors.hpp"

namespace swmpc {

enum class QpStatus { optimal, max_iter, infeasible_start };

/// min 1/2 z'Hz + g'z  s.t.  A_eq z = b_eq,  A_in z <= b_in.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd A_in;
  Eigen::VectorXd b_in;
};

struct QpResult {
  QpStatus status{QpStatus::optimal};
  Eigen::VectorXd z;
  Eigen::VectorXd lambda_eq;
  Eigen::VectorXd lambda_in;
  std::vector<int> active_set;
  int iterations{0};
};

namespace detail {

/// Primal active-set method. H is factorized once (Cholesky, with an
/// escalating shift if needed); the working-set Schur complement
/// S = A_W H^{-1} A_W' is kept factorized across working-set changes with
/// O(w^2) updates (appended Cholesky rows on addition, Givens downdates on
/// removal), with the columns Y = H^{-1} A_W' cached.
class ActiveSetQp {
public:
  ActiveSetQp(const QpProblem& qp, double shift0 = 1e-8) : qp_(qp) {
    n_ = static_cast<int>(qp.H.rows());
    m_eq_ = static_cast<int>(qp.A_eq.rows());
    m_in_ = static_cast<int>(qp.A_in.rows());
    row_norm_ = qp.A_in.rowwise().norm();
    Eigen::MatrixXd H = qp.H;
    double shift = shift0;
    for (int attempt = 0; attempt < 8; ++attempt) {
      hfact_.compute(H);
      if (hfact_.info() == Eigen::Success) return;
      H.diagonal().array() += shift;
      shift_ += shift;
      shift *= 10.0;
    }
    throw NumericalError("qp: Hessian could not be made positive definite");
  }

  QpResult solve(const Eigen::VectorXd& z0, const std::vector<int>& warm_active) {
    QpResult res;
    res.z = z0;
    if (!start_feasible(z0)) {
      res.status = QpStatus::infeasible_start;
      return res;
    }

    init_working_set(z0, warm_active);

    const int max_iter = 200 + 10 * (n_ + m_in_);
    Eigen::VectorXd d, mu;
    int degen_streak = 0;
    bool at_ws_min = false;
    for (int it = 0; it < max_iter; ++it) {
      res.iterations = it + 1;
      compute_direction(res.z, d, mu);
#ifdef SWMPC_QP_TRACE
      if (it % 50 == 0)
        std::fprintf(stderr, "[qp] it=%4d act=%4zu |d|=%9.2e streak=%d\n", it, act_.size(),
                     d.lpNorm<Eigen::Infinity>(), degen_streak);
#endif

      // A streak of zero-length steps means the method is exchanging rows at
      // a degenerate vertex; switching to smallest-index (Bland) selection
      // breaks the cycle.
      const bool bland = degen_streak > 8;

      // After an unblocked full step the iterate minimizes over the working
      // set, so go straight to the multiplier test; the residual direction
      // is factorization noise and need not shrink below the tolerance.
      if (at_ws_min ||
          d.lpNorm<Eigen::Infinity>() <= 1e-11 * (1.0 + res.z.lpNorm<Eigen::Infinity>())) {
        int worst = -1;
        double worst_mu = -1e-9;
        for (size_t a = 0; a < act_.size(); ++a) {
          const double m = mu(m_eq_ + static_cast<int>(a));
          if (bland ? (m < -1e-9 && (worst < 0 || act_[a] < act_[static_cast<size_t>(worst)]))
                    : (m < worst_mu)) {
            worst_mu = m;
            worst = static_cast<int>(a);
          }
        }
        if (worst < 0) {
          finish(res, mu);
          return res;
        }
        remove_active(worst);
        ++degen_streak;
        at_ws_min = false;
        continue;
      }

      // Ratio test over inactive rows; ties go to the smallest row index.
      // The tie window is relative to the step so large row norms cannot
      // push the iterate measurably past a skipped blocker.
      double alpha = 1.0;
      int blocker = -1;
      const double dnorm = d.norm();
      for (int i = 0; i < m_in_; ++i) {
        if (in_working_[static_cast<size_t>(i)]) continue;
        const double ad = qp_.A_in.row(i).dot(d);
        if (ad <= 1e-13 * row_norm_(i) * dnorm) continue;
        const double gap = qp_.b_in(i) - qp_.A_in.row(i).dot(res.z);
        const double a = std::max(gap, 0.0) / ad;
        if (a < alpha * (1.0 - 1e-12) || (blocker < 0 && a <= alpha)) {
          alpha = a;
          blocker = i;
        }
      }
      res.z += alpha * d;
      at_ws_min = blocker < 0;
      if (alpha > 1e-12)
        degen_streak = 0;
      else
        ++degen_streak;
      if (blocker >= 0) add_active(blocker);
    }
    res.status = QpStatus::max_iter;
    finish(res, Eigen::VectorXd::Zero(m_eq_ + static_cast<int>(act_.size())));
    return res;
  }

private:
  bool start_feasible(const Eigen::VectorXd& z0) const {
    if (z0.size() != n_) throw InputError("qp: start point dimension mismatch");
    if (m_eq_ > 0 &&
        (qp_.A_eq * z0 - qp_.b_eq).lpNorm<Eigen::Infinity>() > 1e-7)
      return false;
    if (m_in_ > 0 && ((qp_.A_in * z0 - qp_.b_in).array() > 1e-7).any()) return false;
    return true;
  }

  void init_working_set(const Eigen::VectorXd& z0, const std::vector<int>& warm_active) {
    act_.clear();
    in_working_.assign(static_cast<size_t>(m_in_), false);
    Y_.resize(n_, m_eq_);
    S_.resize(m_eq_, m_eq_);
    for (int i = 0; i < m_eq_; ++i) Y_.col(i) = hfact_.solve(qp_.A_eq.row(i).transpose());
    if (m_eq_ > 0) S_ = qp_.A_eq * Y_;
    full_refactor();
    for (int i : warm_active) {
      if (i < 0 || i >= m_in_ || in_working_[static_cast<size_t>(i)]) continue;
      if (std::abs(qp_.A_in.row(i).dot(z0) - qp_.b_in(i)) > 1e-7) continue;
      try_add(i);
    }
    if (!warm_active.empty()) return;
    // A cold start with many rows tight at z0 (typical of the l1-lifted
    // feasible start, which lands exactly on every satisfied slack bound)
    // would otherwise spend one iteration per row activating them.
    for (int i = 0; i < m_in_; ++i) {
      if (m_eq_ + static_cast<int>(act_.size()) >= n_) break;
      if (in_working_[static_cast<size_t>(i)]) continue;
      if (std::abs(qp_.A_in.row(i).dot(z0) - qp_.b_in(i)) <=
          1e-10 * (1.0 + std::abs(qp_.b_in(i))))
        try_add(i);
    }
  }

  void full_refactor() {
    while (true) {
      const int w = static_cast<int>(S_.rows());
      if (w == 0) {
        L_.resize(0, 0);
        return;
      }
      Eigen::LLT<Eigen::MatrixXd> fact(S_);
      if (fact.info() == Eigen::Success) {
        L_ = fact.matrixL();
        return;
      }
      if (act_.empty())
        throw NumericalError("qp: working-set Schur complement not positive definite");
      in_working_[static_cast<size_t>(act_.back())] = false;
      act_.pop_back();
      rebuild_schur();
    }
  }

  void rebuild_schur() {
    const int w = m_eq_ + static_cast<int>(act_.size());
    Y_.resize(n_, w);
    for (int i = 0; i < m_eq_; ++i) Y_.col(i) = hfact_.solve(qp_.A_eq.row(i).transpose());
    for (size_t k = 0; k < act_.size(); ++k)
      Y_.col(m_eq_ + static_cast<int>(k)) =
          hfact_.solve(qp_.A_in.row(act_[k]).transpose());
    S_.resize(w, w);
    for (int i = 0; i < w; ++i) {
      const Eigen::VectorXd ai = i < m_eq_
                                     ? qp_.A_eq.row(i).transpose()
                                     : qp_.A_in.row(act_[static_cast<size_t>(i - m_eq_)])
                                           .transpose();
      for (int j = 0; j < w; ++j) S_(i, j) = ai.dot(Y_.col(j));
    }
    S_ = 0.5 * (S_ + S_.transpose()).eval();
  }

  Eigen::VectorXd s_solve(Eigen::VectorXd b) const {
    L_.triangularView<Eigen::Lower>().solveInPlace(b);
    L_.transpose().triangularView<Eigen::Upper>().solveInPlace(b);
    return b;
  }

  bool try_add(int row) {
    const Eigen::VectorXd a = qp_.A_in.row(row).transpose();
    const Eigen::VectorXd y = hfact_.solve(a);
    const double ay = a.dot(y);
    const int w = static_cast<int>(S_.rows());
    Eigen::VectorXd c, l;
    double pivot = ay;
    if (w > 0) {
      c = Y_.transpose() * a;
      l = c;
      L_.triangularView<Eigen::Lower>().solveInPlace(l);
      pivot -= l.squaredNorm();
    }
    // The Schur pivot measures independence of the candidate from the
    // working set in the H^{-1} metric; a near-zero pivot would leave S
    // close to singular, so reject and let the caller exchange instead.
    if (!(pivot > 1e-10 * std::max(ay, 1e-30))) return false;
    S_.conservativeResize(w + 1, w + 1);
    L_.conservativeResize(w + 1, w + 1);
    if (w > 0) {
      S_.topRightCorner(w, 1) = c;
      S_.bottomLeftCorner(1, w) = c.transpose();
      L_.bottomLeftCorner(1, w) = l.transpose();
      L_.topRightCorner(w, 1).setZero();
    }
    S_(w, w) = ay;
    L_(w, w) = std::sqrt(pivot);
    Y_.conservativeResize(Eigen::NoChange, w + 1);
    Y_.col(w) = y;
    act_.push_back(row);
    in_working_[static_cast<size_t>(row)] = true;
    return true;
  }

  void add_active(int row) {
    while (!try_add(row)) {
      // Dependent blocking row: exchange it against the working-set row that
      // carries the largest weight in its representation.
      const Eigen::VectorXd a = qp_.A_in.row(row).transpose();
      const Eigen::VectorXd coef = s_solve(Y_.transpose() * a);
      int drop = -1;
      double best = 1e-12;
      for (size_t k = 0; k < act_.size(); ++k) {
        const double c = std::abs(coef(m_eq_ + static_cast<int>(k)));
        if (c > best) {
          best = c;
          drop = static_cast<int>(k);
        }
      }
      if (drop < 0) {
        // The row depends on the equality rows alone; it cannot be held
        // active, so keep it out and let the ratio test limit the steps.
        return;
      }
      remove_active(drop);
    }
  }

  void remove_active(int pos) {
    const int col = m_eq_ + pos;
    const int w = static_cast<int>(S_.rows());
    in_working_[static_cast<size_t>(act_[static_cast<size_t>(pos)])] = false;
    act_.erase(act_.begin() + pos);
    Eigen::MatrixXd Ynew(n_, w - 1);
    Eigen::MatrixXd Snew(w - 1, w - 1);
    int cj = 0;
    for (int j = 0; j < w; ++j) {
      if (j == col) continue;
      Ynew.col(cj) = Y_.col(j);
      int ci = 0;
      for (int i = 0; i < w; ++i) {
        if (i == col) continue;
        Snew(ci, cj) = S_(i, j);
        ++ci;
      }
      ++cj;
    }
    Y_ = std::move(Ynew);
    S_ = std::move(Snew);

    // Downdate the Cholesky factor: dropping row `col` of L leaves a
    // lower-Hessenberg factor of the reduced complement; right Givens
    // rotations restore triangularity in O(w^2).
    Eigen::MatrixXd Lt(w - 1, w);
    Lt.topRows(col) = L_.topRows(col);
    Lt.bottomRows(w - 1 - col) = L_.bottomRows(w - 1 - col);
    bool ok = true;
    for (int k = col; k < w - 1; ++k) {
      const double a = Lt(k, k), b = Lt(k, k + 1);
      const double r = std::hypot(a, b);
      if (!(r > 0.0) || !std::isfinite(r)) {
        ok = false;
        break;
      }
      const double cth = a / r, sth = b / r;
      for (int i = k; i < w - 1; ++i) {
        const double vk = Lt(i, k), vk1 = Lt(i, k + 1);
        Lt(i, k) = cth * vk + sth * vk1;
        Lt(i, k + 1) = cth * vk1 - sth * vk;
      }
    }
    if (ok) {
      L_ = Lt.leftCols(w - 1);
    } else {
      rebuild_schur();
      full_refactor();
    }
  }

  // Solves for the step to the minimizer over the working-set manifold,
  // targeting A_w (z + d) = b_w rather than A_w d = 0 so that roundoff
  // accumulated on active rows is pulled back out instead of frozen in.
  // One pass of iterative refinement keeps the step accurate when the
  // working set grows large and the cached factors lose digits.
  void compute_direction(const Eigen::VectorXd& z, Eigen::VectorXd& d, Eigen::VectorXd& mu) {
    const Eigen::VectorXd r = -(qp_.H * z + qp_.g);
    const int w = static_cast<int>(S_.rows());
    if (w == 0) {
      d = hfact_.solve(r);
      const Eigen::VectorXd rd = r - qp_.H * d - shift_ * d;
      d += hfact_.solve(rd);
      mu.resize(0);
      return;
    }
    Eigen::VectorXd rhs(w);
    if (m_eq_ > 0) rhs.head(m_eq_) = qp_.b_eq - qp_.A_eq * z;
    for (size_t k = 0; k < act_.size(); ++k) {
      const int i = act_[k];
      rhs(m_eq_ + static_cast<int>(k)) = qp_.b_in(i) - qp_.A_in.row(i).dot(z);
    }
    d.setZero(n_);
    mu.setZero(w);
    for (int pass = 0; pass < 2; ++pass) {
      const Eigen::VectorXd rd = r - qp_.H * d - shift_ * d - at_mu(mu);
      const Eigen::VectorXd rw = rhs - aw_dot(d);
      const Eigen::VectorXd hd = hfact_.solve(rd);
      const Eigen::VectorXd dmu = s_solve(Y_.transpose() * rd - rw);
      mu += dmu;
      d += hd - Y_ * dmu;
    }
  }

  Eigen::VectorXd at_mu(const Eigen::VectorXd& mu) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n_);
    if (m_eq_ > 0) v = qp_.A_eq.transpose() * mu.head(m_eq_);
    for (size_t k = 0; k < act_.size(); ++k)
      v += mu(m_eq_ + static_cast<int>(k)) * qp_.A_in.row(act_[k]).transpose();
    return v;
  }

  Eigen::VectorXd aw_dot(const Eigen::VectorXd& d) const {
    Eigen::VectorXd v(m_eq_ + static_cast<int>(act_.size()));
    if (m_eq_ > 0) v.head(m_eq_) = qp_.A_eq * d;
    for (size_t k = 0; k < act_.size(); ++k)
      v(m_eq_ + static_cast<int>(k)) = qp_.A_in.row(act_[k]).dot(d);
    return v;
  }

  void finish(QpResult& res, const Eigen::VectorXd& mu) const {
    res.lambda_eq = mu.head(m_eq_);
    res.lambda_in = Eigen::VectorXd::Zero(m_in_);
    for (size_t k = 0; k < act_.size(); ++k)
      res.lambda_in(act_[k]) = std::max(0.0, mu(m_eq_ + static_cast<int>(k)));
    res.active_set = act_;
  }

  const QpProblem& qp_;
  Eigen::VectorXd row_norm_;
  double shift_{0.0};
  int n_{0}, m_eq_{0}, m_in_{0};
  Eigen::LLT<Eigen::MatrixXd> hfact_;
  Eigen::MatrixXd L_;
  Eigen::MatrixXd Y_;
  Eigen::MatrixXd S_;
  std::vector<int> act_;
  std::vector<bool> in_working_;
};

}  // namespace detail

/// Solve the QP from a feasible start. `warm_active` seeds the working set
/// with inequality rows known to be active.
inline QpResult solve_qp(const QpProblem& qp, const Eigen::VectorXd& z0,
                         const std::vector<int>& warm_active = {}) {
  if (qp.H.rows() != qp.H.cols() || qp.H.rows() != qp.g.size())
    throw InputError("qp: objective dimension mismatch");
  if (qp.A_eq.rows() != qp.b_eq.size() || qp.A_in.rows() != qp.b_in.size())
    throw InputError("qp: constraint dimension mismatch");
  if ((qp.A_eq.rows() > 0 && qp.A_eq.cols() != qp.H.rows()) ||
      (qp.A_in.rows() > 0 && qp.A_in.cols() != qp.H.rows()))
    throw InputError("qp: constraint column mismatch");
  detail::ActiveSetQp solver(qp);
  return solver.solve(z0, warm_active);
}

}  // namespace swmpc
