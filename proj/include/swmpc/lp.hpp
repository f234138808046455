#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "swmpc/errors.hpp"

namespace swmpc {

enum class LpStatus { optimal, infeasible, unbounded };

struct LpResult {
  LpStatus status{LpStatus::optimal};
  double value{0.0};
  Eigen::VectorXd minimizer;
};

namespace detail {

// Dense two-phase tableau simplex with Bland's rule. Variables are split as
// x = xp - xn with slacks appended, so the tableau has 2n + m structural
// columns plus any phase-1 artificials. Deterministic by construction.
class SimplexTableau {
public:
  SimplexTableau(const Eigen::MatrixXd& C, const Eigen::VectorXd& d)
      : m_(static_cast<int>(C.rows())), n_(static_cast<int>(C.cols())) {
    n_struct_ = 2 * n_ + m_;
    tab_.resize(m_, n_struct_ + 1);
    for (int i = 0; i < m_; ++i) {
      const double sign = d(i) < 0.0 ? -1.0 : 1.0;
      tab_.block(i, 0, 1, n_) = sign * C.row(i);
      tab_.block(i, n_, 1, n_) = -sign * C.row(i);
      tab_.block(i, 2 * n_, 1, m_).setZero();
      tab_(i, 2 * n_ + i) = sign;
      tab_(i, n_struct_) = sign * d(i);
    }
    basis_.assign(m_, -1);
  }

  // Phase 1: find a basic feasible solution. Returns false when infeasible.
  bool phase1() {
    // Slacks with +1 coefficient give an initial basis; other rows need an
    // artificial column.
    std::vector<int> artificial_rows;
    for (int i = 0; i < m_; ++i) {
      if (tab_(i, 2 * n_ + i) > 0.5) {
        basis_[i] = 2 * n_ + i;
      } else {
        artificial_rows.push_back(i);
      }
    }
    if (artificial_rows.empty()) return true;

    const int n_art = static_cast<int>(artificial_rows.size());
    Eigen::MatrixXd ext(m_, n_struct_ + n_art + 1);
    ext.leftCols(n_struct_) = tab_.leftCols(n_struct_);
    ext.middleCols(n_struct_, n_art).setZero();
    ext.col(n_struct_ + n_art) = tab_.col(n_struct_);
    for (int a = 0; a < n_art; ++a) {
      ext(artificial_rows[a], n_struct_ + a) = 1.0;
      basis_[artificial_rows[a]] = n_struct_ + a;
    }
    tab_.swap(ext);

    Eigen::VectorXd cost = Eigen::VectorXd::Zero(n_struct_ + n_art);
    cost.tail(n_art).setOnes();
    if (!iterate(cost)) return false;  // phase-1 LP cannot be unbounded

    double art_value = 0.0;
    for (int i = 0; i < m_; ++i)
      if (basis_[i] >= n_struct_) art_value += tab_(i, cols() - 1);
    if (art_value > 1e-8) return false;

    // Pivot remaining zero-level artificials out of the basis when possible.
    for (int i = 0; i < m_; ++i) {
      if (basis_[i] < n_struct_) continue;
      int pivot_col = -1;
      for (int j = 0; j < n_struct_; ++j) {
        if (std::abs(tab_(i, j)) > 1e-9) { pivot_col = j; break; }
      }
      if (pivot_col >= 0) pivot(i, pivot_col);
      // Otherwise the row is redundant; the artificial stays basic at zero.
    }

    // Drop artificial columns.
    Eigen::MatrixXd trimmed(m_, n_struct_ + 1);
    trimmed.leftCols(n_struct_) = tab_.leftCols(n_struct_);
    trimmed.col(n_struct_) = tab_.col(cols() - 1);
    tab_.swap(trimmed);
    return true;
  }

  // Phase 2 with structural costs; returns false when unbounded.
  bool phase2(const Eigen::VectorXd& struct_cost) { return iterate(struct_cost); }

  Eigen::VectorXd extract_x() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n_);
    for (int i = 0; i < m_; ++i) {
      const int b = basis_[i];
      if (b < 0 || b >= 2 * n_) continue;
      const double v = tab_(i, cols() - 1);
      if (b < n_)
        x(b) += v;
      else
        x(b - n_) -= v;
    }
    return x;
  }

private:
  int cols() const { return static_cast<int>(tab_.cols()); }

  void pivot(int row, int col) {
    tab_.row(row) /= tab_(row, col);
    for (int i = 0; i < m_; ++i) {
      if (i == row) continue;
      const double f = tab_(i, col);
      if (f != 0.0) tab_.row(i) -= f * tab_.row(row);
    }
    basis_[row] = col;
  }

  // Bland's rule main loop over the given cost vector (artificials included
  // when present). Returns false on unboundedness.
  bool iterate(const Eigen::VectorXd& cost) {
    const int nc = cols() - 1;
    const long max_pivots = 200L + 50L * static_cast<long>(nc) * (m_ + 1);
    for (long it = 0; it < max_pivots; ++it) {
      // Reduced costs r_j = c_j - c_B^T B^{-1} A_j, computed from the tableau.
      Eigen::VectorXd y = Eigen::VectorXd::Zero(m_);
      for (int i = 0; i < m_; ++i) {
        const int b = basis_[i];
        y(i) = (b >= 0 && b < cost.size()) ? cost(b) : 0.0;
      }
      int enter = -1;
      for (int j = 0; j < nc; ++j) {
        const double cj = (j < cost.size()) ? cost(j) : 0.0;
        const double rj = cj - y.dot(tab_.col(j));
        if (rj < -1e-9) { enter = j; break; }  // Bland: smallest index
      }
      if (enter < 0) return true;

      int leave = -1;
      double best_ratio = 0.0;
      for (int i = 0; i < m_; ++i) {
        const double a = tab_(i, enter);
        if (a > 1e-11) {
          const double ratio = tab_(i, nc) / a;
          if (leave < 0 || ratio < best_ratio - 1e-12 ||
              (std::abs(ratio - best_ratio) <= 1e-12 && basis_[i] < basis_[leave])) {
            leave = i;
            best_ratio = ratio;
          }
        }
      }
      if (leave < 0) return false;
      pivot(leave, enter);
    }
    throw NumericalError("simplex: pivot limit exceeded");
  }

  int m_, n_, n_struct_;
  Eigen::MatrixXd tab_;
  std::vector<int> basis_;
};

}  // namespace detail

/// Minimize c^T x over the polyhedron {x : C x <= d}. Free variables, dense
/// two-phase simplex, Bland's rule throughout.
inline LpResult lp_min(const Eigen::VectorXd& c, const Eigen::MatrixXd& C,
                       const Eigen::VectorXd& d) {
  if (C.cols() != c.size() || C.rows() != d.size())
    throw InputError("lp_min: dimension mismatch");
  const int n = static_cast<int>(c.size());
  LpResult res;
  if (C.rows() == 0) {
    if (c.isZero(0.0)) {
      res.minimizer = Eigen::VectorXd::Zero(n);
      return res;
    }
    res.status = LpStatus::unbounded;
    return res;
  }

  detail::SimplexTableau tab(C, d);
  if (!tab.phase1()) {
    res.status = LpStatus::infeasible;
    return res;
  }
  Eigen::VectorXd cost = Eigen::VectorXd::Zero(2 * n + C.rows());
  cost.head(n) = c;
  cost.segment(n, n) = -c;
  if (!tab.phase2(cost)) {
    res.status = LpStatus::unbounded;
    return res;
  }
  res.minimizer = tab.extract_x();
  res.value = c.dot(res.minimizer);
  return res;
}

}  // namespace swmpc
