#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <utility>
#include <vector>

#include "swmpc/errors.hpp"
#include "swmpc/lp.hpp"

namespace swmpc {

/// Convex polyhedron in H-representation, {x : C x <= d}.
struct Polytope {
  Eigen::MatrixXd C;
  Eigen::VectorXd d;

  Polytope() = default;
  Polytope(Eigen::MatrixXd C_in, Eigen::VectorXd d_in)
      : C(std::move(C_in)), d(std::move(d_in)) {
    if (C.rows() != d.size()) throw InputError("Polytope: C rows must match d size");
  }

  int dim() const { return static_cast<int>(C.cols()); }
  int rows() const { return static_cast<int>(C.rows()); }

  /// Axis-aligned box [lo, hi].
  static Polytope box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    if (lo.size() != hi.size()) throw InputError("Polytope::box: bound size mismatch");
    const int n = static_cast<int>(lo.size());
    Eigen::MatrixXd C(2 * n, n);
    Eigen::VectorXd d(2 * n);
    C.topRows(n) = Eigen::MatrixXd::Identity(n, n);
    C.bottomRows(n) = -Eigen::MatrixXd::Identity(n, n);
    d.head(n) = hi;
    d.tail(n) = -lo;
    return {C, d};
  }

  bool contains(const Eigen::VectorXd& x, double tol = 1e-9) const {
    if (x.size() != dim()) throw InputError("Polytope::contains: point dimension mismatch");
    if (rows() == 0) return true;
    return ((C * x - d).array() <= tol).all();
  }
};

/// Scale every row to unit norm. Zero rows are dropped when vacuous and
/// collapsed to a canonical infeasible certificate otherwise.
inline Polytope canonicalize(const Polytope& P) {
  std::vector<int> keep;
  bool infeasible_row = false;
  for (int i = 0; i < P.rows(); ++i) {
    const double nrm = P.C.row(i).norm();
    if (nrm < 1e-14) {
      if (P.d(i) < -1e-14) infeasible_row = true;
      continue;
    }
    keep.push_back(i);
  }
  if (infeasible_row) {
    // 0^T x <= -1 in row form with a unit normal: x_1 <= -inf is not
    // representable, so emit {e_1 x <= -1, -e_1 x <= -1}.
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(2, P.dim());
    C(0, 0) = 1.0;
    C(1, 0) = -1.0;
    return {C, Eigen::VectorXd::Constant(2, -1.0)};
  }
  Polytope Q;
  Q.C.resize(static_cast<int>(keep.size()), P.dim());
  Q.d.resize(static_cast<int>(keep.size()));
  for (int k = 0; k < static_cast<int>(keep.size()); ++k) {
    const int i = keep[k];
    const double nrm = P.C.row(i).norm();
    Q.C.row(k) = P.C.row(i) / nrm;
    Q.d(k) = P.d(i) / nrm;
  }
  return Q;
}

namespace detail {

inline Polytope stack_rows(const Polytope& P, const Polytope& Q) {
  if (P.dim() != Q.dim() && P.rows() > 0 && Q.rows() > 0)
    throw InputError("intersect: dimension mismatch");
  Polytope R;
  const int n = P.rows() > 0 ? P.dim() : Q.dim();
  R.C.resize(P.rows() + Q.rows(), n);
  R.d.resize(P.rows() + Q.rows());
  if (P.rows() > 0) {
    R.C.topRows(P.rows()) = P.C;
    R.d.head(P.rows()) = P.d;
  }
  if (Q.rows() > 0) {
    R.C.bottomRows(Q.rows()) = Q.C;
    R.d.tail(Q.rows()) = Q.d;
  }
  return R;
}

}  // namespace detail

/// max_{x in P} a^T x, as an LP status plus value.
inline LpResult support(const Polytope& P, const Eigen::VectorXd& a) {
  LpResult r = lp_min(-a, P.C, P.d);
  r.value = -r.value;
  return r;
}

inline bool is_empty(const Polytope& P) {
  if (P.rows() == 0) return false;
  const LpResult r = lp_min(Eigen::VectorXd::Zero(P.dim()), P.C, P.d);
  return r.status == LpStatus::infeasible;
}

/// Drop rows implied by the others. Each candidate row i is tested by
/// maximizing C_i x over the remaining rows plus the relaxed copy
/// C_i x <= d_i + 1, which keeps that LP bounded in the test direction.
inline Polytope remove_redundancy(const Polytope& P_in, double tol = 1e-9) {
  Polytope P = canonicalize(P_in);
  if (P.rows() <= 1) return P;

  std::vector<bool> kept(static_cast<size_t>(P.rows()), true);
  for (int i = 0; i < P.rows(); ++i) {
    std::vector<int> others;
    for (int j = 0; j < P.rows(); ++j)
      if (j != i && kept[static_cast<size_t>(j)]) others.push_back(j);
    Eigen::MatrixXd C(static_cast<int>(others.size()) + 1, P.dim());
    Eigen::VectorXd d(static_cast<int>(others.size()) + 1);
    for (int k = 0; k < static_cast<int>(others.size()); ++k) {
      C.row(k) = P.C.row(others[k]);
      d(k) = P.d(others[k]);
    }
    C.row(C.rows() - 1) = P.C.row(i);
    d(d.size() - 1) = P.d(i) + 1.0;
    const LpResult r = lp_min(-P.C.row(i).transpose(), C, d);
    if (r.status == LpStatus::optimal && -r.value <= P.d(i) + tol)
      kept[static_cast<size_t>(i)] = false;
  }

  std::vector<int> keep;
  for (int i = 0; i < P.rows(); ++i)
    if (kept[static_cast<size_t>(i)]) keep.push_back(i);
  if (keep.empty()) {
    // Everything redundant means the set equals R^n intersected with one
    // sufficient row; retain the first row to keep a valid representation.
    keep.push_back(0);
  }
  Polytope Q;
  Q.C.resize(static_cast<int>(keep.size()), P.dim());
  Q.d.resize(static_cast<int>(keep.size()));
  for (int k = 0; k < static_cast<int>(keep.size()); ++k) {
    Q.C.row(k) = P.C.row(keep[k]);
    Q.d(k) = P.d(keep[k]);
  }
  return Q;
}

/// Intersection: stacked rows followed by a redundancy sweep.
inline Polytope intersect(const Polytope& P, const Polytope& Q) {
  return remove_redundancy(detail::stack_rows(P, Q));
}

/// P subseteq Q, decided with one support LP per row of Q.
inline bool contains_polytope(const Polytope& Q, const Polytope& P, double tol = 1e-9) {
  if (is_empty(P)) return true;
  for (int i = 0; i < Q.rows(); ++i) {
    const LpResult r = support(P, Q.C.row(i).transpose());
    if (r.status == LpStatus::unbounded) return false;
    if (r.status == LpStatus::optimal && r.value > Q.d(i) + tol) return false;
  }
  return true;
}

/// Pre-image {x : A x in P} = {x : (C A) x <= d}.
inline Polytope preimage(const Polytope& P, const Eigen::MatrixXd& A) {
  if (A.rows() != P.dim()) throw InputError("preimage: map output dimension mismatch");
  return {P.C * A, P.d};
}

/// Coordinate-wise bounds; requires the set to be bounded and nonempty.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> bounding_box(const Polytope& P) {
  const int n = P.dim();
  Eigen::VectorXd lo(n), hi(n);
  for (int k = 0; k < n; ++k) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    e(k) = 1.0;
    const LpResult rmax = support(P, e);
    const LpResult rmin = support(P, (-e).eval());
    if (rmax.status != LpStatus::optimal || rmin.status != LpStatus::optimal)
      throw NumericalError("bounding_box: polytope is empty or unbounded");
    hi(k) = rmax.value;
    lo(k) = -rmin.value;
  }
  return {lo, hi};
}

}  // namespace swmpc
