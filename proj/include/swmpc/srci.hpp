#pragma once

#include <Eigen/Dense>

#include <random>
#include <vector>

#include "swmpc/errors.hpp"
#include "swmpc/polytope.hpp"

namespace swmpc {

/// Discrete-time switched linear system x+ = (A_j + B_j K_j) x. The A_j are
/// one-step maps over one sampling interval; autonomous systems leave B and K
/// empty.
struct SwitchedLinearSystem {
  std::vector<Eigen::MatrixXd> A;
  std::vector<Eigen::MatrixXd> B;
  std::vector<Eigen::MatrixXd> K;

  int num_modes() const { return static_cast<int>(A.size()); }
  int dim() const { return A.empty() ? 0 : static_cast<int>(A.front().rows()); }
};

inline void validate_system(const SwitchedLinearSystem& sys) {
  if (sys.A.empty()) throw InputError("SwitchedLinearSystem: needs at least one mode");
  const int n = sys.dim();
  for (const auto& A : sys.A)
    if (A.rows() != n || A.cols() != n)
      throw InputError("SwitchedLinearSystem: A matrices must be square and uniform");
  if (!sys.B.empty()) {
    if (sys.B.size() != sys.A.size() || sys.K.size() != sys.A.size())
      throw InputError("SwitchedLinearSystem: B present requires matching K per mode");
    for (size_t j = 0; j < sys.B.size(); ++j) {
      if (sys.B[j].rows() != n || sys.K[j].cols() != n ||
          sys.K[j].rows() != sys.B[j].cols())
        throw InputError("SwitchedLinearSystem: B/K dimension mismatch");
    }
  } else if (!sys.K.empty()) {
    throw InputError("SwitchedLinearSystem: K given without B");
  }
}

/// One-interval discrete map of xdot = A x under the same RK4 scheme the
/// transcription uses: per substep I + hA + h^2A^2/2 + h^3A^3/6 + h^4A^4/24,
/// composed over the substeps.
inline Eigen::MatrixXd rk4_discretize(const Eigen::MatrixXd& A_cont, double dt,
                                      int substeps = 2) {
  if (A_cont.rows() != A_cont.cols()) throw InputError("rk4_discretize: A must be square");
  if (!(dt > 0.0)) throw InputError("rk4_discretize: dt must be positive");
  if (substeps < 1) throw InputError("rk4_discretize: substeps must be >= 1");
  const int n = static_cast<int>(A_cont.rows());
  const double h = dt / substeps;
  const Eigen::MatrixXd hA = h * A_cont;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(n, n) + hA + hA * hA / 2.0 +
                        hA * hA * hA / 6.0 + hA * hA * hA * hA / 24.0;
  Eigen::MatrixXd out = Eigen::MatrixXd::Identity(n, n);
  for (int s = 0; s < substeps; ++s) out = phi * out;
  return out;
}

/// Closed-loop one-step map of mode j, A_j (+ B_j K_j when gains are given).
inline Eigen::MatrixXd mode_map(const SwitchedLinearSystem& sys, int j) {
  validate_system(sys);
  if (j < 0 || j >= sys.num_modes()) throw InputError("mode_map: mode index out of range");
  Eigen::MatrixXd A = sys.A[static_cast<size_t>(j)];
  if (!sys.B.empty()) A += sys.B[static_cast<size_t>(j)] * sys.K[static_cast<size_t>(j)];
  return A;
}

/// l-step predecessor set of P under mode j: {x : C (A_j)^l x <= d}.
inline Polytope pre_l(const Polytope& P, const SwitchedLinearSystem& sys, int j, int l) {
  if (l < 1) throw InputError("pre_l: l must be >= 1");
  const Eigen::MatrixXd A = mode_map(sys, j);
  if (P.dim() != A.rows()) throw InputError("pre_l: dimension mismatch");
  Eigen::MatrixXd Al = Eigen::MatrixXd::Identity(A.rows(), A.cols());
  for (int s = 0; s < l; ++s) Al = A * Al;
  return canonicalize(preimage(P, Al));
}

struct SrciResult {
  Polytope set;
  bool converged{false};
  int iterations{0};
  bool empty{false};
};

/// Fixed-point iteration X <- X intersect_j Pre^l(X; j) until set equality.
/// Iterates are nested by construction; an empty iterate is a degenerate
/// fixed point and is reported as such.
inline SrciResult compute_srci(const Polytope& X, const SwitchedLinearSystem& sys, int l,
                               int max_iter = 200, int max_rows = 5000) {
  validate_system(sys);
  if (l < 1) throw InputError("compute_srci: l must be >= 1");
  if (max_iter < 1) throw InputError("compute_srci: max_iter must be >= 1");

  SrciResult res;
  Polytope cur = remove_redundancy(X);
  for (int it = 1; it <= max_iter; ++it) {
    Polytope next = cur;
    for (int j = 0; j < sys.num_modes(); ++j)
      next = intersect(next, pre_l(cur, sys, j, l));
    res.iterations = it;
    if (is_empty(next)) {
      res.set = next;
      res.converged = true;
      res.empty = true;
      return res;
    }
    if (next.rows() > max_rows) {
      res.set = cur;
      res.converged = false;
      return res;
    }
    if (contains_polytope(next, cur)) {  // next superset of cur closes equality
      res.set = next;
      res.converged = true;
      return res;
    }
    cur = next;
  }
  res.set = cur;
  res.converged = false;
  return res;
}

/// Check Definition-2 invariance of Xf: exactly via Xf subseteq Pre^l(Xf; j)
/// for every mode, and empirically on sampled members.
inline bool verify_srci(const Polytope& Xf, const SwitchedLinearSystem& sys, int l,
                        int samples = 1000, unsigned seed = 0) {
  validate_system(sys);
  if (is_empty(Xf)) return true;

  for (int j = 0; j < sys.num_modes(); ++j)
    if (!contains_polytope(pre_l(Xf, sys, j, l), Xf)) return false;

  if (samples > 0) {
    Eigen::VectorXd lo, hi;
    try {
      std::tie(lo, hi) = bounding_box(Xf);
    } catch (const NumericalError&) {
      return true;  // unbounded set: the exact check above already decided
    }
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int n = Xf.dim();
    int found = 0;
    for (int attempt = 0; attempt < 100 * samples && found < samples; ++attempt) {
      Eigen::VectorXd x(n);
      for (int c = 0; c < n; ++c) x(c) = lo(c) + (hi(c) - lo(c)) * unit(rng);
      if (!Xf.contains(x)) continue;
      ++found;
      for (int j = 0; j < sys.num_modes(); ++j) {
        Eigen::VectorXd y = x;
        const Eigen::MatrixXd A = mode_map(sys, j);
        for (int s = 0; s < l; ++s) y = A * y;
        if (!Xf.contains(y, 1e-7)) return false;
      }
    }
  }
  return true;
}

}  // namespace swmpc
