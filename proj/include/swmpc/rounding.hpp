#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "swmpc/errors.hpp"
#include "swmpc/mode_plan.hpp"

namespace swmpc {

/// Proposition-1 bound on the integrated mode deviation: l (Q-1) dt.
inline double error_bound(int l, int Q, double dt) {
  if (l < 1 || Q < 2 || !(dt > 0.0))
    throw InputError("error_bound: require l >= 1, Q >= 2, dt > 0");
  return static_cast<double>(l) * (Q - 1) * dt;
}

/// Block-wise sum-up rounding. Keeps per-mode accumulated mass closest to
/// the relaxed plan; ties go to the smallest mode index (absolute tolerance
/// 1e-12 on the scaled accumulators).
inline ModePlan sur_round(const ModePlan& relaxed) {
  validate_plan(relaxed);
  const int M = relaxed.num_blocks();
  const int Q = relaxed.num_modes();
  const double scale = relaxed.l * relaxed.dt;
  constexpr double tie_tol = 1e-12;

  ModePlan binary = relaxed;
  binary.blocks.setZero();
  Eigen::VectorXd hat_mass = Eigen::VectorXd::Zero(Q);
  Eigen::VectorXd bin_mass = Eigen::VectorXd::Zero(Q);
  for (int m = 0; m < M; ++m) {
    hat_mass += relaxed.blocks.row(m).transpose();
    const Eigen::VectorXd s = (hat_mass - bin_mass) * scale;
    int best = 0;
    for (int j = 1; j < Q; ++j)
      if (s(j) > s(best) + tie_tol) best = j;
    binary.blocks(m, best) = 1.0;
    bin_mass(best) += 1.0;
  }
  return binary;
}

/// max over modes and prefixes of |sum_{r<=m} (p_hat - p)| * l dt, the
/// blocked evaluation of the integrated deviation.
inline double max_integration_gap(const ModePlan& relaxed, const ModePlan& binary) {
  if (relaxed.num_blocks() != binary.num_blocks() ||
      relaxed.num_modes() != binary.num_modes() || relaxed.l != binary.l ||
      relaxed.h != binary.h || relaxed.dt != binary.dt)
    throw InputError("max_integration_gap: plans must share the same blocking");
  Eigen::VectorXd prefix = Eigen::VectorXd::Zero(relaxed.num_modes());
  double worst = 0.0;
  for (int m = 0; m < relaxed.num_blocks(); ++m) {
    prefix += (relaxed.blocks.row(m) - binary.blocks.row(m)).transpose();
    worst = std::max(worst, prefix.cwiseAbs().maxCoeff());
  }
  return worst * relaxed.l * relaxed.dt;
}

}  // namespace swmpc
