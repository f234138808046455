#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "swmpc/errors.hpp"
#include "swmpc/model.hpp"

namespace swmpc {

/// Move-blocked mode variables: one simplex row per block. The first block
/// spans h intervals, every later block spans l.
struct ModePlan {
  Eigen::MatrixXd blocks;  // M x Q
  int l{1};
  int h{1};
  double dt{0.1};

  int num_blocks() const { return static_cast<int>(blocks.rows()); }
  int num_modes() const { return static_cast<int>(blocks.cols()); }
  int horizon_intervals() const { return h + (num_blocks() - 1) * l; }
};

inline void validate_plan(const ModePlan& plan, double tol = 1e-8) {
  if (plan.num_blocks() < 1 || plan.num_modes() < 2)
    throw InputError("ModePlan: need at least one block and two modes");
  if (plan.l < 1 || plan.h < 1 || plan.h > plan.l)
    throw InputError("ModePlan: require 1 <= h <= l");
  if (!(plan.dt > 0.0)) throw InputError("ModePlan: dt must be positive");
  for (int m = 0; m < plan.num_blocks(); ++m) {
    const auto row = plan.blocks.row(m);
    if (std::abs(row.sum() - 1.0) > tol || (row.array() < -tol).any() ||
        (row.array() > 1.0 + tol).any())
      throw InputError("ModePlan: block row off the unit simplex");
  }
}

inline bool is_binary_plan(const ModePlan& plan, double tol = 1e-9) {
  for (int m = 0; m < plan.num_blocks(); ++m) {
    int ones = 0;
    for (int j = 0; j < plan.num_modes(); ++j) {
      const double v = plan.blocks(m, j);
      if (std::abs(v - 1.0) <= tol)
        ++ones;
      else if (std::abs(v) > tol)
        return false;
    }
    if (ones != 1) return false;
  }
  return true;
}

/// Index of the block covering grid interval k under first-block length h.
inline int block_index(int k, int h, int l) {
  if (k < 0) throw InputError("block_index: negative interval");
  return k < h ? 0 : 1 + (k - h) / l;
}

/// Clamp a near-simplex row onto the simplex and wrap it for integration.
inline ConvexCombination row_combination(const ModePlan& plan, int m) {
  Eigen::VectorXd w = plan.blocks.row(m).transpose().cwiseMax(0.0).cwiseMin(1.0);
  const double s = w.sum();
  if (std::abs(s - 1.0) > 1e-6) throw InputError("row_combination: row off the simplex");
  return ConvexCombination(w / s);
}

/// Per-interval mode weights over the blocked horizon.
inline std::vector<ConvexCombination> expand_plan(const ModePlan& plan) {
  validate_plan(plan);
  std::vector<ConvexCombination> out;
  const int N = plan.horizon_intervals();
  out.reserve(static_cast<size_t>(N));
  for (int k = 0; k < N; ++k) out.push_back(row_combination(plan, block_index(k, plan.h, plan.l)));
  return out;
}

inline ModePlan plan_from_indices(const std::vector<int>& indices, int Q, int l, int h,
                                  double dt) {
  ModePlan plan;
  plan.l = l;
  plan.h = h;
  plan.dt = dt;
  plan.blocks = Eigen::MatrixXd::Zero(static_cast<int>(indices.size()), Q);
  for (size_t m = 0; m < indices.size(); ++m) {
    if (indices[m] < 0 || indices[m] >= Q) throw InputError("plan_from_indices: bad mode index");
    plan.blocks(static_cast<int>(m), indices[m]) = 1.0;
  }
  validate_plan(plan);
  return plan;
}

}  // namespace swmpc
