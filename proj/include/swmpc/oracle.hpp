#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "swmpc/errors.hpp"
#include "swmpc/mode_plan.hpp"
#include "swmpc/model.hpp"
#include "swmpc/ocp.hpp"

namespace swmpc {

constexpr long long kEnumerationGuard = 1000000;

/// All binary plans with M blocks over Q modes in lexicographic order (the
/// first block is the most significant digit). A fixed first block reduces
/// the enumeration to the remaining M-1 blocks.
inline std::vector<ModePlan> enumerate_plans(
    int Q, int M, const std::optional<ConvexCombination>& first_block = std::nullopt,
    int l = 1, int h = 1, double dt = 0.1) {
  if (Q < 1 || M < 1) throw InputError("enumerate_plans: Q and M must be >= 1");
  if (first_block) {
    if (first_block->size() != Q)
      throw InputError("enumerate_plans: first block mode count mismatch");
    if (!first_block->is_binary())
      throw InputError("enumerate_plans: first block must be binary");
  }
  const int free_blocks = M - (first_block ? 1 : 0);
  long long count = 1;
  for (int m = 0; m < free_blocks; ++m) {
    count *= Q;
    if (count > kEnumerationGuard)
      throw InputError("enumerate_plans: " + std::to_string(Q) + "^" +
                       std::to_string(free_blocks) + " plans exceed the guard of " +
                       std::to_string(kEnumerationGuard));
  }

  std::vector<ModePlan> plans;
  plans.reserve(static_cast<size_t>(count));
  std::vector<int> idx(static_cast<size_t>(M), 0);
  if (first_block) idx[0] = first_block->vertex_index();
  const int m0 = first_block ? 1 : 0;
  for (long long c = 0; c < count; ++c) {
    long long rem = c;
    for (int m = M - 1; m >= m0; --m) {
      idx[static_cast<size_t>(m)] = static_cast<int>(rem % Q);
      rem /= Q;
    }
    plans.push_back(plan_from_indices(idx, Q, l, h, dt));
  }
  return plans;
}

struct OracleResult {
  ModePlan plan;
  double objective{0.0};
  bool feasible{false};
  OcpSolution solution;
  int plans_evaluated{0};
};

/// Ground-truth mixed-integer optimum by exhaustive enumeration of the fresh
/// problem P(l, no active block). Uses the same solver options as the
/// pipeline; ties resolve to the lexicographically first plan.
inline OracleResult best_plan(const SwitchedModel& model, const GridSpec& grid, int l,
                              const Eigen::VectorXd& x0, const SolverOptions& opts) {
  const BlockedOcp ocp = build(model, grid, l, l, std::nullopt, x0, model.terminal_set);
  const std::vector<ModePlan> plans =
      enumerate_plans(model.num_modes(), ocp.M, std::nullopt, l, l, grid.dt);

  OracleResult best;
  bool have_any = false;
  bool have_feasible = false;
  for (const ModePlan& plan : plans) {
    const OcpSolution sol = solve_fixed(ocp, plan, nullptr, opts);
    const bool feas = sol.status == SolveStatus::converged;
    const bool better =
        !have_any || (feas && !have_feasible) ||
        (feas == have_feasible && sol.objective < best.objective);
    if (better) {
      best.plan = plan;
      best.objective = sol.objective;
      best.feasible = feas;
      best.solution = sol;
      have_any = true;
      have_feasible = have_feasible || feas;
    }
  }
  best.plans_evaluated = static_cast<int>(plans.size());
  return best;
}

}  // namespace swmpc
