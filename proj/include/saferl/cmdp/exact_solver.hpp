#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "saferl/cmdp/bellman.hpp"
#include "saferl/cmdp/model.hpp"
#include "saferl/core/errors.hpp"

namespace saferl::cmdp {

struct ExactSolution {
  PolicyTable policy;
  double objective = 0.0;   // C_pi(x0)
  double constraint = 0.0;  // D_pi(x0), state-cost convention
};

namespace detail {

// Objective/constraint value of a deterministic policy at the start state.
// Returns false when the policy diverges (gamma = 1, non-transient chain).
inline bool evaluate_deterministic(const CmdpModel& m, const std::vector<std::size_t>& act, double& C, double& D) {
  PolicyTable pi = PolicyTable::deterministic(m.num_states, m.num_actions, act);
  try {
    auto uc = policy_return(m, pi, m.c, m.gamma);
    auto ud = policy_return(m, pi, state_cost_table(m, m.d), m.gamma);
    C = uc[m.start];
    D = ud[m.start];
    return true;
  } catch (const DivergenceError&) {
    return false;
  }
}

inline bool kernel_is_deterministic(const CmdpModel& m) {
  for (double v : m.P) {
    if (v != 0.0 && v != 1.0) return false;
  }
  return true;
}

inline std::size_t deterministic_next(const CmdpModel& m, std::size_t x, std::size_t a) {
  for (std::size_t nx = 0; nx < m.num_states; ++nx) {
    if (m.p(x, a, nx) == 1.0) return nx;
  }
  throw NumericError("deterministic kernel row without a unit entry");
}

// Exact enumeration for deterministic kernels. A deterministic policy's value
// at x0 depends only on the actions along its walk, so a depth-first search
// that branches on each newly visited state covers every policy equivalence
// class. Cycles are summed in closed form.
struct WalkSolver {
  const CmdpModel& m;
  std::vector<int> chosen;             // -1 = unassigned
  std::vector<std::size_t> walk;       // visited order
  std::vector<int> pos_in_walk;        // state -> index in walk, -1 if absent
  double best_C = std::numeric_limits<double>::infinity();
  std::vector<int> best_actions;
  bool found = false;
  std::uint64_t leaves = 0;
  static constexpr std::uint64_t leaf_cap = 2000000;

  explicit WalkSolver(const CmdpModel& model)
      : m(model), chosen(model.num_states, -1), pos_in_walk(model.num_states, -1) {}

  void consider(double C, double D) {
    ++leaves;
    if (leaves > leaf_cap) throw SizeError("exact_cmdp_solve: policy walk tree exceeds the enumeration cap");
    if (D <= m.d0 + 1e-12 && C < best_C) {
      best_C = C;
      best_actions.assign(chosen.begin(), chosen.end());
      found = true;
    }
  }

  // prefix sums of discounted cost along the walk, then recurse on branches
  void dfs(std::size_t x, double disc, double C, double D) {
    if (m.terminal[x]) {
      consider(C, D);
      return;
    }
    if (pos_in_walk[x] >= 0) {
      // closed a cycle: sum the loop analytically
      std::size_t from = static_cast<std::size_t>(pos_in_walk[x]);
      double cyc_c = 0.0, cyc_d = 0.0, g = 1.0;
      for (std::size_t i = from; i < walk.size(); ++i) {
        std::size_t s = walk[i];
        cyc_c += g * m.cost(s, static_cast<std::size_t>(chosen[s]));
        cyc_d += g * m.d[s];
        g *= m.gamma;
      }
      if (m.gamma < 1.0) {
        double tail = disc / (1.0 - g);  // disc = gamma^{t_cycle_start} already folded in
        consider(C + tail * cyc_c, D + tail * cyc_d);
      } else {
        double inf = std::numeric_limits<double>::infinity();
        consider(cyc_c == 0.0 ? C : (cyc_c > 0.0 ? inf : -inf), cyc_d == 0.0 ? D : inf);
      }
      return;
    }
    pos_in_walk[x] = static_cast<int>(walk.size());
    walk.push_back(x);
    for (std::size_t a = 0; a < m.num_actions; ++a) {
      chosen[x] = static_cast<int>(a);
      std::size_t nx = deterministic_next(m, x, a);
      dfs(nx, disc * m.gamma, C + disc * m.cost(x, a), D + disc * m.d[x]);
    }
    chosen[x] = -1;
    walk.pop_back();
    pos_in_walk[x] = -1;
  }
};

}  // namespace detail

// Enumerates deterministic policies, evaluates each exactly, and returns the
// minimum-objective one among those meeting D_pi(x0) <= d0. Stochastic
// kernels use full enumeration (bounded at |A|^{|X nonterminal|} <= 1e6);
// deterministic kernels use an exact walk-tree enumeration instead, which
// handles larger state spaces.
inline ExactSolution exact_cmdp_solve(const CmdpModel& m) {
  m.validate();
  auto transients = m.transient_states();
  double combos = std::pow(static_cast<double>(m.num_actions), static_cast<double>(transients.size()));

  if (combos <= 1e6) {
    std::vector<std::size_t> act(m.num_states, 0);
    std::vector<std::size_t> counter(transients.size(), 0);
    bool found = false;
    double best_C = std::numeric_limits<double>::infinity();
    double best_D = 0.0;
    std::vector<std::size_t> best_act;
    while (true) {
      for (std::size_t i = 0; i < transients.size(); ++i) act[transients[i]] = counter[i];
      double C = 0.0, D = 0.0;
      if (detail::evaluate_deterministic(m, act, C, D) && D <= m.d0 + 1e-12 && C < best_C) {
        best_C = C;
        best_D = D;
        best_act = act;
        found = true;
      }
      // odometer increment
      std::size_t k = 0;
      while (k < counter.size()) {
        if (++counter[k] < m.num_actions) break;
        counter[k] = 0;
        ++k;
      }
      if (k == counter.size()) break;
      if (counter.empty()) break;
    }
    if (!found) throw FeasibilityError("exact_cmdp_solve: no feasible deterministic policy");
    ExactSolution sol;
    sol.policy = PolicyTable::deterministic(m.num_states, m.num_actions, best_act);
    sol.objective = best_C;
    sol.constraint = best_D;
    return sol;
  }

  if (!detail::kernel_is_deterministic(m)) {
    throw SizeError("exact_cmdp_solve: state-action space too large for full enumeration");
  }

  detail::WalkSolver solver(m);
  solver.dfs(m.start, 1.0, 0.0, 0.0);
  if (!solver.found) throw FeasibilityError("exact_cmdp_solve: no feasible deterministic policy");
  std::vector<std::size_t> act(m.num_states, 0);
  for (std::size_t x = 0; x < m.num_states; ++x) {
    if (solver.best_actions[x] >= 0) act[x] = static_cast<std::size_t>(solver.best_actions[x]);
  }
  ExactSolution sol;
  sol.policy = PolicyTable::deterministic(m.num_states, m.num_actions, act);
  sol.objective = solver.best_C;
  sol.constraint = 0.0;
  // re-evaluate for the exact constraint value of the winner
  double C = 0.0, D = 0.0;
  if (detail::evaluate_deterministic(m, act, C, D)) {
    sol.objective = C;
    sol.constraint = D;
  }
  return sol;
}

}  // namespace saferl::cmdp
