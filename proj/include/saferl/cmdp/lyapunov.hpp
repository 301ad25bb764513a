#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "saferl/cmdp/bellman.hpp"
#include "saferl/cmdp/model.hpp"
#include "saferl/core/errors.hpp"

namespace saferl::cmdp {

// Candidate Lyapunov function: expected discounted cumulative (d + epsilon)
// under the baseline policy, i.e. the solution of (I - gamma P_pi) L = d + eps
// on non-terminal states with L = 0 at terminals.
inline std::vector<double> lyapunov_candidate(const CmdpModel& m, const PolicyTable& baseline,
                                              const std::vector<double>& epsilon) {
  if (epsilon.size() != m.num_states) throw DimensionError("lyapunov_candidate: epsilon size mismatch");
  for (double e : epsilon) {
    if (!std::isfinite(e) || e < 0.0) throw ParameterError("lyapunov_candidate: epsilon must be non-negative");
  }
  std::vector<double> aug(m.num_states, 0.0);
  for (std::size_t x = 0; x < m.num_states; ++x) aug[x] = m.d[x] + (m.terminal[x] ? 0.0 : epsilon[x]);
  return policy_return(m, baseline, state_cost_table(m, aug), m.gamma);
}

struct LyapunovReport {
  bool valid = false;
  double worst_decrease_violation = 0.0;  // max over x of B[L](x) - L(x)
  double budget_violation = 0.0;          // L(x0) - d0
};

// Membership test for the Lyapunov set: B_{pi_B, d}[L](x) <= L(x) everywhere
// and L(x0) <= d0, both within tol.
inline LyapunovReport lyapunov_check(const CmdpModel& m, const PolicyTable& baseline, const std::vector<double>& L,
                                     double tol = 1e-9) {
  if (L.size() != m.num_states) throw DimensionError("lyapunov_check: L size mismatch");
  auto BL = bellman_apply(m, baseline, L, state_cost_table(m, m.d), m.gamma);
  LyapunovReport rep;
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t x = 0; x < m.num_states; ++x) worst = std::max(worst, BL[x] - L[x]);
  rep.worst_decrease_violation = worst;
  rep.budget_violation = L[m.start] - m.d0;
  rep.valid = worst <= tol && rep.budget_violation <= tol;
  return rep;
}

// Membership test for the set of L-induced policies: the d-Bellman operator
// under pi must not increase L anywhere (within tol).
inline bool induced_policy_check(const CmdpModel& m, const PolicyTable& pi, const std::vector<double>& L,
                                 double tol = 1e-9) {
  if (L.size() != m.num_states) throw DimensionError("induced_policy_check: L size mismatch");
  auto BL = bellman_apply(m, pi, L, state_cost_table(m, m.d), m.gamma);
  for (std::size_t x = 0; x < m.num_states; ++x) {
    if (BL[x] - L[x] > tol) return false;
  }
  return true;
}

// Worst-case auxiliary cost bound 2 T D_max Dtv / (1 - gamma). Diagnostic
// only; the expected stopping time T is supplied by the caller.
inline double epsilon_star_bound(double stopping_time, double d_max, double tv, double gamma) {
  if (stopping_time < 0.0 || d_max < 0.0 || tv < 0.0) throw ParameterError("epsilon_star_bound: negative input");
  if (!(gamma < 1.0) || !(gamma > 0.0)) throw ParameterError("epsilon_star_bound: needs gamma in (0, 1)");
  return 2.0 * stopping_time * d_max * tv / (1.0 - gamma);
}

struct EpsilonLpResult {
  std::vector<double> epsilon;    // per-state auxiliary cost
  std::vector<double> price;      // discounted visitation price per state
  double baseline_cost = 0.0;     // D_{pi_B}(x0)
  double slack = 0.0;             // d0 - baseline_cost
  std::size_t support_state = 0;  // state carrying the slack (meaningless when slack = 0)
};

// Largest total auxiliary cost whose priced sum fits the constraint budget.
// The LP has a single coupling constraint sum_x price(x) eps(x) <= slack plus
// eps >= 0, so the exact optimum puts all slack on the state with the lowest
// positive visitation price (ties resolved to the lowest state index).
inline EpsilonLpResult epsilon_lp_tabular(const CmdpModel& m, const PolicyTable& baseline) {
  EpsilonLpResult res;
  res.epsilon.assign(m.num_states, 0.0);
  res.price.assign(m.num_states, 0.0);

  std::vector<double> zero(m.num_states, 0.0);
  auto D = lyapunov_candidate(m, baseline, zero);
  res.baseline_cost = D[m.start];
  res.slack = m.d0 - res.baseline_cost;
  if (res.slack < -1e-9) {
    throw FeasibilityError("epsilon_lp_tabular: baseline policy exceeds the constraint budget");
  }
  if (res.slack < 0.0) res.slack = 0.0;

  auto transients = m.transient_states();
  std::size_t nt = transients.size();
  if (nt == 0 || res.slack == 0.0) return res;

  // visitation price = start-state row of (I - gamma P_pi)^{-1} on transients
  std::vector<double> K = policy_kernel(m, baseline);
  Eigen::MatrixXd Mt = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nt), static_cast<Eigen::Index>(nt));
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nt));
  bool start_is_transient = false;
  for (std::size_t i = 0; i < nt; ++i) {
    std::size_t x = transients[i];
    if (x == m.start) {
      e0(static_cast<Eigen::Index>(i)) = 1.0;
      start_is_transient = true;
    }
    for (std::size_t j = 0; j < nt; ++j) {
      // transpose system: prices solve (I - gamma P)^T w = e_{x0}
      Mt(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) =
          (i == j ? 1.0 : 0.0) - m.gamma * K[x * m.num_states + transients[j]];
    }
  }
  if (!start_is_transient) return res;  // L(x0) = 0 regardless of epsilon
  Eigen::VectorXd w = Mt.partialPivLu().solve(e0);
  if (!w.allFinite()) throw NumericError("epsilon_lp_tabular: visitation solve produced non-finite values");

  const double price_floor = 1e-12;
  bool found = false;
  std::size_t best = 0;
  double best_price = 0.0;
  for (std::size_t i = 0; i < nt; ++i) {
    double price = w(static_cast<Eigen::Index>(i));
    res.price[transients[i]] = price;
    if (price > price_floor && (!found || price < best_price)) {
      found = true;
      best = transients[i];
      best_price = price;
    }
  }
  if (!found) return res;  // nothing reachable can absorb slack
  res.epsilon[best] = res.slack / best_price;
  res.support_state = best;
  return res;
}

}  // namespace saferl::cmdp
