#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "saferl/core/errors.hpp"

namespace saferl::sdqn {

// Q_L = Q_D + epsilon * Q_T, element-wise over actions.
inline std::vector<double> q_l_value(const std::vector<double>& q_d,
                                     const std::vector<double>& q_t, double epsilon) {
  if (q_d.size() != q_t.size()) throw DimensionError("q_l_value: action-count mismatch");
  if (epsilon < 0.0) throw ParameterError("q_l_value: epsilon must be non-negative");
  std::vector<double> out(q_d.size());
  for (std::size_t a = 0; a < q_d.size(); ++a) out[a] = q_d[a] + epsilon * q_t[a];
  return out;
}

// Scalable auxiliary-cost estimate at the start state: the constraint budget
// slack spread over the baseline's expected episode length, clamped at zero
// when the baseline already exceeds the budget.
inline double epsilon_tilde(const std::vector<double>& baseline_row,
                            const std::vector<double>& q_d, const std::vector<double>& q_t,
                            double d0) {
  if (baseline_row.size() != q_d.size() || q_d.size() != q_t.size())
    throw DimensionError("epsilon_tilde: action-count mismatch");
  double exp_d = 0.0, exp_t = 0.0;
  for (std::size_t a = 0; a < baseline_row.size(); ++a) {
    exp_d += baseline_row[a] * q_d[a];
    exp_t += baseline_row[a] * q_t[a];
  }
  if (!(exp_t > 0.0))
    throw NumericError("epsilon_tilde: degenerate stopping time (expected horizon is zero)");
  return std::max(0.0, (d0 - exp_d) / exp_t);
}

// min_pi pi . q  subject to  (pi - pi_b) . q_l <= epsilon, pi on the simplex.
// With one linear constraint the optimum sits on a support of size <= 2:
// either a feasible one-hot, or the tight mix of a violating and a satisfying
// action. pi_b itself is always feasible, so a feasible one-hot always exists.
// Ties keep the earliest candidate: one-hots in index order, then edges.
inline std::vector<double> safe_policy_lp(const std::vector<double>& q,
                                          const std::vector<double>& q_l,
                                          const std::vector<double>& baseline_row,
                                          double epsilon) {
  std::size_t n = q.size();
  if (n == 0) throw DimensionError("safe_policy_lp: no actions");
  if (q_l.size() != n || baseline_row.size() != n)
    throw DimensionError("safe_policy_lp: action-count mismatch");
  if (std::isnan(epsilon) || epsilon < 0.0)
    throw ParameterError("safe_policy_lp: epsilon must be non-negative");
  for (std::size_t a = 0; a < n; ++a) {
    if (!std::isfinite(q[a]) || !std::isfinite(q_l[a]) || !std::isfinite(baseline_row[a]))
      throw NumericError("safe_policy_lp: non-finite input");
  }

  double base_ql = 0.0;
  for (std::size_t a = 0; a < n; ++a) base_ql += baseline_row[a] * q_l[a];
  double budget = epsilon + base_ql;  // pi . q_l <= budget

  std::vector<double> best(baseline_row);
  double best_obj = std::numeric_limits<double>::infinity();
  bool found = false;

  for (std::size_t a = 0; a < n; ++a) {
    if (q_l[a] <= budget && q[a] < best_obj) {
      best_obj = q[a];
      best.assign(n, 0.0);
      best[a] = 1.0;
      found = true;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(q_l[i] > budget)) continue;  // i must violate on its own
    for (std::size_t j = 0; j < n; ++j) {
      if (!(q_l[j] < budget)) continue;  // j must have slack
      double lambda = (budget - q_l[j]) / (q_l[i] - q_l[j]);
      double obj = lambda * q[i] + (1.0 - lambda) * q[j];
      if (obj < best_obj) {
        best_obj = obj;
        best.assign(n, 0.0);
        best[i] = lambda;
        best[j] = 1.0 - lambda;
        found = true;
      }
    }
  }
  if (!found) return baseline_row;  // numeric edge: fall back to the feasible baseline
  return best;
}

}  // namespace saferl::sdqn
