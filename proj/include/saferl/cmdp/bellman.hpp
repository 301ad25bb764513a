#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "saferl/cmdp/model.hpp"
#include "saferl/core/errors.hpp"

namespace saferl::cmdp {

// State transition matrix under a fixed policy: P_pi[x][x'] = sum_a pi(a|x) P(x'|x,a).
inline std::vector<double> policy_kernel(const CmdpModel& m, const PolicyTable& pi) {
  std::vector<double> K(m.num_states * m.num_states, 0.0);
  for (std::size_t x = 0; x < m.num_states; ++x) {
    for (std::size_t a = 0; a < m.num_actions; ++a) {
      double w = pi.prob(x, a);
      if (w == 0.0) continue;
      for (std::size_t nx = 0; nx < m.num_states; ++nx) K[x * m.num_states + nx] += w * m.p(x, a, nx);
    }
  }
  return K;
}

// Policy Bellman operator with an explicit discount:
//   B[v](x) = sum_a pi(a|x) [ h(x,a) + gamma * sum_x' P(x'|x,a) v(x') ].
// h is a per-(state, action) stage cost table.
inline std::vector<double> bellman_apply(const CmdpModel& m, const PolicyTable& pi, const std::vector<double>& v,
                                         const std::vector<double>& h, double gamma) {
  if (v.size() != m.num_states) throw DimensionError("bellman_apply: value vector size mismatch");
  if (h.size() != m.num_states * m.num_actions) throw DimensionError("bellman_apply: stage cost size mismatch");
  if (!(gamma > 0.0) || gamma > 1.0) throw ParameterError("bellman_apply: discount must lie in (0, 1]");
  std::vector<double> out(m.num_states, 0.0);
  for (std::size_t x = 0; x < m.num_states; ++x) {
    double acc = 0.0;
    for (std::size_t a = 0; a < m.num_actions; ++a) {
      double w = pi.prob(x, a);
      if (w == 0.0) continue;
      double exp_next = 0.0;
      for (std::size_t nx = 0; nx < m.num_states; ++nx) exp_next += m.p(x, a, nx) * v[nx];
      acc += w * (h[x * m.num_actions + a] + gamma * exp_next);
    }
    out[x] = acc;
  }
  return out;
}

// Broadcast a per-state cost to a per-(state, action) table.
inline std::vector<double> state_cost_table(const CmdpModel& m, const std::vector<double>& per_state) {
  if (per_state.size() != m.num_states) throw DimensionError("state cost vector size mismatch");
  std::vector<double> h(m.num_states * m.num_actions, 0.0);
  for (std::size_t x = 0; x < m.num_states; ++x) {
    for (std::size_t a = 0; a < m.num_actions; ++a) h[x * m.num_actions + a] = per_state[x];
  }
  return h;
}

// True when the policy chain restricted to non-terminal states dies out:
// power iteration on the transient block, declared transient once total
// survival mass drops below 1e-10, divergent if the decay ratio reaches 1.
inline bool chain_is_transient(const CmdpModel& m, const PolicyTable& pi) {
  auto transients = m.transient_states();
  std::size_t nt = transients.size();
  if (nt == 0) return true;
  std::vector<double> K = policy_kernel(m, pi);
  std::vector<double> v(nt, 1.0), nv(nt, 0.0);
  const double tol = 1e-10;
  double prev_norm = 1.0;
  for (int iter = 0; iter < 20000; ++iter) {
    double norm = 0.0;
    for (std::size_t i = 0; i < nt; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < nt; ++j) acc += K[transients[i] * m.num_states + transients[j]] * v[j];
      nv[i] = acc;
      norm = std::max(norm, acc);
    }
    std::swap(v, nv);
    if (norm < tol) return true;
    if (iter > 200 && norm >= prev_norm * (1.0 - tol)) return false;
    prev_norm = norm;
  }
  return false;
}

// Expected discounted cumulative stage cost under a fixed policy:
// solves u = h_pi + gamma P_pi u on non-terminal states, u = 0 at terminals.
// With gamma = 1 the chain must be transient, otherwise DivergenceError.
inline std::vector<double> policy_return(const CmdpModel& m, const PolicyTable& pi, const std::vector<double>& h,
                                         double gamma) {
  if (h.size() != m.num_states * m.num_actions) throw DimensionError("policy_return: stage cost size mismatch");
  if (!(gamma > 0.0) || gamma > 1.0) throw ParameterError("policy_return: discount must lie in (0, 1]");
  if (gamma == 1.0 && !chain_is_transient(m, pi)) {
    throw DivergenceError("policy_return: undiscounted return diverges on a non-transient chain");
  }
  auto transients = m.transient_states();
  std::size_t nt = transients.size();
  std::vector<double> u(m.num_states, 0.0);
  if (nt == 0) return u;

  std::vector<double> K = policy_kernel(m, pi);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nt), static_cast<Eigen::Index>(nt));
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nt));
  for (std::size_t i = 0; i < nt; ++i) {
    std::size_t x = transients[i];
    for (std::size_t j = 0; j < nt; ++j) {
      M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (i == j ? 1.0 : 0.0) - gamma * K[x * m.num_states + transients[j]];
    }
    double hx = 0.0;
    for (std::size_t a = 0; a < m.num_actions; ++a) hx += pi.prob(x, a) * h[x * m.num_actions + a];
    rhs(static_cast<Eigen::Index>(i)) = hx;
  }
  Eigen::VectorXd sol = M.partialPivLu().solve(rhs);
  if (!sol.allFinite()) throw NumericError("policy_return: linear solve produced non-finite values");
  for (std::size_t i = 0; i < nt; ++i) u[transients[i]] = sol(static_cast<Eigen::Index>(i));
  return u;
}

}  // namespace saferl::cmdp
