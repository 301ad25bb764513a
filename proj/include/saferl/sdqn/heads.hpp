#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "saferl/core/errors.hpp"
#include "saferl/core/param_store.hpp"
#include "saferl/core/tape.hpp"
#include "saferl/grid/gridworld.hpp"
#include "saferl/sdqn/safe_lp.hpp"

namespace saferl::sdqn {

// Shared shape of the four heads reading the encoded context: objective Q,
// constraint Q_D, stopping-time Q_T, and the distilled policy.
struct HeadConfig {
  std::size_t g_dim = 64;
  std::vector<std::size_t> hidden = {32};
  std::size_t n_actions = grid::kNumActions;

  void validate() const {
    if (g_dim == 0) throw ValidationError("heads: g_dim must be positive");
    if (n_actions == 0) throw ValidationError("heads: need at least one action");
    for (std::size_t h : hidden)
      if (h == 0) throw ValidationError("heads: hidden widths must be positive");
  }
};

inline void init_head_params(nn::ParamStore& store, const HeadConfig& cfg,
                             const std::string& prefix, RngStream& rng) {
  std::size_t in = cfg.g_dim;
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
    std::string layer = prefix + ".l" + std::to_string(i);
    store.add(layer + ".w", nn::uniform_init({cfg.hidden[i], in}, in, rng));
    store.add(layer + ".b", nn::Tensor::zeros({cfg.hidden[i]}));
    in = cfg.hidden[i];
  }
  store.add(prefix + ".out.w", nn::uniform_init({cfg.n_actions, in}, in, rng));
  store.add(prefix + ".out.b", nn::Tensor::zeros({cfg.n_actions}));
}

inline nn::Var head_linear(nn::Tape& t, nn::ParamStore& s, const HeadConfig& cfg,
                           const std::string& prefix, nn::Var g) {
  nn::Var x = g;
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
    std::string layer = prefix + ".l" + std::to_string(i);
    x = t.relu(t.dense(t.param(s, layer + ".w"), x, t.param(s, layer + ".b")));
  }
  return t.dense(t.param(s, prefix + ".out.w"), x, t.param(s, prefix + ".out.b"));
}

inline nn::Var q_values(nn::Tape& t, nn::ParamStore& s, const HeadConfig& cfg,
                        const std::string& prefix, nn::Var g) {
  return head_linear(t, s, cfg, prefix, g);
}

// The stopping-time estimate counts remaining steps, so its outputs are kept
// non-negative by a softplus.
inline nn::Var qt_values(nn::Tape& t, nn::ParamStore& s, const HeadConfig& cfg,
                         const std::string& prefix, nn::Var g) {
  return t.softplus(head_linear(t, s, cfg, prefix, g));
}

inline nn::Var policy_row(nn::Tape& t, nn::ParamStore& s, const HeadConfig& cfg,
                          const std::string& prefix, nn::Var g) {
  return t.softmax(head_linear(t, s, cfg, prefix, g));
}

// Frozen copies: targets for the three Q heads, baseline for the policy head.
inline void sync_targets(nn::ParamStore& store) {
  nn::sync_prefix(store, "q.", "tgt.q.");
  nn::sync_prefix(store, "qd.", "tgt.qd.");
  nn::sync_prefix(store, "qt.", "tgt.qt.");
}

inline void refresh_baseline(nn::ParamStore& store) {
  nn::sync_prefix(store, "pi.", "base.pi.");
}

inline void init_sdqn_heads(nn::ParamStore& store, const HeadConfig& cfg, RngStream& rng) {
  cfg.validate();
  for (const char* prefix : {"q", "qd", "qt", "pi"}) init_head_params(store, cfg, prefix, rng);
  sync_targets(store);
  refresh_baseline(store);
}

struct TargetValues {
  double y = 0.0;    // objective head
  double y_d = 0.0;  // constraint head
  double y_t = 0.0;  // stopping-time head
  std::vector<double> pi_next;  // safe policy at the successor, distillation target
};

// Bellman targets for one transition. q_next/qd_next/qt_next are the frozen
// target-net rows at the successor state; baseline_next is the frozen baseline
// policy there. The constraint and stopping-time heads bootstrap under the
// baseline policy (they estimate its values, which is what the slack budget
// is measured against); the objective head bootstraps under the safe greedy
// policy produced by the projection at the successor.
inline TargetValues compute_targets(double cost, double constraint, bool x_terminal,
                                    bool next_terminal, double gamma,
                                    const std::vector<double>& q_next,
                                    const std::vector<double>& qd_next,
                                    const std::vector<double>& qt_next,
                                    const std::vector<double>& baseline_next,
                                    double eps_tilde) {
  TargetValues out;
  out.pi_next = baseline_next;
  if (next_terminal) {
    out.y = cost;
    out.y_d = constraint;
    out.y_t = x_terminal ? 0.0 : 1.0;
    return out;
  }
  std::vector<double> q_l = q_l_value(qd_next, qt_next, eps_tilde);
  out.pi_next = safe_policy_lp(q_next, q_l, baseline_next, eps_tilde);
  double boot_q = 0.0, boot_d = 0.0, boot_t = 0.0;
  for (std::size_t a = 0; a < q_next.size(); ++a) {
    boot_q += out.pi_next[a] * q_next[a];
    boot_d += baseline_next[a] * qd_next[a];
    boot_t += baseline_next[a] * qt_next[a];
  }
  out.y = cost + gamma * boot_q;
  out.y_d = constraint + gamma * boot_d;
  out.y_t = x_terminal ? 0.0 : 1.0 + gamma * boot_t;
  return out;
}

}  // namespace saferl::sdqn
