#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "saferl/core/adam.hpp"
#include "saferl/core/errors.hpp"
#include "saferl/core/param_store.hpp"
#include "saferl/core/rng.hpp"
#include "saferl/core/tape.hpp"
#include "saferl/grid/gridworld.hpp"

namespace saferl::safety {

// Bootstrapped MC-dropout ensemble estimating the probability that a candidate
// action sequence leads to a constraint violation within the horizon.
struct EnsembleConfig {
  std::size_t members = 5;      // B
  double dropout = 0.1;         // p
  std::size_t mc_passes = 4;    // M_mc
  std::size_t horizon = 5;      // h
  double lambda_e = 1e5;
  double lambda_v = -2000.0;
  std::vector<std::size_t> hidden = {32};
  std::size_t g_dim = 64;
  bool episode_level_labels = false;
  // Joint-cost band width for vetoing candidates during acting.
  double safety_tolerance = 0.05;

  std::size_t sample_count() const { return members * mc_passes; }
  std::size_t input_dim() const { return g_dim + horizon * grid::kNumActions; }

  void validate() const {
    if (members < 1) throw ValidationError("ensemble: needs at least one member");
    if (mc_passes < 1) throw ValidationError("ensemble: needs at least one MC pass");
    if (horizon < 1) throw ValidationError("ensemble: horizon must be at least 1");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ValidationError("ensemble: dropout must lie in [0, 1)");
    if (g_dim == 0) throw ValidationError("ensemble: g_dim must be positive");
    if (lambda_v != 0.0 && sample_count() < 2)
      throw ValidationError(
          "ensemble: variance term needs members * mc_passes >= 2 samples");
  }
};

struct PcvEstimate {
  double mean = 0.0;
  double variance = 0.0;
  std::size_t samples = 0;
};

struct ViolationSample {
  nn::Tensor g;
  std::vector<std::size_t> actions;
  int label = 0;
};

// 1 if the horizon window (possibly truncated at a terminal) contains any
// constraint cost mass.
inline int label_violation(const std::vector<double>& window) {
  double total = 0.0;
  for (double d : window) total += d;
  return total >= 1.0 ? 1 : 0;
}

// Episode-level alternative: the whole episode exceeded its budget.
inline int label_violation_episode(double cumulative_d, double d0) {
  return cumulative_d > d0 ? 1 : 0;
}

// B uniform-with-replacement index lists of length n.
inline std::vector<std::vector<std::size_t>> bootstrap_resample(std::size_t n,
                                                                std::size_t members,
                                                                RngStream& rng) {
  if (n == 0) throw UsageError("bootstrap_resample: empty dataset");
  std::vector<std::vector<std::size_t>> lists(members);
  for (std::vector<std::size_t>& list : lists) {
    list.reserve(n);
    for (std::size_t i = 0; i < n; ++i) list.push_back(rng.uniform_int(n));
  }
  return lists;
}

// Poisson(1) draw; the streaming analogue of bootstrap resampling, giving each
// member an i.i.d. replication count per incoming sample.
inline std::size_t poisson_count(RngStream& rng) {
  const double limit = std::exp(-1.0);
  std::size_t k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= rng.uniform();
  } while (p > limit);
  return k - 1;
}

inline nn::Tensor pcv_features(const EnsembleConfig& cfg, const nn::Tensor& g,
                               const std::vector<std::size_t>& actions) {
  if (g.size() != cfg.g_dim) throw DimensionError("pcv_features: context width mismatch");
  if (actions.size() != cfg.horizon)
    throw DimensionError("pcv_features: candidate must cover the full horizon");
  nn::Tensor f = nn::Tensor::zeros({cfg.input_dim()});
  for (std::size_t i = 0; i < cfg.g_dim; ++i) f.data[i] = g.data[i];
  for (std::size_t step = 0; step < actions.size(); ++step) {
    if (actions[step] >= grid::kNumActions)
      throw ParameterError("pcv_features: action index out of range");
    f.data[cfg.g_dim + step * grid::kNumActions + actions[step]] = 1.0;
  }
  return f;
}

inline void init_ensemble_params(nn::ParamStore& store, const EnsembleConfig& cfg,
                                 RngStream& rng) {
  cfg.validate();
  for (std::size_t b = 0; b < cfg.members; ++b) {
    std::string base = "pcv.m" + std::to_string(b);
    std::size_t in = cfg.input_dim();
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
      std::string layer = base + ".l" + std::to_string(i);
      store.add(layer + ".w", nn::uniform_init({cfg.hidden[i], in}, in, rng));
      store.add(layer + ".b", nn::Tensor::zeros({cfg.hidden[i]}));
      in = cfg.hidden[i];
    }
    store.add(base + ".out.w", nn::uniform_init({1, in}, in, rng));
    store.add(base + ".out.b", nn::Tensor::zeros({1}));
  }
}

// One member's violation logit; dropout follows each hidden activation.
inline nn::Var member_logit(nn::Tape& t, nn::ParamStore& s, const EnsembleConfig& cfg,
                            std::size_t member, nn::Var features, nn::Mode mode,
                            RngStream& rng) {
  std::string base = "pcv.m" + std::to_string(member);
  nn::Var x = features;
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
    std::string layer = base + ".l" + std::to_string(i);
    x = t.relu(t.dense(t.param(s, layer + ".w"), x, t.param(s, layer + ".b")));
    x = t.dropout(x, cfg.dropout, mode, rng);
  }
  return t.dense(t.param(s, base + ".out.w"), x, t.param(s, base + ".out.b"));
}

// Sample moments over members * mc_passes sigmoid outputs with fresh dropout
// masks per pass. The mean is anchored at the first sample so identical
// samples give a variance of exactly zero.
inline PcvEstimate predict_pcv(nn::ParamStore& store, const EnsembleConfig& cfg,
                               const nn::Tensor& g, const std::vector<std::size_t>& actions,
                               RngStream& rng) {
  cfg.validate();
  nn::Tensor feats = pcv_features(cfg, g, actions);
  std::vector<double> samples;
  samples.reserve(cfg.sample_count());
  for (std::size_t b = 0; b < cfg.members; ++b) {
    for (std::size_t pass = 0; pass < cfg.mc_passes; ++pass) {
      nn::Tape t(false);
      nn::Var logit = member_logit(t, store, cfg, b, t.leaf(feats), nn::Mode::mc, rng);
      samples.push_back(1.0 / (1.0 + std::exp(-t.value(logit)[0])));
    }
  }
  PcvEstimate est;
  est.samples = samples.size();
  double anchor = samples[0];
  double shifted = 0.0;
  for (double v : samples) shifted += v - anchor;
  shifted /= static_cast<double>(samples.size());
  est.mean = anchor + shifted;
  if (samples.size() > 1) {
    double ss = 0.0;
    for (double v : samples) {
      double dev = (v - anchor) - shifted;
      ss += dev * dev;
    }
    est.variance = ss / static_cast<double>(samples.size() - 1);
  }
  return est;
}

// Eq.-23-style joint cost; the argmin candidate, ties to the lowest index.
inline double joint_cost(const PcvEstimate& est, double lambda_e, double lambda_v) {
  return lambda_e * est.mean + lambda_v * std::sqrt(est.variance);
}

inline std::size_t select_risk_averse_action(const std::vector<PcvEstimate>& estimates,
                                             double lambda_e, double lambda_v) {
  if (estimates.empty())
    throw ParameterError("select_risk_averse_action: no candidates");
  std::size_t best = 0;
  double best_cost = joint_cost(estimates[0], lambda_e, lambda_v);
  for (std::size_t i = 1; i < estimates.size(); ++i) {
    double cost = joint_cost(estimates[i], lambda_e, lambda_v);
    if (cost < best_cost) {
      best = i;
      best_cost = cost;
    }
  }
  return best;
}

// One Adam step on the mean BCE across members; member b trains only on its
// rows (bootstrap indices or Poisson replication). Members with no rows this
// step contribute nothing.
inline double ensemble_train_step(nn::ParamStore& store, nn::AdamState& opt,
                                  const EnsembleConfig& cfg,
                                  const std::vector<ViolationSample>& batch,
                                  const std::vector<std::vector<std::size_t>>& member_rows,
                                  RngStream& dropout_rng) {
  if (batch.empty()) throw UsageError("ensemble_train_step: empty batch");
  if (member_rows.size() != cfg.members)
    throw DimensionError("ensemble_train_step: one row list per member required");
  nn::Tape t;
  std::vector<nn::Var> member_losses;
  for (std::size_t b = 0; b < cfg.members; ++b) {
    if (member_rows[b].empty()) continue;
    std::vector<nn::Var> row_losses;
    row_losses.reserve(member_rows[b].size());
    for (std::size_t row : member_rows[b]) {
      if (row >= batch.size()) throw ParameterError("ensemble_train_step: row out of range");
      const ViolationSample& sample = batch[row];
      nn::Var feats = t.leaf(pcv_features(cfg, sample.g, sample.actions));
      nn::Var logit = member_logit(t, store, cfg, b, feats, nn::Mode::train, dropout_rng);
      row_losses.push_back(t.bce_with_logits(logit, static_cast<double>(sample.label)));
    }
    member_losses.push_back(t.mean(t.concat(row_losses)));
  }
  if (member_losses.empty()) throw UsageError("ensemble_train_step: no member had rows");
  nn::Var loss =
      t.scale(t.add_all(member_losses), 1.0 / static_cast<double>(member_losses.size()));
  double value = t.value(loss)[0];
  if (!std::isfinite(value)) throw NumericError("ensemble_train_step: non-finite loss");
  t.backward(loss);
  opt.step(store);
  return value;
}

}  // namespace saferl::safety
