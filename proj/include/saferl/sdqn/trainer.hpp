#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "saferl/core/adam.hpp"
#include "saferl/core/errors.hpp"
#include "saferl/core/format.hpp"
#include "saferl/core/param_store.hpp"
#include "saferl/core/rng.hpp"
#include "saferl/core/tape.hpp"
#include "saferl/encoder.hpp"
#include "saferl/grid/gridworld.hpp"
#include "saferl/safety.hpp"
#include "saferl/sdqn/heads.hpp"
#include "saferl/sdqn/replay.hpp"
#include "saferl/sdqn/safe_lp.hpp"

namespace saferl::sdqn {

// Slack budget used before the baseline policy exists. Any finite budget this
// large makes the projection unconstrained while keeping the LP arithmetic
// finite, which an infinite budget would not.
constexpr double kVacuousEpsilon = 1e18;

enum class ActingMode { safe_policy_with_veto, risk_averse_only };

inline const char* acting_mode_name(ActingMode m) {
  return m == ActingMode::risk_averse_only ? "risk_averse_only" : "safe_policy_with_veto";
}

inline ActingMode parse_acting_mode(const std::string& s) {
  if (s == "safe_policy_with_veto") return ActingMode::safe_policy_with_veto;
  if (s == "risk_averse_only") return ActingMode::risk_averse_only;
  throw ValidationError("unknown acting mode: " + s);
}

// Observation -> token -> context encoding. context_window limits how many
// trailing tokens are re-encoded per step; zero means the full receptive
// field of the attention stack.
struct PipelineConfig {
  enc::EmbedConfig embed;
  enc::EncoderConfig encoder;
  std::size_t context_window = 0;

  std::size_t window() const {
    return context_window ? context_window : encoder.layers * encoder.span + 1;
  }

  void validate() const {
    embed.validate();
    encoder.validate();
    if (embed.d_h != encoder.d_h)
      throw ValidationError("pipeline: token width must match encoder width");
    if (context_window == 1)
      throw ValidationError("pipeline: context window must cover at least two tokens");
  }
};

inline enc::EmbedConfig embed_config_for(const grid::GridSpec& spec, std::size_t d_h,
                                         std::vector<std::size_t> conv_channels = {8}) {
  enc::EmbedConfig cfg;
  cfg.mode = spec.mode;
  cfg.d_h = d_h;
  cfg.conv_channels = std::move(conv_channels);
  switch (spec.mode) {
    case grid::ObsMode::discrete:
      cfg.payload_shape = {spec.cells()};
      break;
    case grid::ObsMode::image:
      cfg.payload_shape = {3, spec.height, spec.width};
      break;
    case grid::ObsMode::partial:
      cfg.payload_shape = {3, spec.window_w, spec.window_h};
      break;
  }
  return cfg;
}

struct TrainConfig {
  std::size_t iterations = 200;
  std::size_t train_steps = 8;  // gradient steps per iteration
  std::size_t batch_size = 64;
  double gamma = 0.99;
  double d0 = 1.0;
  std::size_t target_sync_period = 10;
  std::size_t baseline_refresh_period = 50;
  double explore_start = 0.2;
  double explore_end = 0.01;
  ActingMode acting = ActingMode::safe_policy_with_veto;
  // Reuse the rollout-time encodings during training; the embedding and the
  // encoder then act as a fixed random feature map and only the heads learn.
  bool stale_encodings = false;
  bool emit_wallclock = false;
  // Separate constant rates for the two update families: the value/policy
  // losses and the violation-ensemble loss step through their own optimizers.
  nn::AdamConfig adam{};
  double lr_pcv = 1e-4;
  HeadConfig heads;
  safety::EnsembleConfig ensemble;
  ReplayConfig replay;
  PipelineConfig pipeline;

  void validate() const {
    pipeline.validate();
    heads.validate();
    ensemble.validate();
    replay.validate();
    validate_fields();
  }

  // The checks owned by this struct, without recursing into the nested
  // configs; lets callers collect one error per sub-config.
  void validate_fields() const {
    if (iterations == 0) throw ValidationError("train: iterations must be positive");
    if (batch_size == 0) throw ValidationError("train: batch size must be positive");
    if (!(gamma > 0.0) || gamma > 1.0) throw ValidationError("train: gamma must lie in (0, 1]");
    if (d0 < 0.0) throw ValidationError("train: constraint budget must be non-negative");
    if (target_sync_period == 0 || baseline_refresh_period == 0)
      throw ValidationError("train: sync periods must be positive");
    if (explore_start < 0.0 || explore_start > 1.0 || explore_end < 0.0 || explore_end > 1.0)
      throw ValidationError("train: exploration rates must lie in [0, 1]");
    if (!(adam.lr > 0.0) || !(lr_pcv > 0.0))
      throw ValidationError("train: learning rates must be positive");
    if (heads.g_dim != pipeline.encoder.d_h || ensemble.g_dim != pipeline.encoder.d_h)
      throw ValidationError("train: head and ensemble context widths must match the encoder");
    if (heads.n_actions != grid::kNumActions)
      throw ValidationError("train: heads must cover the full action set");
  }
};

struct MetricsRow {
  std::size_t iteration = 0;
  std::size_t episode = 0;
  double ret = 0.0;  // negative cumulative objective cost
  double cum_constraint_cost = 0.0;
  double epsilon_tilde = 0.0;
  double loss_q = 0.0;
  double loss_qd = 0.0;
  double loss_qt = 0.0;
  double loss_pcv = 0.0;
  double violation_rate = 0.0;
  double wallclock_s = -1.0;
};

inline std::string metrics_csv_header() {
  return "iteration,episode,return,cum_constraint_cost,epsilon_tilde,"
         "loss_q,loss_qd,loss_qt,loss_pcv,violation_rate,wallclock_s";
}

inline std::string metrics_csv_row(const MetricsRow& r) {
  std::string out = std::to_string(r.iteration) + "," + std::to_string(r.episode);
  for (double v : {r.ret, r.cum_constraint_cost, r.epsilon_tilde, r.loss_q, r.loss_qd, r.loss_qt,
                   r.loss_pcv, r.violation_rate, r.wallclock_s})
    out += "," + format_double(v);
  return out;
}

struct EpisodeResult {
  std::shared_ptr<Episode> episode;
  double ret = 0.0;
  double cum_constraint = 0.0;
  double eps_tilde = 0.0;
};

class Trainer {
 public:
  Trainer(grid::GridSpec spec, TrainConfig cfg, std::uint64_t seed)
      : spec_(std::move(spec)),
        cfg_(std::move(cfg)),
        seed_(seed),
        env_(spec_, seed),
        opt_values_(cfg_.adam),
        opt_pcv_(pcv_adam(cfg_)),
        buffer_(cfg_.replay),
        explore_(seed, streams::exploration),
        dropout_(seed, streams::dropout),
        mc_(seed, streams::mc_dropout),
        boot_(seed, streams::bootstrap),
        replay_rng_(seed, streams::replay) {
    cfg_.validate();
    RngStream init(seed, streams::init);
    enc::init_embed_params(store_, cfg_.pipeline.embed, init);
    enc::init_encoder_params(store_, cfg_.pipeline.encoder, init);
    init_sdqn_heads(store_, cfg_.heads, init);
    safety::init_ensemble_params(store_, cfg_.ensemble, init);
    // Stored alongside the weights so a reloaded agent keeps using its
    // distilled baseline instead of falling back to the uniform warm-up one.
    store_.add("state.warmed_up", nn::Tensor::zeros({1}));
  }

  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }
  const TrainConfig& config() const { return cfg_; }
  const grid::GridSpec& grid_spec() const { return spec_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const std::vector<MetricsRow>& metrics() const { return metrics_; }
  std::size_t iteration() const { return iter_; }
  bool warmed_up() const { return store_.param("state.warmed_up")[0] != 0.0; }

  void run() {
    while (iter_ < cfg_.iterations) run_iteration();
  }

  MetricsRow run_iteration() {
    auto t0 = std::chrono::steady_clock::now();
    EpisodeResult er = play_episode(env_, exploration_rate(iter_), mc_);
    buffer_.add_episode(er.episode);
    episodes_ += 1;
    if (er.cum_constraint > cfg_.d0) violations_ += 1;

    double progress = static_cast<double>(iter_ + 1) / static_cast<double>(cfg_.iterations);
    double sq = 0.0, sd = 0.0, st = 0.0, spcv = 0.0;
    for (std::size_t k = 0; k < cfg_.train_steps; ++k) {
      StepLosses l = train_step(er.eps_tilde, buffer_.beta_at(progress));
      sq += l.q;
      sd += l.qd;
      st += l.qt;
      spcv += l.pcv;
    }
    double steps = std::max<std::size_t>(cfg_.train_steps, 1);

    if ((iter_ + 1) % cfg_.target_sync_period == 0) sync_targets(store_);
    if ((iter_ + 1) % cfg_.baseline_refresh_period == 0) {
      refresh_baseline(store_);
      store_.param("state.warmed_up")[0] = 1.0;
    }

    MetricsRow row;
    row.iteration = iter_;
    row.episode = episodes_ - 1;
    row.ret = er.ret;
    row.cum_constraint_cost = er.cum_constraint;
    row.epsilon_tilde = er.eps_tilde;
    row.loss_q = sq / steps;
    row.loss_qd = sd / steps;
    row.loss_qt = st / steps;
    row.loss_pcv = spcv / steps;
    row.violation_rate = static_cast<double>(violations_) / static_cast<double>(episodes_);
    if (cfg_.emit_wallclock) {
      row.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    metrics_.push_back(row);
    ++iter_;
    return row;
  }

  // Runs one episode under the current parameters. The slack budget is fixed
  // from the start-state estimates before the first action and reused at
  // every step; exploration draws uniformly from the non-vetoed actions.
  EpisodeResult play_episode(grid::GridWorld& env, double explore_prob, RngStream& mc_rng) {
    std::size_t window = cfg_.pipeline.window();
    grid::Observation obs = env.reset();
    std::vector<nn::Tensor> payloads{obs.payload};
    std::vector<nn::Tensor> extras{enc::token_extras(-1, 0.0, 0.0)};

    EpisodeResult out;
    out.episode = std::make_shared<Episode>();
    bool eps_set = false;

    while (true) {
      nn::Tape tape(false);
      nn::Var g = encode_last(tape, payloads, extras, window);
      HeadRows rows = head_rows(tape, g);
      if (!eps_set) {
        out.eps_tilde = warmed_up() ? epsilon_tilde(rows.base, rows.qd, rows.qt, cfg_.d0)
                                    : kVacuousEpsilon;
        eps_set = true;
      }
      std::vector<double> pi =
          safe_policy_lp(rows.q, q_l_value(rows.qd, rows.qt, out.eps_tilde), rows.base,
                         out.eps_tilde);
      std::size_t action = choose_action(tape.value(g), pi, explore_prob, mc_rng);

      grid::StepResult sr = env.step(action);
      out.episode->steps.push_back({payloads.back(), action, sr.cost, sr.constraint_cost});
      if (cfg_.stale_encodings) out.episode->encodings.push_back(tape.value(g));
      out.ret -= sr.cost;
      out.cum_constraint += sr.constraint_cost;
      if (sr.terminal) break;
      payloads.push_back(sr.obs.payload);
      extras.push_back(enc::token_extras(static_cast<int>(action), sr.cost, sr.constraint_cost));
    }
    return out;
  }

  double exploration_rate(std::size_t iter) const {
    if (cfg_.iterations <= 1) return cfg_.explore_start;
    double p = static_cast<double>(iter) / static_cast<double>(cfg_.iterations - 1);
    return cfg_.explore_start + (cfg_.explore_end - cfg_.explore_start) * std::min(p, 1.0);
  }

 private:
  struct HeadRows {
    std::vector<double> q, qd, qt, base;
  };

  struct StepLosses {
    double q = 0.0, qd = 0.0, qt = 0.0, pcv = 0.0;
  };

  static std::vector<double> row_values(nn::Tape& t, nn::Var v) {
    const nn::Tensor& x = t.value(v);
    return std::vector<double>(x.data.begin(), x.data.end());
  }

  static std::size_t argmax_row(const std::vector<double>& row) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < row.size(); ++a)
      if (row[a] > row[best]) best = a;
    return best;
  }

  // Embeds the trailing `window` tokens and returns the encoding of the last.
  nn::Var encode_last(nn::Tape& tape, const std::vector<nn::Tensor>& payloads,
                      const std::vector<nn::Tensor>& extras, std::size_t window) {
    std::size_t lo = payloads.size() > window ? payloads.size() - window : 0;
    std::vector<nn::Var> tokens;
    tokens.reserve(payloads.size() - lo);
    for (std::size_t i = lo; i < payloads.size(); ++i)
      tokens.push_back(enc::embed_token(tape, store_, cfg_.pipeline.embed, payloads[i], extras[i]));
    return enc::encoder_forward(tape, store_, cfg_.pipeline.encoder, tokens).back();
  }

  HeadRows head_rows(nn::Tape& t, nn::Var g) {
    HeadRows rows;
    rows.q = row_values(t, q_values(t, store_, cfg_.heads, "q", g));
    rows.qd = row_values(t, q_values(t, store_, cfg_.heads, "qd", g));
    rows.qt = row_values(t, qt_values(t, store_, cfg_.heads, "qt", g));
    if (warmed_up()) {
      rows.base = row_values(t, policy_row(t, store_, cfg_.heads, "base.pi", g));
    } else {
      rows.base.assign(cfg_.heads.n_actions, 1.0 / static_cast<double>(cfg_.heads.n_actions));
    }
    return rows;
  }

  // Risk filter over one-step candidates: each action is scored by the
  // ensemble on the plan "this action, then the projected policy's greedy
  // action for the rest of the horizon". Actions whose joint cost exceeds the
  // best by more than lambda_e * tolerance are vetoed.
  std::size_t choose_action(const nn::Tensor& g, const std::vector<double>& pi,
                            double explore_prob, RngStream& mc_rng) {
    std::size_t n = pi.size();
    std::size_t greedy = argmax_row(pi);
    std::vector<safety::PcvEstimate> estimates(n);
    for (std::size_t a = 0; a < n; ++a) {
      std::vector<std::size_t> plan(cfg_.ensemble.horizon, greedy);
      plan[0] = a;
      estimates[a] = safety::predict_pcv(store_, cfg_.ensemble, g, plan, mc_rng);
    }
    std::size_t safest =
        safety::select_risk_averse_action(estimates, cfg_.ensemble.lambda_e, cfg_.ensemble.lambda_v);
    double band =
        safety::joint_cost(estimates[safest], cfg_.ensemble.lambda_e, cfg_.ensemble.lambda_v) +
        cfg_.ensemble.lambda_e * cfg_.ensemble.safety_tolerance;
    std::vector<std::size_t> allowed;
    for (std::size_t a = 0; a < n; ++a) {
      if (safety::joint_cost(estimates[a], cfg_.ensemble.lambda_e, cfg_.ensemble.lambda_v) <= band)
        allowed.push_back(a);
    }

    if (explore_prob > 0.0 && explore_.uniform() < explore_prob)
      return allowed[explore_.uniform_int(allowed.size())];
    if (cfg_.acting == ActingMode::risk_averse_only) return safest;
    std::size_t pick = allowed[0];
    for (std::size_t a : allowed)
      if (pi[a] > pi[pick]) pick = a;
    return pick;
  }

  // One prioritized batch in two phases sharing the samples: TD losses for
  // the three value heads plus policy distillation at the non-terminal
  // successors step through the value optimizer, then a streaming-bootstrap
  // update of the violation ensemble steps through its own. Each sample runs
  // on its own tape so gradients accumulate in the store across the batch;
  // the ensemble sees the context encodings detached.
  StepLosses train_step(double eps, double beta) {
    std::vector<SampleRef> batch = buffer_.sample(cfg_.batch_size, beta, replay_rng_);
    double denom = static_cast<double>(batch.size());
    std::size_t nonterminal = 0;
    for (const SampleRef& s : batch)
      if (s.t + 1 < s.episode->steps.size()) ++nonterminal;

    StepLosses losses;
    std::vector<std::size_t> ids;
    std::vector<double> td_abs;
    ids.reserve(batch.size());
    td_abs.reserve(batch.size());
    struct PcvItem {
      const Episode* episode;
      std::size_t t;
      nn::Tensor g;
    };
    std::vector<PcvItem> pcv_items;
    pcv_items.reserve(batch.size());

    for (const SampleRef& s : batch) {
      const Episode& ep = *s.episode;
      const TrajStep& step = ep.steps[s.t];
      bool next_terminal = (s.t + 1 == ep.steps.size());

      nn::Tape tape(true);
      nn::Var g_t{0};
      nn::Var g_next{0};
      nn::Tensor g_next_value;
      if (cfg_.stale_encodings) {
        g_t = tape.leaf(ep.encodings[s.t]);
        if (!next_terminal) {
          g_next_value = ep.encodings[s.t + 1];
          g_next = tape.leaf(g_next_value);
        }
      } else {
        std::size_t end = next_terminal ? s.t : s.t + 1;
        std::vector<nn::Var> outs = encode_range(tape, ep, end);
        g_t = next_terminal ? outs.back() : outs[outs.size() - 2];
        if (!next_terminal) {
          g_next = outs.back();
          g_next_value = tape.value(g_next);
        }
      }

      TargetValues tv = targets_for(step, next_terminal, g_next_value, eps);

      nn::Var qv = q_values(tape, store_, cfg_.heads, "q", g_t);
      nn::Var dv = q_values(tape, store_, cfg_.heads, "qd", g_t);
      nn::Var tvV = qt_values(tape, store_, cfg_.heads, "qt", g_t);
      double td_q = tape.value(qv)[step.action] - tv.y;
      double td_d = tape.value(dv)[step.action] - tv.y_d;
      double td_t = tape.value(tvV)[step.action] - tv.y_t;
      double w = s.weight / denom;

      std::vector<nn::Var> terms;
      terms.push_back(tape.scale(tape.square(tape.sub(tape.pick(qv, step.action),
                                                      tape.constant(tv.y))), w));
      terms.push_back(tape.scale(tape.square(tape.sub(tape.pick(dv, step.action),
                                                      tape.constant(tv.y_d))), w));
      terms.push_back(tape.scale(tape.square(tape.sub(tape.pick(tvV, step.action),
                                                      tape.constant(tv.y_t))), w));
      losses.q += tape.value(terms[0])[0];
      losses.qd += tape.value(terms[1])[0];
      losses.qt += tape.value(terms[2])[0];

      if (!next_terminal) {
        nn::Var pol = policy_row(tape, store_, cfg_.heads, "pi", g_next);
        nn::Tensor target = nn::Tensor::zeros({tv.pi_next.size()});
        for (std::size_t a = 0; a < tv.pi_next.size(); ++a) target.data[a] = tv.pi_next[a];
        terms.push_back(tape.scale(tape.js_to_target(pol, target),
                                   1.0 / static_cast<double>(nonterminal)));
      }

      pcv_items.push_back({s.episode, s.t, tape.value(g_t)});

      tape.backward(tape.add_all(std::move(terms)));
      ids.push_back(s.id);
      td_abs.push_back(std::max({std::abs(td_q), std::abs(td_d), std::abs(td_t)}));
    }

    if (!cfg_.stale_encodings && cfg_.pipeline.encoder.span_penalty != 0.0) {
      nn::Tape tape(true);
      tape.backward(enc::span_penalty_term(tape, store_, cfg_.pipeline.encoder));
    }
    opt_values_.step(store_);

    for (const PcvItem& item : pcv_items) {
      nn::Tape tape(true);
      tape.backward(pcv_loss(tape, *item.episode, item.t, item.g, losses));
    }
    opt_pcv_.step(store_);

    clamp_spans(store_, cfg_.pipeline.encoder);
    buffer_.update_priorities(ids, td_abs);
    return losses;
  }

  // Re-encodes the stored trajectory prefix ending at token `end` (capped to
  // the context window) and returns the encodings of every window position.
  std::vector<nn::Var> encode_range(nn::Tape& tape, const Episode& ep, std::size_t end) {
    std::size_t window = cfg_.pipeline.window();
    std::size_t lo = end + 1 > window ? end + 1 - window : 0;
    std::vector<nn::Var> tokens;
    tokens.reserve(end - lo + 1);
    for (std::size_t k = lo; k <= end; ++k) {
      nn::Tensor ex = k == 0 ? enc::token_extras(-1, 0.0, 0.0)
                             : enc::token_extras(static_cast<int>(ep.steps[k - 1].action),
                                                 ep.steps[k - 1].cost, ep.steps[k - 1].constraint);
      tokens.push_back(enc::embed_token(tape, store_, cfg_.pipeline.embed, ep.steps[k].obs, ex));
    }
    return enc::encoder_forward(tape, store_, cfg_.pipeline.encoder, tokens);
  }

  TargetValues targets_for(const TrajStep& step, bool next_terminal,
                           const nn::Tensor& g_next_value, double eps) {
    if (next_terminal) {
      return compute_targets(step.cost, step.constraint, false, true, cfg_.gamma, {}, {}, {}, {},
                             eps);
    }
    nn::Tape t(false);
    nn::Var g = t.leaf(g_next_value);
    std::vector<double> qn = row_values(t, q_values(t, store_, cfg_.heads, "tgt.q", g));
    std::vector<double> dn = row_values(t, q_values(t, store_, cfg_.heads, "tgt.qd", g));
    std::vector<double> tn = row_values(t, qt_values(t, store_, cfg_.heads, "tgt.qt", g));
    std::vector<double> base;
    if (warmed_up()) {
      base = row_values(t, policy_row(t, store_, cfg_.heads, "base.pi", g));
    } else {
      base.assign(cfg_.heads.n_actions, 1.0 / static_cast<double>(cfg_.heads.n_actions));
    }
    return compute_targets(step.cost, step.constraint, false, false, cfg_.gamma, qn, dn, tn, base,
                           eps);
  }

  // Streaming bootstrap: each member sees this sample a Poisson(1) number of
  // times. The violation label covers the ensemble horizon starting at t.
  nn::Var pcv_loss(nn::Tape& tape, const Episode& ep, std::size_t t, const nn::Tensor& g,
                   StepLosses& losses) {
    const safety::EnsembleConfig& ec = cfg_.ensemble;
    std::vector<std::size_t> plan(ec.horizon, grid::kStayAction);
    std::vector<double> window;
    window.reserve(ec.horizon);
    for (std::size_t k = 0; k < ec.horizon && t + k < ep.steps.size(); ++k) {
      plan[k] = ep.steps[t + k].action;
      window.push_back(ep.steps[t + k].constraint);
    }
    int label;
    if (ec.episode_level_labels) {
      double cum = 0.0;
      for (const TrajStep& s : ep.steps) cum += s.constraint;
      label = safety::label_violation_episode(cum, cfg_.d0);
    } else {
      label = safety::label_violation(window);
    }

    nn::Tensor feats = safety::pcv_features(ec, g, plan);
    std::vector<nn::Var> terms;
    double scale = static_cast<double>(ec.members) * static_cast<double>(cfg_.batch_size);
    for (std::size_t b = 0; b < ec.members; ++b) {
      std::size_t count = safety::poisson_count(boot_);
      if (count == 0) continue;
      nn::Var logit = safety::member_logit(tape, store_, ec, b, tape.leaf(feats),
                                           nn::Mode::train, dropout_);
      terms.push_back(tape.scale(tape.bce_with_logits(logit, static_cast<double>(label)),
                                 static_cast<double>(count) / scale));
    }
    if (terms.empty()) return tape.constant(0.0);
    nn::Var total = tape.add_all(std::move(terms));
    losses.pcv += tape.value(total)[0];
    return total;
  }

  static nn::AdamConfig pcv_adam(const TrainConfig& cfg) {
    nn::AdamConfig a = cfg.adam;
    a.lr = cfg.lr_pcv;
    return a;
  }

  grid::GridSpec spec_;
  TrainConfig cfg_;
  std::uint64_t seed_;
  grid::GridWorld env_;
  nn::ParamStore store_;
  nn::AdamState opt_values_, opt_pcv_;
  ReplayBuffer buffer_;
  RngStream explore_, dropout_, mc_, boot_, replay_rng_;
  std::vector<MetricsRow> metrics_;
  std::size_t iter_ = 0;
  std::size_t episodes_ = 0;
  std::size_t violations_ = 0;
};

}  // namespace saferl::sdqn
