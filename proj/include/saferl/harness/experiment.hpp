#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "saferl/core/checkpoint.hpp"
#include "saferl/core/errors.hpp"
#include "saferl/core/format.hpp"
#include "saferl/core/rng.hpp"
#include "saferl/encoder/gtrxl.hpp"
#include "saferl/grid/gridworld.hpp"
#include "saferl/harness/config.hpp"
#include "saferl/sdqn/trainer.hpp"

namespace saferl::harness {

// Per-episode results of a greedy evaluation plus their summary statistics.
struct EvalReport {
  std::vector<double> returns;
  std::vector<double> cum_constraints;
  double mean_return = 0.0;
  double return_ci95 = 0.0;
  double mean_constraint = 0.0;
  double constraint_ci95 = 0.0;
  double safety_rate = 0.0;  // fraction of episodes within the budget
};

namespace detail {

inline double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline double ci95_of(const std::vector<double>& xs, double mean) {
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return 1.96 * sd / std::sqrt(static_cast<double>(xs.size()));
}

}  // namespace detail

inline EvalReport finalize_report(std::vector<double> returns, std::vector<double> cums,
                                  double d0) {
  if (returns.size() != cums.size())
    throw DimensionError("evaluation return and constraint series differ in length");
  if (returns.size() < 2)
    throw ValidationError("confidence intervals need at least two evaluation episodes");
  EvalReport r;
  r.returns = std::move(returns);
  r.cum_constraints = std::move(cums);
  r.mean_return = detail::mean_of(r.returns);
  r.return_ci95 = detail::ci95_of(r.returns, r.mean_return);
  r.mean_constraint = detail::mean_of(r.cum_constraints);
  r.constraint_ci95 = detail::ci95_of(r.cum_constraints, r.mean_constraint);
  std::size_t safe = 0;
  for (double c : r.cum_constraints)
    if (c <= d0) ++safe;
  r.safety_rate = static_cast<double>(safe) / static_cast<double>(r.cum_constraints.size());
  return r;
}

// Greedy rollouts with exploration off; the agent is read, never written.
inline EvalReport evaluate_agent(sdqn::Trainer& agent, std::size_t episodes, std::uint64_t seed) {
  grid::GridWorld env(agent.grid_spec(), seed);
  RngStream mc(seed, streams::evaluation);
  std::vector<double> returns, cums;
  returns.reserve(episodes);
  cums.reserve(episodes);
  for (std::size_t e = 0; e < episodes; ++e) {
    sdqn::EpisodeResult er = agent.play_episode(env, 0.0, mc);
    returns.push_back(er.ret);
    cums.push_back(er.cum_constraint);
  }
  return finalize_report(std::move(returns), std::move(cums), agent.config().d0);
}

inline EvalReport evaluate_checkpoint(const std::string& stem, const ExperimentConfig& cfg,
                                      std::size_t episodes, std::uint64_t seed) {
  sdqn::Trainer agent(cfg.env, cfg.train, seed);
  nn::load_checkpoint(agent.store(), stem);
  return evaluate_agent(agent, episodes, seed);
}

// Fixed action schedule instead of a learned policy; useful as a floor.
inline EvalReport evaluate_scripted(const grid::GridSpec& spec, std::size_t episodes,
                                    std::uint64_t seed, double d0,
                                    const std::function<std::size_t(std::size_t)>& action_at) {
  grid::GridWorld env(spec, seed);
  std::vector<double> returns, cums;
  returns.reserve(episodes);
  cums.reserve(episodes);
  for (std::size_t e = 0; e < episodes; ++e) {
    env.reset();
    double ret = 0.0, cum = 0.0;
    for (std::size_t t = 0;; ++t) {
      grid::StepResult sr = env.step(action_at(t));
      ret -= sr.cost;
      cum += sr.constraint_cost;
      if (sr.terminal) break;
    }
    returns.push_back(ret);
    cums.push_back(cum);
  }
  return finalize_report(std::move(returns), std::move(cums), d0);
}

// Replays a fixed action sequence and records it as an episode; stops early
// when the environment terminates.
inline sdqn::Episode scripted_episode(const grid::GridSpec& spec,
                                      const std::vector<std::size_t>& actions,
                                      std::uint64_t seed) {
  if (actions.empty()) throw ParameterError("scripted episode needs at least one action");
  grid::GridWorld env(spec, seed);
  grid::Observation obs = env.reset();
  sdqn::Episode ep;
  for (std::size_t action : actions) {
    grid::StepResult sr = env.step(action);
    ep.steps.push_back({obs.payload, action, sr.cost, sr.constraint_cost});
    if (sr.terminal) break;
    obs = sr.obs;
  }
  return ep;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file: " + path);
  out << content;
}

inline std::string metrics_csv_text(const std::vector<sdqn::MetricsRow>& rows) {
  std::string out = sdqn::metrics_csv_header() + "\n";
  for (const sdqn::MetricsRow& r : rows) out += sdqn::metrics_csv_row(r) + "\n";
  return out;
}

inline std::string eval_csv_text(const EvalReport& r) {
  std::string out = "episode,return,cum_constraint_cost\n";
  for (std::size_t e = 0; e < r.returns.size(); ++e) {
    out += std::to_string(e) + "," + format_double(r.returns[e]) + "," +
           format_double(r.cum_constraints[e]) + "\n";
  }
  return out;
}

// Numeric CSV with a named header; comment lines start with '#'.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw ValidationError("csv column not found: " + name);
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace detail

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open csv file: " + path);
  CsvTable table;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (table.columns.empty()) {
      table.columns = detail::split_csv_line(line);
      continue;
    }
    std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() != table.columns.size())
      throw ValidationError("csv row width mismatch in " + path);
    std::vector<double> row;
    row.reserve(cells.size());
    for (const std::string& c : cells) row.push_back(parse_double(c));
    table.rows.push_back(std::move(row));
  }
  if (table.columns.empty()) throw ValidationError("csv file has no header: " + path);
  return table;
}

// Trailing moving average; early entries average over what exists so far.
inline std::vector<double> moving_average(const std::vector<double>& xs, std::size_t window) {
  if (window == 0) throw ParameterError("moving average window must be positive");
  std::vector<double> out;
  out.reserve(xs.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sum += xs[i];
    if (i >= window) sum -= xs[i - window];
    out.push_back(sum / static_cast<double>(std::min(i + 1, window)));
  }
  return out;
}

struct LabeledSeries {
  std::string label;
  std::string path;  // a training metrics csv
};

inline std::string plot_data_csv(const std::vector<LabeledSeries>& inputs,
                                 std::size_t window = 20) {
  std::string out = "# moving_average_window=" + std::to_string(window) + "\n";
  out += "series,episode,return_smoothed,cum_constraint_smoothed\n";
  for (const LabeledSeries& input : inputs) {
    CsvTable t = read_csv(input.path);
    std::size_t ep_col = t.column("episode");
    std::size_t ret_col = t.column("return");
    std::size_t cum_col = t.column("cum_constraint_cost");
    std::vector<double> rets, cums;
    rets.reserve(t.rows.size());
    cums.reserve(t.rows.size());
    for (const std::vector<double>& row : t.rows) {
      rets.push_back(row[ret_col]);
      cums.push_back(row[cum_col]);
    }
    std::vector<double> rs = moving_average(rets, window);
    std::vector<double> cs = moving_average(cums, window);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      out += input.label + "," + std::to_string(static_cast<long long>(t.rows[i][ep_col])) +
             "," + format_double(rs[i]) + "," + format_double(cs[i]) + "\n";
    }
  }
  return out;
}

// Re-encodes the trailing context window of an episode and collects every
// attention weight. `offset_out` receives the absolute step index of the
// first encoded token so dump rows can be shifted back to episode steps.
inline std::vector<enc::AttentionWeight> episode_attention(nn::ParamStore& store,
                                                           const sdqn::PipelineConfig& pipeline,
                                                           const sdqn::Episode& ep,
                                                           std::size_t* offset_out = nullptr) {
  if (ep.steps.empty()) throw ParameterError("attention dump needs a non-empty episode");
  std::size_t window = pipeline.window();
  std::size_t lo = ep.steps.size() > window ? ep.steps.size() - window : 0;
  nn::Tape tape(false);
  std::vector<nn::Var> tokens;
  tokens.reserve(ep.steps.size() - lo);
  for (std::size_t k = lo; k < ep.steps.size(); ++k) {
    nn::Tensor ex = k == 0 ? enc::token_extras(-1, 0.0, 0.0)
                           : enc::token_extras(static_cast<int>(ep.steps[k - 1].action),
                                               ep.steps[k - 1].cost, ep.steps[k - 1].constraint);
    tokens.push_back(enc::embed_token(tape, store, pipeline.embed, ep.steps[k].obs, ex));
  }
  std::vector<enc::AttentionWeight> dump;
  enc::encoder_forward(tape, store, pipeline.encoder, tokens, &dump);
  if (offset_out) *offset_out = lo;
  return dump;
}

// Rows are (query step, layer, head, key step, weight); the begin token keeps
// key step -1. Weights for one (step, layer, head) group sum to one.
inline std::string attention_csv(const std::vector<enc::AttentionWeight>& rows,
                                 std::size_t offset) {
  std::string out = "step,layer,head,key_step,weight\n";
  for (const enc::AttentionWeight& w : rows) {
    long long key = w.key < 0 ? -1 : static_cast<long long>(w.key) + static_cast<long long>(offset);
    out += std::to_string(w.query + offset) + "," + std::to_string(w.layer) + "," +
           std::to_string(w.head) + "," + std::to_string(key) + "," + format_double(w.weight) +
           "\n";
  }
  return out;
}

// Trains one seed and writes its artifacts: the resolved manifest, the
// training metrics, the final weights, a greedy evaluation, and an attention
// dump of one greedy rollout.
inline void run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& dir) {
  std::filesystem::create_directories(dir);
  sdqn::Trainer agent(cfg.env, cfg.train, seed);
  agent.run();
  write_text_file(dir + "/manifest.cfg", serialize_config(cfg));
  write_text_file(dir + "/metrics.csv", metrics_csv_text(agent.metrics()));
  nn::save_checkpoint(agent.store(), dir + "/checkpoint");
  EvalReport report = evaluate_agent(agent, cfg.eval_episodes, seed);
  write_text_file(dir + "/eval.csv", eval_csv_text(report));

  grid::GridWorld env(cfg.env, seed);
  RngStream mc(seed, streams::evaluation);
  sdqn::EpisodeResult er = agent.play_episode(env, 0.0, mc);
  std::size_t offset = 0;
  std::vector<enc::AttentionWeight> dump =
      episode_attention(agent.store(), cfg.train.pipeline, *er.episode, &offset);
  write_text_file(dir + "/attention.csv", attention_csv(dump, offset));
}

// A sweep config fans out into one sub-experiment per obstacle density, each
// with its own materialized manifest; otherwise one directory per seed.
inline void run_experiment(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.output_dir);
  write_text_file(cfg.output_dir + "/manifest.cfg", serialize_config(cfg));
  if (!cfg.rho_sweep.empty()) {
    for (double rho : cfg.rho_sweep) {
      ExperimentConfig sub = cfg;
      sub.env.rho = rho;
      sub.env.explicit_layout = false;
      sub.env.obstacles.clear();
      sub.rho_sweep.clear();
      sub.output_dir = cfg.output_dir + "/rho_" + format_double(rho);
      run_experiment(sub);
    }
    return;
  }
  for (std::uint64_t seed : cfg.seeds)
    run_seed(cfg, seed, cfg.output_dir + "/seed" + std::to_string(seed));
}

inline ExperimentConfig run_experiment_file(const std::string& path,
                                            const std::vector<std::string>& overrides = {}) {
  KvMap kv = load_config_file(path);
  apply_overrides(kv, overrides);
  ExperimentConfig cfg = resolve_config(kv);
  run_experiment(cfg);
  return cfg;
}

}  // namespace saferl::harness
