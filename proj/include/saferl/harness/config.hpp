#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "saferl/core/errors.hpp"
#include "saferl/core/format.hpp"
#include "saferl/grid/gridworld.hpp"
#include "saferl/sdqn/trainer.hpp"

namespace saferl::harness {

// One declarative experiment: environment, full training stack, seeds, and
// artifact plumbing. Nested network shapes that must agree (token width,
// head input width, ensemble input width) are derived from the encoder width
// during resolution rather than being independent keys.
struct ExperimentConfig {
  grid::GridSpec env;
  sdqn::TrainConfig train;
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "runs/experiment";
  std::size_t eval_episodes = 100;
  std::vector<double> rho_sweep;  // non-empty: one sub-run per obstacle density
};

using KvMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ValidationError(key + ": expected true or false, got '" + v + "'");
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  long long n = 0;
  try {
    n = parse_int(v);
  } catch (const ValidationError&) {
    throw ValidationError(key + ": expected an integer, got '" + v + "'");
  }
  if (n < 0) throw ValidationError(key + ": must be non-negative");
  return static_cast<std::size_t>(n);
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const ValidationError&) {
    throw ValidationError(key + ": expected a number, got '" + v + "'");
  }
}

inline grid::Cell parse_cell(const std::string& key, const std::string& v) {
  std::size_t colon = v.find(':');
  if (colon == std::string::npos)
    throw ValidationError(key + ": expected row:col, got '" + v + "'");
  grid::Cell c;
  c.row = static_cast<int>(parse_count(key, v.substr(0, colon)));
  c.col = static_cast<int>(parse_count(key, v.substr(colon + 1)));
  return c;
}

inline std::vector<grid::Cell> parse_cells(const std::string& key, const std::string& v) {
  std::vector<grid::Cell> out;
  for (const std::string& tok : split_ws(v)) out.push_back(parse_cell(key, tok));
  return out;
}

inline std::vector<std::size_t> parse_counts(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const std::string& tok : split_ws(v)) out.push_back(parse_count(key, tok));
  return out;
}

inline std::vector<double> parse_reals(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const std::string& tok : split_ws(v)) out.push_back(parse_real(key, tok));
  return out;
}

inline std::string cell_text(grid::Cell c) {
  return std::to_string(c.row) + ":" + std::to_string(c.col);
}

template <typename T, typename Fn>
std::string join_text(const std::vector<T>& xs, Fn&& fn) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += " ";
    out += fn(xs[i]);
  }
  return out;
}

// Applies one dotted key. conv_channels is staged because the embedding
// config is derived from the environment afterwards.
inline void apply_key(ExperimentConfig& cfg, std::vector<std::size_t>& conv_channels,
                      const std::string& key, const std::string& v) {
  grid::GridSpec& env = cfg.env;
  enc::EncoderConfig& ec = cfg.train.pipeline.encoder;
  safety::EnsembleConfig& en = cfg.train.ensemble;
  sdqn::TrainConfig& tr = cfg.train;
  sdqn::ReplayConfig& rp = cfg.train.replay;

  if (key == "env.width") env.width = parse_count(key, v);
  else if (key == "env.height") env.height = parse_count(key, v);
  else if (key == "env.rho") env.rho = parse_real(key, v);
  else if (key == "env.explicit_layout") env.explicit_layout = parse_bool(key, v);
  else if (key == "env.obstacles") env.obstacles = parse_cells(key, v);
  else if (key == "env.start") env.start = parse_cell(key, v);
  else if (key == "env.goal") env.goal = parse_cell(key, v);
  else if (key == "env.delta") env.delta = parse_real(key, v);
  else if (key == "env.dynamic") env.dynamic = parse_bool(key, v);
  else if (key == "env.dynamic_count") env.dynamic_count = parse_count(key, v);
  else if (key == "env.mode") env.mode = grid::parse_obs_mode(v);
  else if (key == "env.window_w") env.window_w = parse_count(key, v);
  else if (key == "env.window_h") env.window_h = parse_count(key, v);
  else if (key == "env.episode_cap") env.episode_cap = parse_count(key, v);
  else if (key == "encoder.d_h") ec.d_h = parse_count(key, v);
  else if (key == "encoder.n_heads") ec.n_heads = parse_count(key, v);
  else if (key == "encoder.span") ec.span = parse_count(key, v);
  else if (key == "encoder.ramp") ec.ramp = parse_real(key, v);
  else if (key == "encoder.layers") ec.layers = parse_count(key, v);
  else if (key == "encoder.gate_bias_init") ec.gate_bias_init = parse_real(key, v);
  else if (key == "encoder.span_penalty") ec.span_penalty = parse_real(key, v);
  else if (key == "embed.conv_channels") conv_channels = parse_counts(key, v);
  else if (key == "pipeline.context_window") tr.pipeline.context_window = parse_count(key, v);
  else if (key == "ensemble.members") en.members = parse_count(key, v);
  else if (key == "ensemble.dropout") en.dropout = parse_real(key, v);
  else if (key == "ensemble.mc_passes") en.mc_passes = parse_count(key, v);
  else if (key == "ensemble.horizon") en.horizon = parse_count(key, v);
  else if (key == "ensemble.lambda_e") en.lambda_e = parse_real(key, v);
  else if (key == "ensemble.lambda_v") en.lambda_v = parse_real(key, v);
  else if (key == "ensemble.hidden") en.hidden = parse_counts(key, v);
  else if (key == "ensemble.episode_level_labels") en.episode_level_labels = parse_bool(key, v);
  else if (key == "ensemble.safety_tolerance") en.safety_tolerance = parse_real(key, v);
  else if (key == "train.iterations") tr.iterations = parse_count(key, v);
  else if (key == "train.gradient_steps") tr.train_steps = parse_count(key, v);
  else if (key == "train.batch_size") tr.batch_size = parse_count(key, v);
  else if (key == "train.gamma") tr.gamma = parse_real(key, v);
  else if (key == "train.d0") tr.d0 = parse_real(key, v);
  else if (key == "train.target_sync_period") tr.target_sync_period = parse_count(key, v);
  else if (key == "train.baseline_refresh_period") tr.baseline_refresh_period = parse_count(key, v);
  else if (key == "train.explore_start") tr.explore_start = parse_real(key, v);
  else if (key == "train.explore_end") tr.explore_end = parse_real(key, v);
  else if (key == "train.acting") tr.acting = sdqn::parse_acting_mode(v);
  else if (key == "train.stale_encodings") tr.stale_encodings = parse_bool(key, v);
  else if (key == "train.emit_wallclock") tr.emit_wallclock = parse_bool(key, v);
  else if (key == "train.lr") tr.adam.lr = parse_real(key, v);
  else if (key == "train.lr_pcv") tr.lr_pcv = parse_real(key, v);
  else if (key == "train.head_hidden") tr.heads.hidden = parse_counts(key, v);
  else if (key == "replay.capacity") rp.capacity = parse_count(key, v);
  else if (key == "replay.alpha") rp.alpha = parse_real(key, v);
  else if (key == "replay.beta_start") rp.beta_start = parse_real(key, v);
  else if (key == "replay.beta_end") rp.beta_end = parse_real(key, v);
  else if (key == "replay.floor") rp.floor = parse_real(key, v);
  else if (key == "experiment.seeds") {
    cfg.seeds.clear();
    for (std::size_t s : parse_counts(key, v)) cfg.seeds.push_back(s);
  } else if (key == "experiment.output_dir") cfg.output_dir = v;
  else if (key == "experiment.eval_episodes") cfg.eval_episodes = parse_count(key, v);
  else if (key == "experiment.rho_sweep") cfg.rho_sweep = parse_reals(key, v);
  else throw ValidationError("unknown config key: " + key);
}

}  // namespace detail

inline KvMap parse_config_text(const std::string& text) {
  KvMap kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + " has no '=': " + t);
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty()) throw ValidationError("config line " + std::to_string(lineno) + " has no key");
    if (!kv.emplace(key, value).second)
      throw ValidationError("duplicate config key: " + key);
  }
  return kv;
}

inline KvMap load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

// `--set key=value` pairs; later entries overwrite earlier ones and the file.
inline void apply_overrides(KvMap& kv, const std::vector<std::string>& overrides) {
  for (const std::string& item : overrides) {
    std::size_t eq = item.find('=');
    if (eq == std::string::npos)
      throw ValidationError("override must look like key=value, got '" + item + "'");
    kv[detail::trim(item.substr(0, eq))] = detail::trim(item.substr(eq + 1));
  }
}

// Defaults, overlaid keys, derived shapes, then validation. Every problem is
// reported, not just the first.
inline ExperimentConfig resolve_config(const KvMap& kv) {
  ExperimentConfig cfg;
  std::vector<std::size_t> conv_channels = cfg.train.pipeline.embed.conv_channels;
  std::vector<std::string> errors;
  for (const auto& [key, value] : kv) {
    try {
      detail::apply_key(cfg, conv_channels, key, value);
    } catch (const ValidationError& e) {
      errors.emplace_back(e.what());
    }
  }

  cfg.train.pipeline.embed =
      sdqn::embed_config_for(cfg.env, cfg.train.pipeline.encoder.d_h, conv_channels);
  cfg.train.heads.g_dim = cfg.train.pipeline.encoder.d_h;
  cfg.train.heads.n_actions = grid::kNumActions;
  cfg.train.ensemble.g_dim = cfg.train.pipeline.encoder.d_h;

  auto check = [&errors](auto&& fn) {
    try {
      fn();
    } catch (const ValidationError& e) {
      errors.emplace_back(e.what());
    }
  };
  check([&] { cfg.env.validate(); });
  check([&] { cfg.train.pipeline.validate(); });
  check([&] { cfg.train.heads.validate(); });
  check([&] { cfg.train.ensemble.validate(); });
  check([&] { cfg.train.replay.validate(); });
  check([&] { cfg.train.validate_fields(); });
  if (cfg.seeds.empty()) errors.emplace_back("experiment.seeds: need at least one seed");
  if (cfg.eval_episodes < 2)
    errors.emplace_back("experiment.eval_episodes: confidence intervals need at least two");
  if (cfg.output_dir.empty()) errors.emplace_back("experiment.output_dir: must not be empty");
  for (double r : cfg.rho_sweep)
    if (!(r >= 0.0 && r < 1.0)) {
      errors.emplace_back("experiment.rho_sweep: densities must lie in [0, 1)");
      break;
    }

  if (!errors.empty()) {
    std::string msg = "invalid experiment config:";
    for (const std::string& e : errors) msg += "\n  - " + e;
    throw ValidationError(msg);
  }
  return cfg;
}

// Canonical text form with every key materialized; parsing it back resolves
// to the same configuration byte for byte.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  const grid::GridSpec& env = cfg.env;
  const enc::EncoderConfig& ec = cfg.train.pipeline.encoder;
  const safety::EnsembleConfig& en = cfg.train.ensemble;
  const sdqn::TrainConfig& tr = cfg.train;
  const sdqn::ReplayConfig& rp = cfg.train.replay;
  using detail::cell_text;
  using detail::join_text;

  auto count_text = [](std::size_t n) { return std::to_string(n); };
  auto real_text = [](double x) { return format_double(x); };
  auto bool_text = [](bool b) { return std::string(b ? "true" : "false"); };

  std::vector<std::pair<std::string, std::string>> lines = {
      {"env.width", count_text(env.width)},
      {"env.height", count_text(env.height)},
      {"env.rho", real_text(env.rho)},
      {"env.explicit_layout", bool_text(env.explicit_layout)},
      {"env.obstacles", join_text(env.obstacles, cell_text)},
      {"env.start", cell_text(env.start)},
      {"env.goal", cell_text(env.goal)},
      {"env.delta", real_text(env.delta)},
      {"env.dynamic", bool_text(env.dynamic)},
      {"env.dynamic_count", count_text(env.dynamic_count)},
      {"env.mode", grid::obs_mode_name(env.mode)},
      {"env.window_w", count_text(env.window_w)},
      {"env.window_h", count_text(env.window_h)},
      {"env.episode_cap", count_text(env.episode_cap)},
      {"encoder.d_h", count_text(ec.d_h)},
      {"encoder.n_heads", count_text(ec.n_heads)},
      {"encoder.span", count_text(ec.span)},
      {"encoder.ramp", real_text(ec.ramp)},
      {"encoder.layers", count_text(ec.layers)},
      {"encoder.gate_bias_init", real_text(ec.gate_bias_init)},
      {"encoder.span_penalty", real_text(ec.span_penalty)},
      {"embed.conv_channels", join_text(tr.pipeline.embed.conv_channels, count_text)},
      {"pipeline.context_window", count_text(tr.pipeline.context_window)},
      {"ensemble.members", count_text(en.members)},
      {"ensemble.dropout", real_text(en.dropout)},
      {"ensemble.mc_passes", count_text(en.mc_passes)},
      {"ensemble.horizon", count_text(en.horizon)},
      {"ensemble.lambda_e", real_text(en.lambda_e)},
      {"ensemble.lambda_v", real_text(en.lambda_v)},
      {"ensemble.hidden", join_text(en.hidden, count_text)},
      {"ensemble.episode_level_labels", bool_text(en.episode_level_labels)},
      {"ensemble.safety_tolerance", real_text(en.safety_tolerance)},
      {"train.iterations", count_text(tr.iterations)},
      {"train.gradient_steps", count_text(tr.train_steps)},
      {"train.batch_size", count_text(tr.batch_size)},
      {"train.gamma", real_text(tr.gamma)},
      {"train.d0", real_text(tr.d0)},
      {"train.target_sync_period", count_text(tr.target_sync_period)},
      {"train.baseline_refresh_period", count_text(tr.baseline_refresh_period)},
      {"train.explore_start", real_text(tr.explore_start)},
      {"train.explore_end", real_text(tr.explore_end)},
      {"train.acting", sdqn::acting_mode_name(tr.acting)},
      {"train.stale_encodings", bool_text(tr.stale_encodings)},
      {"train.emit_wallclock", bool_text(tr.emit_wallclock)},
      {"train.lr", real_text(tr.adam.lr)},
      {"train.lr_pcv", real_text(tr.lr_pcv)},
      {"train.head_hidden", join_text(tr.heads.hidden, count_text)},
      {"replay.capacity", count_text(rp.capacity)},
      {"replay.alpha", real_text(rp.alpha)},
      {"replay.beta_start", real_text(rp.beta_start)},
      {"replay.beta_end", real_text(rp.beta_end)},
      {"replay.floor", real_text(rp.floor)},
      {"experiment.seeds", join_text(cfg.seeds, [](std::uint64_t s) { return std::to_string(s); })},
      {"experiment.output_dir", cfg.output_dir},
      {"experiment.eval_episodes", count_text(cfg.eval_episodes)},
      {"experiment.rho_sweep", join_text(cfg.rho_sweep, real_text)},
  };

  std::string out;
  for (const auto& [key, value] : lines) {
    out += key + " =";
    if (!value.empty()) out += " " + value;
    out += "\n";
  }
  return out;
}

}  // namespace saferl::harness
