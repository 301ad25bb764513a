#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "saferl/grid.hpp"
#include "saferl/harness.hpp"
#include "saferl/nn.hpp"
#include "saferl/sdqn.hpp"

using namespace saferl;
using namespace saferl::harness;

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Independent oracles.
// ---------------------------------------------------------------------------

std::vector<double> naive_moving_average(const std::vector<double>& xs, std::size_t w) {
  std::vector<double> out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::size_t lo = i + 1 > w ? i + 1 - w : 0;
    double s = 0.0;
    for (std::size_t j = lo; j <= i; ++j) s += xs[j];
    out.push_back(s / static_cast<double>(i - lo + 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixtures.
// ---------------------------------------------------------------------------

fs::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  auto ticks = std::chrono::steady_clock::now().time_since_epoch().count();
  fs::path dir = fs::temp_directory_path() /
                 ("saferl-" + tag + "-" + std::to_string(ticks) + "-" + std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Obstacle-free 4x4 with tiny networks; trains in well under a second.
KvMap smoke_kv(const std::string& out_dir) {
  return {
      {"env.width", "4"},
      {"env.height", "4"},
      {"env.goal", "3:3"},
      {"env.explicit_layout", "true"},
      {"env.obstacles", ""},
      {"env.episode_cap", "12"},
      {"encoder.d_h", "8"},
      {"encoder.n_heads", "2"},
      {"encoder.span", "3"},
      {"encoder.layers", "1"},
      {"encoder.ramp", "2"},
      {"train.iterations", "6"},
      {"train.gradient_steps", "2"},
      {"train.batch_size", "8"},
      {"train.d0", "1"},
      {"train.target_sync_period", "4"},
      {"train.baseline_refresh_period", "3"},
      {"train.head_hidden", "8"},
      {"ensemble.members", "2"},
      {"ensemble.mc_passes", "2"},
      {"ensemble.horizon", "2"},
      {"ensemble.hidden", "6"},
      {"replay.capacity", "64"},
      {"experiment.seeds", "7"},
      {"experiment.eval_episodes", "2"},
      {"experiment.output_dir", out_dir},
  };
}

}  // namespace

TEST_CASE("config text parsing handles comments, duplicates, and overrides") {
  KvMap kv = parse_config_text(
      "# header comment\n"
      "\n"
      "  env.width = 6  \n"
      "train.gamma=0.9\n"
      "env.obstacles = 1:1 2:2\n");
  REQUIRE(kv.size() == 3);
  REQUIRE(kv.at("env.width") == "6");
  REQUIRE(kv.at("train.gamma") == "0.9");
  REQUIRE(kv.at("env.obstacles") == "1:1 2:2");

  REQUIRE_THROWS_AS(parse_config_text("env.width = 5\nenv.width = 6\n"), ValidationError);
  REQUIRE_THROWS_AS(parse_config_text("env.width 5\n"), ValidationError);
  REQUIRE_THROWS_AS(parse_config_text("= 5\n"), ValidationError);

  apply_overrides(kv, {"env.width=9", "train.gamma=0.5", "train.gamma=0.25"});
  REQUIRE(kv.at("env.width") == "9");
  REQUIRE(kv.at("train.gamma") == "0.25");
  REQUIRE_THROWS_AS(apply_overrides(kv, {"no-equals-sign"}), ValidationError);
}

TEST_CASE("resolved config serializes to a byte-stable fixed point") {
  KvMap kv = smoke_kv("runs/smoke");
  ExperimentConfig a = resolve_config(kv);
  std::string s1 = serialize_config(a);
  ExperimentConfig b = resolve_config(parse_config_text(s1));
  std::string s2 = serialize_config(b);
  REQUIRE(s1 == s2);

  // Every key the serializer emits must be accepted by the resolver.
  REQUIRE(s1.find("train.lr_pcv") != std::string::npos);
  REQUIRE(s1.find("experiment.rho_sweep =\n") != std::string::npos);

  // Defaults alone resolve and stay stable too.
  ExperimentConfig d = resolve_config({});
  std::string sd = serialize_config(d);
  REQUIRE(serialize_config(resolve_config(parse_config_text(sd))) == sd);
  REQUIRE(d.seeds == std::vector<std::uint64_t>{1});
  REQUIRE(d.train.adam.lr == 1e-4);
  REQUIRE(d.train.lr_pcv == 1e-4);
}

TEST_CASE("config resolution reports every violation at once") {
  KvMap kv;
  kv["env.width"] = "0";
  kv["train.gamma"] = "2.5";
  kv["no.such.key"] = "1";
  kv["train.batch_size"] = "abc";
  try {
    resolve_config(kv);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("no.such.key") != std::string::npos);
    REQUIRE(msg.find("gamma") != std::string::npos);
    REQUIRE(msg.find("train.batch_size") != std::string::npos);
    REQUIRE(msg.find("width") != std::string::npos);
  }

  KvMap empty_seeds;
  empty_seeds["experiment.seeds"] = "";
  REQUIRE_THROWS_AS(resolve_config(empty_seeds), ValidationError);
}

TEST_CASE("moving average matches the direct window computation") {
  REQUIRE_THROWS_AS(moving_average({1.0, 2.0}, 0), ParameterError);

  std::vector<double> constant(7, 5.0);
  REQUIRE(moving_average(constant, 3) == constant);

  std::vector<double> xs = {2.0, 4.0, 6.0, 8.0, 10.0};
  REQUIRE(moving_average(xs, 1) == xs);
  std::vector<double> expect = {2.0, 3.0, 5.0, 7.0, 9.0};
  REQUIRE(moving_average(xs, 2) == expect);

  RngStream rng(99, streams::test);
  std::vector<double> noisy;
  for (int i = 0; i < 40; ++i) noisy.push_back(rng.normal());
  for (std::size_t w : {1, 2, 5, 20, 100}) {
    std::vector<double> fast = moving_average(noisy, w);
    std::vector<double> slow = naive_moving_average(noisy, w);
    REQUIRE(fast.size() == slow.size());
    for (std::size_t i = 0; i < fast.size(); ++i)
      REQUIRE(fast[i] == Catch::Approx(slow[i]).margin(1e-12));
  }
}

TEST_CASE("evaluation reports carry hand-checked statistics") {
  // mean 2, sample sd exactly 1.
  EvalReport r = finalize_report({1.0, 2.0, 3.0}, {0.0, 5.0, 10.0}, 5.0);
  REQUIRE(r.mean_return == Catch::Approx(2.0));
  REQUIRE(r.return_ci95 == Catch::Approx(1.96 / std::sqrt(3.0)));
  REQUIRE(r.mean_constraint == Catch::Approx(5.0));
  REQUIRE(r.safety_rate == Catch::Approx(2.0 / 3.0));

  REQUIRE_THROWS_AS(finalize_report({1.0}, {0.0}, 1.0), ValidationError);
  REQUIRE_THROWS_AS(finalize_report({1.0, 2.0}, {0.0}, 1.0), DimensionError);

  // Replicating the sample four times shrinks the interval by exactly
  // 2 * sqrt((4n-1) / (4 (n-1))): the 1/sqrt(n) factor plus the n-1
  // correction in the sample deviation.
  std::vector<double> base = {3.0, -1.0, 0.5, 2.0, -0.5, 1.5, 4.0, -2.0};
  std::vector<double> rep4;
  for (int k = 0; k < 4; ++k) rep4.insert(rep4.end(), base.begin(), base.end());
  EvalReport small = finalize_report(base, std::vector<double>(base.size(), 0.0), 1.0);
  EvalReport big = finalize_report(rep4, std::vector<double>(rep4.size(), 0.0), 1.0);
  REQUIRE(small.return_ci95 / big.return_ci95 ==
          Catch::Approx(2.0 * std::sqrt(31.0 / 28.0)).margin(1e-12));
}

TEST_CASE("scripted stay policy earns the episode-cap cost and zero violations") {
  grid::GridSpec spec;
  spec.width = 5;
  spec.height = 5;
  spec.goal = {4, 4};
  spec.explicit_layout = true;
  spec.episode_cap = 30;
  EvalReport r = evaluate_scripted(spec, 4, 11, 1.0,
                                   [](std::size_t) { return grid::kStayAction; });
  REQUIRE(r.returns.size() == 4);
  for (double ret : r.returns) REQUIRE(ret == -30.0);
  for (double c : r.cum_constraints) REQUIRE(c == 0.0);
  REQUIRE(r.mean_return == -30.0);
  REQUIRE(r.return_ci95 == 0.0);
  REQUIRE(r.safety_rate == 1.0);

  // The recorded form of the same schedule runs to the cap with unit costs.
  sdqn::Episode ep = scripted_episode(spec, std::vector<std::size_t>(40, grid::kStayAction), 11);
  REQUIRE(ep.steps.size() == 30);
  for (const sdqn::TrajStep& s : ep.steps) {
    REQUIRE(s.cost == 1.0);
    REQUIRE(s.constraint == 0.0);
  }
  REQUIRE_THROWS_AS(scripted_episode(spec, {}, 11), ParameterError);
}

TEST_CASE("attention dumps are normalized, causal, and offset back to episode steps") {
  ExperimentConfig cfg = resolve_config(smoke_kv("unused"));
  sdqn::Trainer agent(cfg.env, cfg.train, 21);

  grid::GridWorld env(cfg.env, 21);
  RngStream mc(21, streams::evaluation);
  sdqn::EpisodeResult er = agent.play_episode(env, 0.0, mc);
  REQUIRE(!er.episode->steps.empty());

  std::size_t offset = 0;
  std::vector<enc::AttentionWeight> dump =
      episode_attention(agent.store(), cfg.train.pipeline, *er.episode, &offset);
  std::size_t window = cfg.train.pipeline.window();
  std::size_t len = er.episode->steps.size();
  REQUIRE(offset == (len > window ? len - window : 0));

  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, double> sums;
  for (const enc::AttentionWeight& w : dump) {
    REQUIRE(w.key >= -1);
    REQUIRE(w.key < static_cast<int>(w.query));  // keys strictly precede the query
    sums[{w.query, w.layer, w.head}] += w.weight;
  }
  REQUIRE(!sums.empty());
  for (const auto& [group, total] : sums) REQUIRE(total == Catch::Approx(1.0).margin(1e-9));

  // The CSV form shifts steps by the window offset and stays parseable.
  fs::path dir = fresh_dir("attn");
  write_text_file((dir / "attention.csv").string(), attention_csv(dump, offset));
  CsvTable t = read_csv((dir / "attention.csv").string());
  REQUIRE(t.columns ==
          std::vector<std::string>{"step", "layer", "head", "key_step", "weight"});
  REQUIRE(t.rows.size() == dump.size());
  for (const std::vector<double>& row : t.rows) {
    REQUIRE(row[t.column("step")] >= static_cast<double>(offset));
    REQUIRE(row[t.column("key_step")] >= -1.0);
    REQUIRE(row[t.column("key_step")] < row[t.column("step")]);
  }
  fs::remove_all(dir);

  // A single-step trajectory can only look at the begin token.
  sdqn::Episode one;
  one.steps.push_back({env.reset().payload, grid::kStayAction, 1.0, 0.0});
  std::vector<enc::AttentionWeight> single =
      episode_attention(agent.store(), cfg.train.pipeline, one, &offset);
  REQUIRE(offset == 0);
  REQUIRE(single.size() ==
          cfg.train.pipeline.encoder.layers * cfg.train.pipeline.encoder.n_heads);
  for (const enc::AttentionWeight& w : single) {
    REQUIRE(w.query == 0);
    REQUIRE(w.key == -1);
    REQUIRE(w.weight == Catch::Approx(1.0).margin(1e-12));
  }

  sdqn::Episode empty;
  REQUIRE_THROWS_AS(episode_attention(agent.store(), cfg.train.pipeline, empty, &offset),
                    ParameterError);
}

TEST_CASE("experiment runs write the full artifact set and reproduce byte for byte") {
  fs::path dir = fresh_dir("exp");
  ExperimentConfig cfg = resolve_config(smoke_kv((dir / "run").string()));
  run_experiment(cfg);

  fs::path seed_dir = dir / "run" / "seed7";
  REQUIRE(fs::exists(dir / "run" / "manifest.cfg"));
  for (const char* name :
       {"manifest.cfg", "metrics.csv", "eval.csv", "attention.csv", "checkpoint.manifest",
        "checkpoint.bin"}) {
    INFO(name);
    REQUIRE(fs::exists(seed_dir / name));
  }

  // The manifest is the resolved config, so re-resolving it reproduces the run.
  ExperimentConfig again = resolve_config(parse_config_text(read_file(seed_dir / "manifest.cfg")));
  REQUIRE(serialize_config(again) == serialize_config(cfg));

  CsvTable metrics = read_csv((seed_dir / "metrics.csv").string());
  REQUIRE(metrics.columns.front() == "iteration");
  REQUIRE(metrics.rows.size() == cfg.train.iterations);

  CsvTable eval = read_csv((seed_dir / "eval.csv").string());
  REQUIRE(eval.rows.size() == cfg.eval_episodes);

  fs::path dir2 = fresh_dir("exp-repeat");
  ExperimentConfig cfg2 = resolve_config(smoke_kv((dir2 / "run").string()));
  run_experiment(cfg2);
  REQUIRE(read_file(seed_dir / "metrics.csv") ==
          read_file(dir2 / "run" / "seed7" / "metrics.csv"));
  REQUIRE(read_file(seed_dir / "checkpoint.bin") ==
          read_file(dir2 / "run" / "seed7" / "checkpoint.bin"));

  // Plot data over the produced metrics matches the direct smoothing.
  std::string plot = plot_data_csv({{"smoke", (seed_dir / "metrics.csv").string()}}, 3);
  REQUIRE(plot.rfind("# moving_average_window=3\n", 0) == 0);
  std::istringstream lines(plot);
  std::string line;
  std::getline(lines, line);
  std::getline(lines, line);
  REQUIRE(line == "series,episode,return_smoothed,cum_constraint_smoothed");
  std::vector<double> rets;
  for (const std::vector<double>& row : metrics.rows) rets.push_back(row[metrics.column("return")]);
  std::vector<double> smooth = naive_moving_average(rets, 3);
  std::size_t i = 0;
  while (std::getline(lines, line)) {
    REQUIRE(line.rfind("smoke,", 0) == 0);
    std::vector<double> cells;
    std::istringstream cell_in(line.substr(6));
    std::string cell;
    while (std::getline(cell_in, cell, ',')) cells.push_back(parse_double(cell));
    REQUIRE(cells[0] == static_cast<double>(i));
    REQUIRE(cells[1] == Catch::Approx(smooth[i]).margin(1e-12));
    ++i;
  }
  REQUIRE(i == metrics.rows.size());

  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("checkpoint evaluation restores the trained agent without mutating it") {
  fs::path dir = fresh_dir("eval");
  ExperimentConfig cfg = resolve_config(smoke_kv((dir / "run").string()));
  run_experiment(cfg);
  fs::path seed_dir = dir / "run" / "seed7";
  std::string stem = (seed_dir / "checkpoint").string();

  std::string bin_before = read_file(seed_dir / "checkpoint.bin");
  EvalReport r = evaluate_checkpoint(stem, cfg, 3, 7);
  REQUIRE(r.returns.size() == 3);
  for (double ret : r.returns) {
    REQUIRE(std::isfinite(ret));
    REQUIRE(ret >= -static_cast<double>(cfg.env.episode_cap));
  }
  REQUIRE(r.safety_rate >= 0.0);
  REQUIRE(r.safety_rate <= 1.0);
  REQUIRE(read_file(seed_dir / "checkpoint.bin") == bin_before);

  // The refresh period divides the iteration count, so the stored agent acts
  // from its distilled baseline; the flag must survive the reload.
  sdqn::Trainer restored(cfg.env, cfg.train, 7);
  REQUIRE(!restored.warmed_up());
  nn::load_checkpoint(restored.store(), stem);
  REQUIRE(restored.warmed_up());

  // A mismatched architecture is rejected instead of silently reshaped.
  KvMap wide = smoke_kv((dir / "other").string());
  wide["encoder.d_h"] = "12";
  ExperimentConfig incompatible = resolve_config(wide);
  REQUIRE_THROWS_AS(evaluate_checkpoint(stem, incompatible, 2, 7), ValidationError);

  fs::remove_all(dir);
}

TEST_CASE("density sweeps fan out into one sub-experiment per density") {
  fs::path dir = fresh_dir("sweep");
  KvMap kv = smoke_kv((dir / "sweep").string());
  kv["train.iterations"] = "3";
  kv["experiment.rho_sweep"] = "0 0.25";
  ExperimentConfig cfg = resolve_config(kv);
  run_experiment(cfg);

  REQUIRE(fs::exists(dir / "sweep" / "manifest.cfg"));
  for (const char* sub : {"rho_0", "rho_0.25"}) {
    fs::path sub_dir = dir / "sweep" / sub;
    INFO(sub);
    REQUIRE(fs::exists(sub_dir / "manifest.cfg"));
    REQUIRE(fs::exists(sub_dir / "seed7" / "metrics.csv"));
    ExperimentConfig resolved =
        resolve_config(parse_config_text(read_file(sub_dir / "manifest.cfg")));
    REQUIRE(resolved.rho_sweep.empty());
    REQUIRE(!resolved.env.explicit_layout);
  }
  ExperimentConfig dense =
      resolve_config(parse_config_text(read_file(dir / "sweep" / "rho_0.25" / "manifest.cfg")));
  REQUIRE(dense.env.rho == 0.25);

  fs::remove_all(dir);
}
