#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "saferl/grid.hpp"
#include "saferl/harness.hpp"
#include "saferl/nn.hpp"
#include "saferl/sdqn.hpp"

namespace fs = std::filesystem;
using namespace saferl;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

// The manifest written next to a checkpoint records the exact configuration
// that produced it.
harness::KvMap manifest_for_checkpoint(const std::string& stem) {
  fs::path manifest = fs::path(stem).parent_path() / "manifest.cfg";
  return harness::load_config_file(manifest.string());
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty()) {
    std::cout << content;
  } else {
    harness::write_text_file(out_path, content);
  }
}

int run_train(const std::string& config_path, const std::vector<std::string>& overrides) {
  harness::ExperimentConfig cfg = harness::run_experiment_file(config_path, overrides);
  std::cout << "wrote " << cfg.output_dir << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& config_path,
             std::size_t episodes, std::uint64_t seed) {
  harness::KvMap kv =
      config_path.empty() ? manifest_for_checkpoint(checkpoint) : harness::load_config_file(config_path);
  harness::ExperimentConfig cfg = harness::resolve_config(kv);
  harness::EvalReport r = harness::evaluate_checkpoint(checkpoint, cfg, episodes, seed);
  std::cout << "episodes " << r.returns.size() << "\n"
            << "mean_return " << format_double(r.mean_return) << " +/- "
            << format_double(r.return_ci95) << "\n"
            << "mean_constraint " << format_double(r.mean_constraint) << " +/- "
            << format_double(r.constraint_ci95) << "\n"
            << "safety_rate " << format_double(r.safety_rate) << "\n";
  return 0;
}

int run_gridworld_gen(std::size_t width, std::size_t height, double rho, std::uint64_t seed,
                      const std::string& out_path) {
  grid::GridSpec spec;
  spec.width = width;
  spec.height = height;
  spec.rho = rho;
  spec.goal = {static_cast<int>(height) - 1, static_cast<int>(width) - 1};
  spec.validate();
  grid::GridWorld env(spec, seed);
  env.reset();
  grid::save_map(spec, env.state().obstacles, out_path);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int run_plotdata(const std::vector<std::string>& inputs, std::size_t window,
                 const std::string& out_path) {
  std::vector<harness::LabeledSeries> series;
  series.reserve(inputs.size());
  for (const std::string& path : inputs) series.push_back({path, path});
  emit(out_path, harness::plot_data_csv(series, window));
  return 0;
}

// The scenario file reuses the config syntax: env.* keys override the
// training environment, scenario.actions gives the action sequence, and
// scenario.seed picks the rollout noise.
int run_attention(const std::string& checkpoint, const std::string& scenario_path,
                  const std::string& out_path) {
  harness::KvMap kv = manifest_for_checkpoint(checkpoint);
  std::vector<std::size_t> actions;
  std::uint64_t seed = 1;
  for (const auto& [key, value] : harness::load_config_file(scenario_path)) {
    if (key == "scenario.actions") {
      actions = harness::detail::parse_counts(key, value);
    } else if (key == "scenario.seed") {
      seed = harness::detail::parse_count(key, value);
    } else {
      kv[key] = value;
    }
  }
  harness::ExperimentConfig cfg = harness::resolve_config(kv);
  for (std::size_t a : actions) {
    if (a >= grid::kNumActions)
      throw ValidationError("scenario.actions: action out of range: " + std::to_string(a));
  }

  sdqn::Trainer agent(cfg.env, cfg.train, seed);
  nn::load_checkpoint(agent.store(), checkpoint);
  sdqn::Episode ep = harness::scripted_episode(cfg.env, actions, seed);
  std::size_t offset = 0;
  std::vector<enc::AttentionWeight> dump =
      harness::episode_attention(agent.store(), cfg.train.pipeline, ep, &offset);
  emit(out_path, harness::attention_csv(dump, offset));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridworld safety-constrained reinforcement learning toolkit"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, scenario_path, out_path;
  std::vector<std::string> overrides, inputs;
  std::size_t episodes = 100, window = 20, width = 5, height = 5;
  std::uint64_t seed = 1;
  double rho = 0.0;

  CLI::App* train = app.add_subcommand("train", "train an experiment from a config file");
  train->add_option("--config", config_path, "experiment config file")->required();
  train->add_option("--set", overrides, "key=value config overrides");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint with greedy rollouts");
  eval->add_option("--checkpoint", checkpoint, "checkpoint stem (without extension)")->required();
  eval->add_option("--episodes", episodes, "number of evaluation episodes");
  eval->add_option("--seed", seed, "evaluation seed");
  eval->add_option("--config", config_path, "config file (defaults to the run manifest)");

  CLI::App* gridworld = app.add_subcommand("gridworld", "environment utilities");
  CLI::App* gen = gridworld->add_subcommand("gen", "generate and save a random layout");
  gen->add_option("--width", width, "grid width");
  gen->add_option("--height", height, "grid height");
  gen->add_option("--rho", rho, "obstacle density");
  gen->add_option("--seed", seed, "layout seed");
  gen->add_option("--out", out_path, "output map file")->required();

  CLI::App* plotdata = app.add_subcommand("plotdata", "smooth training metrics for plotting");
  plotdata->add_option("inputs", inputs, "metrics.csv files")->required();
  plotdata->add_option("--window", window, "moving-average window");
  plotdata->add_option("--out", out_path, "output file (stdout when omitted)");

  CLI::App* attention = app.add_subcommand("attention", "dump attention weights for a scenario");
  attention->add_option("--checkpoint", checkpoint, "checkpoint stem")->required();
  attention->add_option("--scenario", scenario_path, "scenario file with env keys and actions")
      ->required();
  attention->add_option("--out", out_path, "output file (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*train) return run_train(config_path, overrides);
    if (*eval) return run_eval(checkpoint, config_path, episodes, seed);
    if (*gen) return run_gridworld_gen(width, height, rho, seed, out_path);
    if (*plotdata) return run_plotdata(inputs, window, out_path);
    if (*attention) return run_attention(checkpoint, scenario_path, out_path);
    if (*gridworld) {
      std::cerr << "gridworld needs a subcommand\n";
      return kExitValidation;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return 0;
}
