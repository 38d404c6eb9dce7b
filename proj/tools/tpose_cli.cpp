#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tpose/harness/commands.hpp"

namespace {

enum Exit { kOk = 0, kValidation = 1, kRuntime = 2 };

}  // namespace

int main(int argc, char** argv) {
  using namespace tpose;
  CLI::App app{"Tactile pose estimation with a factored Bayes filter and belief-input PPO"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out, task, baseline, checkpoint;
  std::optional<std::uint64_t> seed;
  bool force = false, print_config = false;
  app.add_option("--config", config_path, "JSON experiment config (defaults apply to missing keys)");
  app.add_option("--seed", seed, "Master seed (overrides the config)");
  app.add_option("--out", out, "Output root directory (overrides the config)");
  app.add_option("--task", task, "Task (overrides the config)")->check(CLI::IsMember({"active", "reaching"}));
  app.add_option("--baseline", baseline, "Agent kind (overrides the config)")->check(CLI::IsMember({"tpn", "recurrent"}));
  app.add_flag("--force", force, "Replace an existing output directory");
  app.add_flag("--print-config", print_config, "Print the effective config before running");

  auto* gen = app.add_subcommand("gen", "Generate the object pool and the train/validation/holdout datasets");
  auto* train_obs = app.add_subcommand("train-obs", "Train the observation model and write top-k accuracy tables");
  auto* train_agent = app.add_subcommand("train-agent", "Train policies over all seeds and write learning curves");
  auto* eval = app.add_subcommand("eval", "Evaluate a trained policy on holdout objects");
  eval->add_option("--checkpoint", checkpoint, "Policy checkpoint (default: seed-0 of the matching agent run)");
  auto* demo = app.add_subcommand("filter-demo", "Log beliefs, likelihoods, and actions for one episode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kValidation;
  }

  try {
    auto cfg = config_path.empty() ? harness::default_config() : harness::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!out.empty()) cfg.out = out;
    if (!task.empty()) cfg.task = env::task_from_string(task);
    if (!baseline.empty()) cfg.baseline = harness::baseline_from_string(baseline);
    cfg.validate();
    if (print_config) std::cout << harness::to_json(cfg).dump(2) << std::endl;

    if (gen->parsed()) {
      harness::cmd_gen(cfg, force, &std::cout);
    } else if (train_obs->parsed()) {
      harness::cmd_train_obs(cfg, force, &std::cout);
    } else if (train_agent->parsed()) {
      harness::cmd_train_agent(cfg, force, &std::cout);
    } else if (eval->parsed()) {
      std::optional<std::filesystem::path> ckpt;
      if (!checkpoint.empty()) ckpt = checkpoint;
      harness::cmd_eval(cfg, force, ckpt, &std::cout);
    } else if (demo->parsed()) {
      harness::cmd_filter_demo(cfg, force, &std::cout);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kRuntime;
  }
  return kOk;
}
