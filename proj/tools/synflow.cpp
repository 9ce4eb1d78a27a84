// synflow: train, sample and evaluate synthesis-aware GFlowNets.
#include <iostream>

#include "CLI11.hpp"

#include "synflow/commands.hpp"
#include "synflow/logging.hpp"

int main(int argc, char** argv) {
  using namespace synflow;
  CLI::App app{"GFlowNet over reaction templates and building blocks"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  std::optional<std::string> checkpoint;
  const std::map<std::string, std::string> help = {
      {"train", "train P_F and log Z (and P_B per backward_mode); writes metrics.csv and checkpoints"},
      {"sample", "sample terminal molecules from a checkpoint and export routes.jsonl"},
      {"eval", "sample from a checkpoint and write eval.csv (diversity, modes, novelty)"},
      {"enumerate", "enumerate the terminal set; writes terminals.txt and count.txt"},
      {"routes", "solved-route rates of the checkpoint's P_B versus uniform on train and test terminals"},
      {"estimate-space", "compare exp(log Z) of a constant-reward model with the exact terminal count"},
      {"gradcheck", "finite-difference check of the full TB loss gradient"}};
  for (const auto& verb : commands::verbs()) {
    CLI::App* sub = app.add_subcommand(verb, help.at(verb));
    sub->add_option("--config", config_path, "TOML run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->add_option("--threads", threads, "cap on worker threads")->check(CLI::PositiveNumber);
    if (verb == "sample" || verb == "eval" || verb == "routes" || verb == "estimate-space")
      sub->add_option("--checkpoint", checkpoint, "model checkpoint")->check(CLI::ExistingFile);
  }
  CLI11_PARSE(app, argc, argv);
  try {
    init_logging();
    auto cfg = config::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.out = *out_dir;
    if (threads) cfg.threads = *threads;
    commands::CommandOptions opts;
    if (checkpoint) opts.checkpoint = *checkpoint;
    return commands::run_command(app.get_subcommands().front()->get_name(), cfg, opts, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
