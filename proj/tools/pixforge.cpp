#include <iostream>

#include <CLI11.hpp>

#include "pixforge/commands.hpp"
#include "pixforge/log.hpp"

namespace {

struct Args {
  std::string config, resume, out, checkpoint, triples;
  std::uint64_t seed = 0;
};

pixforge::cli::CommandOptions to_options(const Args& a, const CLI::App& sub) {
  pixforge::cli::CommandOptions o;
  if (!a.config.empty()) o.config = a.config;
  if (!a.resume.empty()) o.resume = a.resume;
  if (!a.out.empty()) o.out = a.out;
  if (!a.checkpoint.empty()) o.checkpoint = a.checkpoint;
  if (!a.triples.empty()) o.triples = a.triples;
  if (sub.count("--seed") > 0) o.seed = a.seed;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pixforge: RL fine-tuning of a toy instruction-guided image editor"};
  app.require_subcommand(1);
  Args args;

  auto common = [&args](CLI::App* sub) {
    sub->add_option("--config", args.config, "Run configuration (key = value)");
    sub->add_option("--seed", args.seed, "Override the config seed (sample: triple seed)");
    sub->add_option("--out", args.out, "Run directory");
  };
  auto* pretrain = app.add_subcommand("pretrain", "Supervised denoising pretraining");
  common(pretrain);
  auto* train = app.add_subcommand("train", "PPO fine-tuning on the attention reward");
  common(train);
  train->add_option("--resume", args.resume, "Resume from a training checkpoint");
  auto* eval = app.add_subcommand("eval", "Metrics on held-out triples");
  common(eval);
  eval->add_option("--checkpoint", args.checkpoint, "Checkpoint to evaluate")->required();
  eval->add_option("--triples", args.triples, "Frozen triple directory instead of held-out seeds");
  auto* sample = app.add_subcommand("sample", "Edit one triple and write the images");
  common(sample);
  sample->add_option("--checkpoint", args.checkpoint, "Checkpoint to sample from")->required();
  auto* plot = app.add_subcommand("plot", "Reward curve SVG from a run's metrics.csv");
  common(plot);

  CLI11_PARSE(app, argc, argv);

  using namespace pixforge::cli;
  try {
    CLI::App* sub = app.get_subcommands().front();
    CommandOptions options = to_options(args, *sub);
    const std::string name = sub->get_name();
    if (name == "pretrain") return cmd_pretrain(options, std::cout);
    if (name == "train") return cmd_train(options, std::cout);
    if (name == "eval") return cmd_eval(options, std::cout);
    if (name == "sample") return cmd_sample(options, std::cout);
    if (name == "plot") return cmd_plot(options, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "pixforge: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
