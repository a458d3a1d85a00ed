#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "tweezer/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Single-atom tweezer loading simulator and analysis pipeline"};
  app.require_subcommand(1, 1);

  std::string config_path;
  tweezer::cli::Overrides ov;
  std::uint64_t seed = 0;
  std::string out, input;
  std::size_t traps = 0;
  double duration = 0.0;

  for (const auto& name : tweezer::cli::subcommands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "INI configuration file")->required();
    sub->add_option("--seed", seed, "master RNG seed (overrides run.seed)");
    sub->add_option("--out", out, "output directory (overrides run.output_dir)");
    sub->add_option("--traps", traps, "number of traps")->check(CLI::PositiveNumber);
    sub->add_option("--duration", duration, "simulated duration in seconds")->check(CLI::PositiveNumber);
    sub->add_option("--input", input, "input directory for analyze");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  const auto* chosen = app.get_subcommands().front();
  if (chosen->count("--seed")) ov.seed = seed;
  if (chosen->count("--out")) ov.out = out;
  if (chosen->count("--traps")) ov.traps = traps;
  if (chosen->count("--duration")) ov.duration = duration;
  if (chosen->count("--input")) ov.input = input;

  try {
    const auto config = tweezer::cli::Config::load(config_path);
    return tweezer::cli::execute(config, chosen->get_name(), ov, std::cout, std::cerr);
  } catch (const tweezer::cli::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
