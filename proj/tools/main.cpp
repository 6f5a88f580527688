#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "acceptance.hpp"
#include "idgan/cli.hpp"
#include "idgan/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Identity-disentangling GAN: training, synthesis, augmentation, evaluation"};
  app.require_subcommand(1);

  struct Args {
    std::string config_file;
    std::vector<std::string> assignments;
    std::optional<long long> seed;
    std::string output;
  };
  std::map<std::string, Args> args;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"train-gan", "Train the progressive conditional GAN"},
      {"generate", "Render existing/new/interpolate grids from a checkpoint"},
      {"augment", "Write a depth or width synthetic partition"},
      {"train-recognizer", "Train the residual identity classifier"},
      {"evaluate", "TAR@FAR on a verification protocol"},
      {"accept", "Run the acceptance suite"},
      {"make-sprites", "Write a procedural sprite dataset"},
      {"make-protocol", "Write random verification pairs for a folder dataset"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    auto& a = args[name];
    sub->add_option("-c,--config", a.config_file, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("-s,--set", a.assignments, "override, key=value (repeatable)");
    sub->add_option("--seed", a.seed, "random seed");
    sub->add_option("-o,--output", a.output, "output path");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (const auto& [name, help] : commands) {
    auto* sub = app.get_subcommand(name);
    if (!sub->parsed()) continue;
    auto& a = args[name];
    try {
      std::optional<std::filesystem::path> file;
      if (!a.config_file.empty()) file = a.config_file;
      auto assignments = a.assignments;
      if (a.seed) assignments.push_back("seed=" + std::to_string(*a.seed));
      if (!a.output.empty()) assignments.push_back("output=" + a.output);
      auto config = idgan::cli::make_config(name, file, assignments);
      if (name == "accept") return idgan::acceptance::run_suite(config, std::cout);
      return idgan::cli::run_command(config);
    } catch (const idgan::ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 2;
}
