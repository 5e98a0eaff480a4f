// hypersynth unmix|pool|train|sample|eval --config <path> [--seed N] [--out DIR]

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hypersynth/core/error.hpp"
#include "hypersynth/pipeline/commands.hpp"
#include "hypersynth/pipeline/config.hpp"

namespace hp = hypersynth::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Synthetic abundance-map generation: unmixing, pooling, diffusion training, sampling, evaluation"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  const char* names[] = {"unmix", "pool", "train", "sample", "eval"};
  const char* help[] = {"run the unmixing methods over every input cube and endmember count",
                        "pool abundance patches into per-p training sets",
                        "train the diffusion denoiser on a pooled set",
                        "draw abundance patches from a checkpoint",
                        "compare generated patches with a reference set"};
  for (int i = 0; i < 5; ++i) {
    auto* sub = app.add_subcommand(names[i], help[i]);
    sub->add_option("--config", config_path, "pipeline config (JSON)")->required();
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--out", out_dir, "output directory (overrides the config)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    hp::PipelineConfig cfg = [&] {
      auto j = hp::read_json(config_path);
      if (seed) j["seed"] = *seed;
      if (out_dir) j["output_dir"] = std::filesystem::absolute(*out_dir).string();
      return hp::parse_config(j, std::filesystem::absolute(config_path).parent_path());
    }();
    nlohmann::json summary;
    if (cmd == "unmix") summary = hp::cmd_unmix(cfg);
    else if (cmd == "pool") summary = hp::cmd_pool(cfg);
    else if (cmd == "train") summary = hp::cmd_train(cfg);
    else if (cmd == "sample") summary = hp::cmd_sample(cfg);
    else summary = hp::cmd_eval(cfg);
    std::cout << summary.dump(2) << "\n";
    return 0;
  } catch (const hypersynth::ConfigError& e) {
    std::cerr << "hypersynth " << cmd << ": config error: " << e.what() << "\n";
    return 2;
  } catch (const hypersynth::IoError& e) {
    std::cerr << "hypersynth " << cmd << ": input error: " << e.what() << "\n";
    return 2;
  } catch (const hypersynth::NumericalError& e) {
    std::cerr << "hypersynth " << cmd << ": numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "hypersynth " << cmd << ": " << e.what() << "\n";
    return 1;
  }
}
