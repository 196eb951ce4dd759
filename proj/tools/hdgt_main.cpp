// Command-line front end: scene generation, dual-branch pipeline runs,
// upsampler training, scaling benchmarks, and standalone detection.
// Exit codes: 0 success, 2 configuration error, 3 missing artifact,
// 4 numerical failure. Diagnostics go to stderr; data goes to files.
#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hdgt/config.hpp"
#include "hdgt/errors.hpp"
#include "hdgt/pipeline.hpp"

namespace {

struct CliState {
  std::string config_path;
  std::string out_dir;
  bool out_set = false;
  std::uint64_t seed = 0;
  bool seed_set = false;

  // run/detect extras
  std::string scene_dir;
  std::string checkpoint_dir;
  std::string gating;     // "", "on", "off"
  std::string upsampler;  // "", "learned", "bilinear"
  std::string grid = "K=16,64,256;N=2,4,8";
};

hdgt::RunConfig materialize(const CliState& cli) {
  hdgt::RunConfig cfg =
      cli.config_path.empty() ? hdgt::default_run_config() : hdgt::load_run_config(cli.config_path);
  if (cli.out_set) cfg.out_dir = cli.out_dir;
  if (cli.seed_set) cfg.seed = cli.seed;
  if (!cli.scene_dir.empty()) cfg.scene_dir = cli.scene_dir;
  if (!cli.checkpoint_dir.empty()) cfg.checkpoint_dir = cli.checkpoint_dir;
  if (!cli.gating.empty()) {
    if (cli.gating != "on" && cli.gating != "off")
      throw hdgt::ConfigError("--gating expects on or off, got \"" + cli.gating + "\"");
    cfg.gating = cli.gating == "on";
  }
  if (!cli.upsampler.empty()) {
    if (cli.upsampler != "learned" && cli.upsampler != "bilinear")
      throw hdgt::ConfigError("--upsampler expects learned or bilinear, got \"" + cli.upsampler +
                              "\"");
    cfg.upsampler_mode = cli.upsampler;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical dual-branch geometry transformer toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  CliState cli;
  app.add_option("--config", cli.config_path, "JSON config file (defaults apply when absent)");
  app.add_option("--out", cli.out_dir, "artifact directory")->each([&cli](const std::string&) {
    cli.out_set = true;
  });
  app.add_option("--seed", cli.seed, "scene seed override")->each([&cli](const std::string&) {
    cli.seed_set = true;
  });

  CLI::App* generate = app.add_subcommand("generate", "render a synthetic scene to disk");
  CLI::App* run = app.add_subcommand("run", "full dual-branch pipeline with optional gating");
  run->add_option("--gating", cli.gating, "on|off: apply the key-gated second pass");
  run->add_option("--upsampler", cli.upsampler, "learned|bilinear feature upsampling");
  run->add_option("--scene", cli.scene_dir, "existing scene directory (default: generate inline)");
  run->add_option("--checkpoint", cli.checkpoint_dir, "upsampler checkpoint directory");
  CLI::App* train = app.add_subcommand("train-upsampler", "train the guided feature upsampler");
  CLI::App* bench = app.add_subcommand("bench", "attention FLOP scaling benchmark");
  bench->add_option("--grid", cli.grid, "token/view grid, e.g. K=16,64,256;N=2,4,8");
  CLI::App* detect = app.add_subcommand("detect", "pass-1 + anomaly modulation on one scene");
  detect->add_option("--scene", cli.scene_dir, "existing scene directory (default: generate inline)");
  detect->add_option("--upsampler", cli.upsampler, "learned|bilinear feature upsampling");
  detect->add_option("--checkpoint", cli.checkpoint_dir, "upsampler checkpoint directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    const hdgt::RunConfig cfg = materialize(cli);
    if (generate->parsed()) {
      hdgt::cmd_generate(cfg);
      std::cerr << "scene written to " << cfg.out_dir << "\n";
    } else if (run->parsed()) {
      hdgt::cmd_run(cfg);
      std::cerr << "run artifacts written to " << cfg.out_dir << "\n";
    } else if (train->parsed()) {
      hdgt::cmd_train_upsampler(cfg);
      std::cerr << "training artifacts written to " << cfg.out_dir << "\n";
    } else if (bench->parsed()) {
      hdgt::cmd_bench(cfg, cli.grid);
      std::cerr << "benchmark written to " << cfg.out_dir << "\n";
    } else if (detect->parsed()) {
      hdgt::cmd_detect(cfg);
      std::cerr << "detection artifacts written to " << cfg.out_dir << "\n";
    }
  } catch (const hdgt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const hdgt::ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const hdgt::MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 3;
  } catch (const hdgt::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
