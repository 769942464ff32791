// Command-line front end: simulate | synthesize | convergence | carleman.
//
// Exit codes: 0 success, 2 configuration/validation failure, 3 numerical
// non-convergence (artifacts are still written in that case).

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "stochins/experiments.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::string out_dir;
  int threads = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool allow_disjoint = false;
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--config", opt.config_path, "configuration file")->required();
  cmd->add_option("--out", opt.out_dir, "output directory (default from config)");
  cmd->add_option("--threads", opt.threads, "worker thread cap");
  cmd->add_option("--seed", opt.seed, "seed override")->each([&](const std::string&) {
    opt.seed_set = true;
  });
  cmd->add_flag("--allow-disjoint-regions", opt.allow_disjoint,
                "permit disjoint control/observation regions (exploration)");
}

stochins::ExperimentConfig load(const CommonOptions& opt) {
  stochins::ExperimentConfig config = stochins::load_config(opt.config_path);
  if (opt.threads > 0) config.threads = opt.threads;
  if (opt.seed_set) config.seed = opt.seed;
  if (opt.allow_disjoint) config.allow_disjoint_regions = true;
  return config;
}

std::string out_dir(const CommonOptions& opt, const stochins::ExperimentConfig& config) {
  return opt.out_dir.empty() ? config.output_directory : opt.out_dir;
}

int finish(const stochins::RunArtifacts& artifacts) {
  if (!artifacts.message.empty()) std::cout << artifacts.message << "\n";
  for (const auto& f : artifacts.files) std::cout << "wrote " << f << "\n";
  return artifacts.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"insensitizing-control synthesis for stochastic heat equations "
               "with dynamic boundary conditions"};
  app.require_subcommand(1);

  CommonOptions sim_opt, syn_opt, conv_opt, carl_opt;
  int levels = 3;
  std::vector<double> lambda_grid = {1.0, 2.0, 5.0, 10.0, 20.0};

  CLI::App* simulate = app.add_subcommand("simulate", "solve the coupled cascade");
  add_common(simulate, sim_opt);
  CLI::App* synthesize =
      app.add_subcommand("synthesize", "penalized control synthesis + verification");
  add_common(synthesize, syn_opt);
  CLI::App* convergence =
      app.add_subcommand("convergence", "manufactured-solution refinement study");
  add_common(convergence, conv_opt);
  convergence->add_option("--levels", levels, "refinement levels (>= 2)");
  CLI::App* carleman =
      app.add_subcommand("carleman", "weighted-estimate ratio sweep + observability");
  add_common(carleman, carl_opt);
  carleman->add_option("--lambda-grid", lambda_grid, "lambda values")
      ->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      const auto config = load(sim_opt);
      return finish(stochins::run_simulate(config, out_dir(sim_opt, config)));
    }
    if (synthesize->parsed()) {
      const auto config = load(syn_opt);
      return finish(stochins::run_synthesize(config, out_dir(syn_opt, config)));
    }
    if (convergence->parsed()) {
      const auto config = load(conv_opt);
      return finish(stochins::run_convergence(config, levels, out_dir(conv_opt, config)));
    }
    if (carleman->parsed()) {
      const auto config = load(carl_opt);
      return finish(
          stochins::run_carleman(config, lambda_grid, out_dir(carl_opt, config)));
    }
  } catch (const stochins::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const stochins::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
