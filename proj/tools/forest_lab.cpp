// forest-lab: runs one simulation experiment and writes <experiment>.csv and
// manifest.json into the output directory.
//
// Settings are resolved as defaults < --config file < command-line flags.
// Exit status: 0 success, 2 configuration error, 3 runtime error.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <map>
#include <string>

#include "crf/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  unsigned threads = 1;
  std::size_t trees = 100;
  std::uint64_t beta_seed = 0;
  int depth = 0;
  bool equal_beta = false;

  CLI::Option* config_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
  CLI::Option* trees_opt = nullptr;
  CLI::Option* beta_seed_opt = nullptr;
  CLI::Option* depth_opt = nullptr;
  CLI::Option* equal_beta_opt = nullptr;
};

const char* describe(crf::ExperimentKind kind) {
  using crf::ExperimentKind;
  switch (kind) {
    case ExperimentKind::RiskSweep: return "Monte Carlo risk of the forest over a grid of n and k_n";
    case ExperimentKind::Decompose: return "bias / variance split of the risk";
    case ExperimentKind::Overlap: return "expected cell overlap of two independent trees";
    case ExperimentKind::Multinomial: return "exact and Monte Carlo multinomial halving expectations";
    case ExperimentKind::AdaptiveHist: return "split counts K_j of adaptive trees on a linear model";
    case ExperimentKind::LearnProbs: return "root selection frequencies of the CART-style split rule";
    case ExperimentKind::BoundsTable: return "rate exponents by sparsity";
    case ExperimentKind::Consistency: return "pointwise risk at fixed points over growing n";
  }
  return "";
}

crf::ExperimentConfig resolve(crf::ExperimentKind kind, const Flags& f) {
  crf::ExperimentConfig config = crf::default_config(kind);
  if (f.config_opt->count() > 0) config = crf::load_config(f.config, std::move(config));
  if (f.seed_opt->count() > 0) config.seed = f.seed;
  if (f.out_opt->count() > 0) config.out_dir = f.out;
  if (f.threads_opt->count() > 0) config.threads = f.threads;
  if (f.trees_opt->count() > 0) config.trees = f.trees;
  if (f.beta_seed_opt && f.beta_seed_opt->count() > 0) config.beta_seed = f.beta_seed;
  if (f.depth_opt && f.depth_opt->count() > 0) config.depth = f.depth;
  if (f.equal_beta_opt && f.equal_beta_opt->count() > 0) config.equal_beta = f.equal_beta;
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulations for centered random forests"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(crf::kLibraryVersion));

  std::map<CLI::App*, crf::ExperimentKind> commands;
  std::map<CLI::App*, Flags> flags;
  for (crf::ExperimentKind kind : crf::all_experiments()) {
    CLI::App* sub = app.add_subcommand(crf::to_string(kind), describe(kind));
    commands[sub] = kind;
    Flags& f = flags[sub];
    f.config_opt = sub->add_option("--config", f.config, "JSON config file (a manifest.json also works)")
                       ->check(CLI::ExistingFile);
    f.seed_opt = sub->add_option("--seed", f.seed, "root seed");
    f.out_opt = sub->add_option("--out", f.out, "output directory");
    f.threads_opt = sub->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
    f.trees_opt = sub->add_option("--trees", f.trees, "trees per forest (M)")->check(CLI::PositiveNumber);
    if (kind == crf::ExperimentKind::AdaptiveHist) {
      f.beta_seed_opt = sub->add_option("--beta-seed", f.beta_seed, "seed for beta ~ U[-1,1]^d");
      f.depth_opt = sub->add_option("--depth", f.depth, "splits per tree")->check(CLI::NonNegativeNumber);
      f.equal_beta_opt = sub->add_flag("--equal-beta", f.equal_beta, "use beta = (1, ..., 1)");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  crf::ExperimentConfig config;
  try {
    config = resolve(commands.at(sub), flags.at(sub));
  } catch (const crf::ConfigError& e) {
    std::cerr << "forest-lab: config error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    const crf::RunResult result = crf::run(config);
    std::cout << "wrote " << result.csv.string() << " (" << result.rows << " rows) and "
              << result.manifest.string() << " in " << result.seconds << " s\n";
  } catch (const crf::ConfigError& e) {
    std::cerr << "forest-lab: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "forest-lab: error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
