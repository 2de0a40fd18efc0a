// cssl_cli: seeded semi-supervised experiments from YAML specs.
//
//   cssl_cli run        --spec S [--out D] [--seeds L] [--jobs N] [--strategy NAME]
//   cssl_cli synthetic  [--out D] [--seeds L] [--jobs N] [--data-seed N] [--iterations N]
//   cssl_cli efficiency --spec S [--out D] [--seeds L] [--jobs N] [--strategy NAME]
//   cssl_cli validate   --spec S
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.

#include <CLI11.hpp>

#include <iostream>

#include "experiment.hpp"

namespace {

using namespace cssl::cli;

struct Flags {
  std::string spec;
  std::string out;
  std::string seeds;
  std::string strategy;
  int jobs = 1;
  std::uint64_t data_seed = 0;
  int iterations = 100;
};

CommandOptions command_options(const Flags& f) {
  CommandOptions o;
  if (!f.out.empty()) o.out = f.out;
  if (!f.seeds.empty()) o.seeds = parse_seed_list(f.seeds);
  if (!f.strategy.empty()) o.strategy = f.strategy;
  o.jobs = f.jobs;
  o.log = &std::cerr;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Credal self-supervised learning experiments"};
  app.require_subcommand(1);
  Flags f;

  const auto add_common = [&](CLI::App* cmd, bool needs_spec) {
    auto* spec = cmd->add_option("--spec", f.spec, "Experiment spec (YAML)");
    if (needs_spec) spec->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", f.out, "Output directory (default: $CSSL_OUT_ROOT or ./cssl_out)");
    cmd->add_option("--seeds", f.seeds, "Seed list overriding the spec, e.g. 0,1,2 or 0-4");
    cmd->add_option("--jobs", f.jobs, "Parallel worker slots")->check(CLI::PositiveNumber);
  };

  auto* run = app.add_subcommand("run", "Train every (strategy, seed) cell of a spec");
  add_common(run, true);
  run->add_option("--strategy", f.strategy, "Run only the strategy with this name");

  auto* synthetic = app.add_subcommand("synthetic", "Hard vs soft vs credal self-training on the 1-D sigmoid task");
  add_common(synthetic, false);
  synthetic->add_option("--data-seed", f.data_seed, "Seed of the shared data set");
  synthetic->add_option("--iterations", f.iterations, "Self-training iterations")->check(CLI::NonNegativeNumber);

  auto* efficiency = app.add_subcommand("efficiency", "Reduced-budget comparison of CSSL, LSMatch and FixMatch");
  add_common(efficiency, true);
  efficiency->add_option("--strategy", f.strategy, "Run only this comparison entry (e.g. fixmatch_tau0.95)");

  auto* validate = app.add_subcommand("validate", "Check a spec without running it");
  validate->add_option("--spec", f.spec, "Experiment spec (YAML)")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) {
      const auto spec = load_spec(f.spec);
      return cmd_run(spec, command_options(f), std::cerr);
    }
    if (*efficiency) {
      const auto spec = load_spec(f.spec, false);
      return cmd_efficiency(spec, command_options(f), std::cerr);
    }
    if (*synthetic) {
      SyntheticOptions opt;
      if (!f.seeds.empty()) opt.seeds = parse_seed_list(f.seeds);
      opt.data_seed = f.data_seed;
      opt.train.iterations = f.iterations;
      const auto out = resolve_output(f.out.empty() ? std::nullopt : std::optional<fs::path>(f.out), "", "synthetic");
      return cmd_synthetic(opt, out, f.jobs, &std::cerr);
    }
    if (*validate) {
      const auto spec = load_spec(f.spec, false);
      std::cout << "ok: " << spec.strategies.size() << " strategies, " << spec.seeds.size() << " seeds, "
                << spec.train.total_steps << " steps\n";
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
