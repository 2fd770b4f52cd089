#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "blastlab/errors.hpp"
#include "blastlab/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitNumerical = 4;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed_override;
  std::string out_override;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides,
                  "override config values, e.g. --set blast_train.episodes=500");
  cmd->add_option("--seed", args.seed_override, "override the run seed");
  cmd->add_option("--out", args.out_override, "override the output directory");
}

blastlab::ExperimentConfig load(const CommonArgs& args) {
  std::vector<std::string> overrides = args.overrides;
  if (!args.seed_override.empty()) overrides.push_back("seed=" + args.seed_override);
  if (!args.out_override.empty()) overrides.push_back("out_dir=\"" + args.out_override + "\"");
  return blastlab::load_config(args.config_path, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blastlab: backdoor leverage attacks on cooperative multi-agent RL"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string detect_method;

  auto* train_clean = app.add_subcommand("train-clean", "train the clean team policy");
  add_common(train_clean, args);
  auto* collect = app.add_subcommand("collect", "collect transition tuples with the clean policy");
  add_common(collect, args);
  auto* mine = app.add_subcommand("mine-failures", "mine target failure observations");
  add_common(mine, args);
  auto* train_blast = app.add_subcommand("train-blast", "retrain one agent with the backdoor");
  add_common(train_blast, args);
  auto* evaluate = app.add_subcommand("evaluate", "measure attack metrics");
  add_common(evaluate, args);
  auto* sweep = app.add_subcommand("sweep", "run the lambda / poison-rate ablation grid");
  add_common(sweep, args);
  auto* detect_ac = app.add_subcommand("detect-ac", "run activation clustering detection");
  add_common(detect_ac, args);
  auto* detect_ss = app.add_subcommand("detect-ss", "run spectral signature detection");
  add_common(detect_ss, args);
  auto* report = app.add_subcommand("report", "merge sweep results into one table");
  add_common(report, args);

  CLI11_PARSE(app, argc, argv);

  try {
    const blastlab::ExperimentConfig cfg = load(args);
    if (train_clean->parsed()) {
      blastlab::run_train_clean(cfg);
    } else if (collect->parsed()) {
      blastlab::run_collect(cfg);
    } else if (mine->parsed()) {
      blastlab::run_mine_failures(cfg);
    } else if (train_blast->parsed()) {
      blastlab::run_train_blast(cfg);
    } else if (evaluate->parsed()) {
      const auto m = blastlab::run_evaluate(cfg);
      std::printf("cER=%.4f bER=%.4f bER_tg=%.4f", m.cER, m.bER, m.bER_tg);
      if (m.AER) std::printf(" AER=%.4f", *m.AER);
      if (m.CPVR) std::printf(" CPVR=%.4f", *m.CPVR);
      std::printf("\n");
    } else if (sweep->parsed()) {
      blastlab::run_sweep(cfg);
    } else if (detect_ac->parsed()) {
      const auto r = blastlab::run_detect(cfg, "ac");
      std::printf("activation clustering: flagged=%zu\n", r.flagged_ids.size());
    } else if (detect_ss->parsed()) {
      const auto r = blastlab::run_detect(cfg, "ss");
      std::printf("spectral signature: flagged=%zu\n", r.flagged_ids.size());
    } else if (report->parsed()) {
      blastlab::run_report(cfg);
    }
  } catch (const blastlab::MissingArtifactError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitMissing;
  } catch (const blastlab::NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumerical;
  } catch (const blastlab::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitOk;
}
