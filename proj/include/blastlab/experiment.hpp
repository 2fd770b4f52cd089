#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blastlab/blast.hpp"
#include "blastlab/defense.hpp"
#include "blastlab/gridworld.hpp"
#include "blastlab/marl.hpp"
#include "blastlab/metrics.hpp"

namespace blastlab {

/// Declarative description of a full experiment. Serialized as JSON with a
/// versioned schema ("blastlab/config/1"); every run writes a resolved copy
/// (with provenance) beside its artifacts.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/pursuit-vdn";
  Algorithm algorithm = Algorithm::VDN;
  EnvConfig env;

  TrainConfig clean_train;
  TrainConfig blast_train;
  HackConfig hack;
  std::string trigger_path = "configs/triggers/trigger3.json";

  int collect_steps = 20000;
  double collect_stochastic_fraction = 0.5;

  int eval_episodes = 100;
  int eval_trajectories = 3;  // per condition, logged for analysis

  std::vector<double> sweep_lambdas = {0.0, 0.5, 1.0};
  std::vector<double> sweep_poison_rates = {0.02, 0.05, 0.2};
  int sweep_blast_episodes = 400;
  int sweep_eval_episodes = 100;

  int detect_episodes = 40;
  double detect_expected_poison_rate = 0.05;
  double detect_small_cluster_threshold = 0.35;
  double detect_spectral_multiplier = 1.5;

  void validate() const;
};

std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& text);

/// Loads a config file and applies `key.path=value` overrides (values parse
/// as JSON, falling back to strings). Overrides beat file values.
ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides);

/// FNV-1a over the canonical serialized form; provenance consistency check,
/// not a cryptographic digest.
std::uint64_t config_hash(const ExperimentConfig& cfg);

/// Resolves the output directory: relative paths land under the
/// BLASTLAB_OUTPUT_ROOT environment variable when it is set.
std::string resolve_out_dir(const ExperimentConfig& cfg);

/// Writes resolved_config.json with subcommand provenance into `dir`.
void write_provenance(const std::string& dir, const ExperimentConfig& cfg,
                      const std::string& subcommand);

// ---- pipeline stages -------------------------------------------------------
// Each stage writes its artifacts under resolve_out_dir(cfg)/<stage>/ and
// throws MissingArtifactError (naming the producing subcommand) when an
// upstream artifact is absent.

struct StagePaths {
  std::string root;
  std::string clean_checkpoint() const { return root + "/clean/checkpoint.bin"; }
  std::string clean_curve() const { return root + "/clean/curve.csv"; }
  std::string dataset() const { return root + "/dataset/transitions.jsonl"; }
  std::string failures() const { return root + "/failures/failure_observations.json"; }
  std::string blast_checkpoint() const { return root + "/blast/checkpoint.bin"; }
  std::string blast_curve() const { return root + "/blast/curve.csv"; }
  std::string blast_episodes() const { return root + "/blast/episodes.csv"; }
  std::string metrics_json() const { return root + "/eval/metrics.json"; }
  std::string metrics_csv() const { return root + "/eval/metrics.csv"; }
  std::string sweep_dir() const { return root + "/sweep"; }
  std::string sweep_table() const { return root + "/sweep/merged.csv"; }
};

StagePaths stage_paths(const ExperimentConfig& cfg);

void run_train_clean(const ExperimentConfig& cfg);
void run_collect(const ExperimentConfig& cfg);
void run_mine_failures(const ExperimentConfig& cfg);
void run_train_blast(const ExperimentConfig& cfg);
MetricsReport run_evaluate(const ExperimentConfig& cfg);
void run_sweep(const ExperimentConfig& cfg);
DetectionReport run_detect(const ExperimentConfig& cfg, const std::string& method);
void run_report(const ExperimentConfig& cfg);

/// Loads a policy network from a checkpoint file.
RecurrentQNetwork load_network(const std::string& path, const EnvConfig& env,
                               const TrainConfig& tc, const std::string& producer);

}  // namespace blastlab
