#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "blastlab/gridworld.hpp"
#include "blastlab/marl.hpp"
#include "blastlab/rng.hpp"

namespace blastlab {

/// One forward pass of the inspected agent: its penultimate activation, the
/// action it greedily chose, and the ground-truth poison flag (true iff the
/// step lies inside an attack window).
struct ActivationRecord {
  int observation_id = 0;
  int action = 0;
  std::vector<double> activation;
  bool poisoned = false;
};

struct ActivationSet {
  int activation_width = 0;
  std::vector<ActivationRecord> records;

  std::vector<int> ids_with_action(int action) const;
};

/// Greedy rollouts of the assembled team; one record per forward pass of the
/// inspected agent (team.blast_agent). When a trigger is supplied the
/// attacker is armed every episode and steps inside attack windows are
/// flagged poisoned.
ActivationSet collect_activations(const TeamAssembly& team, const EnvConfig& env_cfg,
                                  int episodes, std::uint64_t seed,
                                  const TriggerSpec* trigger, int attack_period);

void write_activations_csv(const std::string& path, const ActivationSet& set);

/// Dense row-major matrix helper for the detector math.
struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> data;

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

/// Center the rows and project onto the top `dims` principal directions
/// (symmetric-eigen decomposition of the covariance). Ranks below `dims`
/// pad with zero components.
struct PcaResult {
  Matrix projected;
  std::vector<double> eigenvalues;  // all, descending
};
PcaResult pca_project(const Matrix& x, int dims = 3);

/// Best-of-restarts Lloyd's algorithm; converged when assignments stabilize.
struct KmeansResult {
  std::vector<int> labels;
  Matrix centroids;
  double within_ss = 0.0;
};
KmeansResult kmeans(const Matrix& x, int k, std::uint64_t seed, int restarts = 10);

/// Squared projection of each centered row onto the top singular direction.
std::vector<double> spectral_scores(const Matrix& x);

/// Precision/recall for the flag set plus rank-statistic ROC-AUC of the
/// scores against ground truth. Unavailable entries are nullopt (no flags ->
/// precision undefined; no positives -> recall/AUC undefined).
struct DetectionScores {
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> auc;
};
DetectionScores detection_metrics(const std::vector<int>& flagged_ids,
                                  const std::vector<std::uint8_t>& ground_truth,
                                  const std::vector<double>& scores);

/// Full detector reports, grouped by action class.
struct ActionClassReport {
  int action = 0;
  int count = 0;
  int cluster_small = 0;  // smaller cluster size (activation clustering)
  int cluster_large = 0;
  double silhouette = 0.0;
  std::vector<int> flagged_ids;
};

struct DetectionReport {
  std::string method;  // "activation-clustering" | "spectral-signature"
  std::vector<ActionClassReport> classes;
  std::vector<int> flagged_ids;  // union over classes
  DetectionScores scores;
};

/// Activation clustering: 3-dim PCA per action class, 2-means, flag the
/// smaller cluster when its share is below `small_cluster_threshold`.
DetectionReport activation_clustering_defense(const ActivationSet& set, std::uint64_t seed,
                                              double small_cluster_threshold = 0.35);

/// Spectral signature: per action class, flag the top
/// floor(multiplier * expected_poison_rate * class size) scores.
DetectionReport spectral_signature_defense(const ActivationSet& set,
                                           double expected_poison_rate,
                                           double multiplier = 1.5);

std::string detection_report_to_json(const DetectionReport& report);
void save_detection_report(const std::string& path, const DetectionReport& report);

/// Mean silhouette over points for a 2-cluster labeling (0 when degenerate).
double silhouette_score(const Matrix& x, const std::vector<int>& labels);

/// Symmetric eigensolver (cyclic Jacobi). Returns eigenvalues descending and
/// the matching eigenvectors as matrix columns.
void symmetric_eigen(const Matrix& a, std::vector<double>& eigenvalues, Matrix& eigenvectors);

}  // namespace blastlab
