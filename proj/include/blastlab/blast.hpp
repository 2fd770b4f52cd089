#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blastlab/gridworld.hpp"
#include "blastlab/marl.hpp"
#include "blastlab/nn.hpp"
#include "blastlab/trigger.hpp"

namespace blastlab {

/// Attack hyperparameters.
struct HackConfig {
  double lambda = 0.5;       // failure-state vs action-deviation trade-off
  double poison_rate = 0.05; // p: episode poisoning and batch-source probability
  int attack_period = 40;    // L: hacked-reward steps after a trigger fire
  int agent_index = 0;       // k: the backdoored agent
};

/// Observation transfer tuples (o_t, a_t, o_{t+1}, R_t). Collection runs
/// store packed world snapshots and rematerialize observations on demand;
/// synthetic datasets (tests) carry raw vectors.
class TransitionDataset {
 public:
  TransitionDataset() = default;
  explicit TransitionDataset(EnvConfig cfg);

  /// Packed-mode append.
  void add_transition(const WorldCore& state, const std::vector<Action>& actions,
                      const WorldCore& next_state, double team_reward);

  /// Raw-mode append (synthetic data).
  void add_raw(std::vector<std::vector<double>> obs, std::vector<int> actions,
               std::vector<std::vector<double>> next_obs, double team_reward);

  int size() const { return static_cast<int>(rewards_.size()); }
  double reward(int i) const { return rewards_[static_cast<std::size_t>(i)]; }
  std::vector<std::vector<double>> observations(int i) const;
  std::vector<std::vector<double>> next_observations(int i) const;
  std::vector<int> actions(int i) const;

  void save(const std::string& path) const;              // packed mode only
  static TransitionDataset load(const std::string& path);

 private:
  std::optional<EnvConfig> cfg_;
  int stride_ = 0;
  std::vector<std::uint8_t> packed_;  // 2 * stride bytes per tuple (s_t, s_{t+1})
  std::vector<std::uint8_t> acts_;    // n_pursuers per tuple
  std::vector<double> rewards_;

  std::vector<std::vector<std::vector<double>>> raw_obs_, raw_next_;
  std::vector<std::vector<int>> raw_acts_;
};

/// Rolls out the clean policy, mixing greedy steps with uniform-random joint
/// steps at the given fraction, until exactly `step_budget` transitions are
/// collected.
TransitionDataset collect_dataset(RecurrentQNetwork& clean_net, const EnvConfig& env_cfg,
                                  int step_budget, double stochastic_fraction,
                                  std::uint64_t seed);

/// Per-agent target failure observations with mining provenance.
struct FailureObservations {
  std::vector<std::vector<double>> observations;  // one per agent
  int dataset_size = 0;
  double min_reward = 0.0;
  int tuple_index = 0;
};

/// The next observations of the tuple with minimum team reward
/// (ties resolve to the earliest-collected tuple).
FailureObservations mine_failure_observations(const TransitionDataset& dataset);

void save_failure_observations(const std::string& path, const FailureObservations& fails);
FailureObservations load_failure_observations(const std::string& path);

/// Failure-state guidance term: -sum_{i != k} ||next_obs[i] - fails[i]||_2.
double reward_fs(const std::vector<std::vector<double>>& next_obs,
                 const FailureObservations& fails, int k);

/// Running min/max used to rescale hacked-reward terms onto the original
/// team-reward range.
struct RunningRange {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  std::int64_t count = 0;

  void update(double x);
  bool warmed() const { return count > 0; }
  double midpoint() const { return 0.5 * (lo + hi); }
};

/// Min-max rescale of `x` from its own running range onto the reward range;
/// a degenerate source range maps to the reward range midpoint.
double rescale_to(double x, const RunningRange& from, const RunningRange& to);

/// r_t = (1 - lambda) * scaled(r_fs) + lambda * scaled(r_ad).
/// Throws ContractError until the reward range has seen at least one value.
double normalize_and_combine(double fs, double ad, const RunningRange& fs_range,
                             const RunningRange& ad_range, const RunningRange& reward_range,
                             double lambda);

/// Plans the clean team's next joint action for a PEEKED world; must leave
/// every external state (networks, hiddens) untouched.
using NextActionsFn = std::function<std::vector<int>(const GridWorld&)>;

struct BranchOutcome {
  int deviations = 0;      // count of clean agents whose next action changed
  StepResult lived_step;   // branch B's step result (training continues here)
};

/// Two-branch action-deviation probe around one time step. Branch A steps
/// the world with the backdoored agent playing its clean action and reads
/// the teammates' planned responses; the world then rolls back (simulator
/// and RNG state) and branch B steps with the backdoored agent's own action.
/// The world is left in the branch-B state.
BranchOutcome action_deviation_branches(GridWorld& world, std::vector<Action> joint_clean,
                                        Action blast_action, int k,
                                        const NextActionsFn& next_actions,
                                        const std::map<int, Action>& evader_overrides);

// ---- retraining ------------------------------------------------------------

struct BlastEpisodeRow {
  int episode = 0;
  bool poisoned = false;
  int fire_step = -1;    // -1: trigger never completed
  int window_start = -1;
  int window_end = -1;   // inclusive; -1 when no window
  double reward = 0.0;   // original (unhacked) team return
};

struct BlastTrainResult {
  RecurrentQNetwork net;  // pi^b
  std::vector<CurvePoint> curve;
  std::vector<BlastEpisodeRow> episodes;
  RunningRange reward_range, fs_range, ad_range;
  int fired_episodes = 0;
};

void write_blast_episode_csv(const std::string& path,
                             const std::vector<BlastEpisodeRow>& rows);

/// Single-agent recurrent Q retraining of the backdoored agent with frozen
/// teammates, dual replay buffers routed by the episode poison flag, and
/// reward hacking during attack windows. Strictly single-threaded.
BlastTrainResult train_blast(RecurrentQNetwork& clean_net, const EnvConfig& env_cfg,
                             const TriggerSpec& trigger, const HackConfig& hack,
                             const FailureObservations& fails, const TrainConfig& tc,
                             std::uint64_t seed,
                             const std::function<void(const CurvePoint&)>& on_episode = {});

}  // namespace blastlab
