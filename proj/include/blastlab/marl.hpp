#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "blastlab/gridworld.hpp"
#include "blastlab/nn.hpp"
#include "blastlab/rng.hpp"
#include "blastlab/trigger.hpp"

namespace blastlab {

enum class Algorithm : std::uint8_t { VDN, QMIX };

const char* algorithm_name(Algorithm a);
std::optional<Algorithm> algorithm_from_name(const std::string& name);

/// Exact sum of per-agent chosen utilities (the VDN joint value).
double vdn_qtot(std::span<const double> agent_qs);

/// State-conditioned monotonic mixing network. Hypernetworks produce the
/// mixing weights through an absolute-value transform, so dQtot/dQi >= 0.
class QmixMixer {
 public:
  QmixMixer() = default;
  QmixMixer(int n_agents, int state_size, Rng& rng, int embed = 32);

  /// agent_qs:[B,n], states:[B,S] -> [B].
  Tensor mix(const Tensor& agent_qs, const Tensor& states) const;

  /// Convenience for a single row of inputs.
  double mix_one(std::span<const double> agent_qs, std::span<const double> state) const;

  std::vector<std::pair<std::string, Tensor>> named_parameters();
  std::vector<Tensor> parameters();

  /// Deep copy with freshly allocated parameters (target network use).
  QmixMixer independent_clone() const;

  int n_agents() const { return n_agents_; }
  int embed() const { return embed_; }

 private:
  int n_agents_ = 0;
  int embed_ = 0;
  Linear hw1_a, hw1_b;  // state -> hidden -> n*embed
  Linear hb1;           // state -> embed
  Linear hw2_a, hw2_b;  // state -> hidden -> embed
  Linear hv_a, hv_b;    // state -> hidden -> 1
};

void hard_update_mixer(QmixMixer& source, QmixMixer& target);

// ---- replay -----------------------------------------------------------------

/// One finished episode in packed form. Observations and global states are
/// rematerialized from the packed world snapshots when a batch is built;
/// rewards are stored explicitly (they may carry reward hacks).
struct StoredEpisode {
  std::vector<std::uint8_t> packed_states;  // (length+1) * stride
  std::vector<std::uint8_t> actions;        // length * agents_stored
  std::vector<double> rewards;              // length (team reward)
  int length = 0;
  int agents_stored = 0;
  bool poisoned = false;
};

/// Ring buffer of episodes with uniform sampling (with replacement, so a
/// partially filled buffer can still serve full batches).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity = 5000) : capacity_(capacity) {}

  void insert(StoredEpisode ep);
  std::vector<const StoredEpisode*> sample(int batch, Rng& rng) const;
  int size() const { return static_cast<int>(episodes_.size()); }
  int capacity() const { return capacity_; }
  const StoredEpisode& at(int i) const { return episodes_[static_cast<std::size_t>(i)]; }

 private:
  int capacity_;
  std::deque<StoredEpisode> episodes_;
};

/// Padded episode batch, sorted by decreasing length so the training loop can
/// process a shrinking packed prefix. Masked entries contribute zero loss.
struct EpisodeBatch {
  int n_episodes = 0;
  int n_agents = 0;  // agent rows materialized per episode
  int t_max = 0;
  int obs_size = 0;
  int state_size = 0;
  std::vector<int> lengths;                  // per episode, descending
  std::vector<std::vector<double>> obs;      // t_max+1 entries of [n_episodes*n_agents, obs_size]
  std::vector<std::vector<double>> states;   // t_max+1 entries of [n_episodes, state_size]
  std::vector<std::vector<int>> actions;     // t_max entries of [n_episodes*n_agents]
  std::vector<std::vector<double>> rewards;  // t_max entries of [n_episodes]
  std::vector<std::vector<double>> mask;     // t_max entries of [n_episodes]; 1 inside episode

  /// Episodes alive at step t (valid because lengths are sorted descending).
  int alive_at(int t) const;
};

/// Rebuilds observations/states from packed episodes. `agent_ids` selects
/// which agents' observation rows to materialize (all agents for team
/// training, just the backdoored agent for single-agent retraining).
EpisodeBatch make_batch(const std::vector<const StoredEpisode*>& eps, const EnvConfig& cfg,
                        const std::vector<int>& agent_ids);

// ---- values and TD loss -------------------------------------------------------

/// Value head shared by training and evaluation: VDN sums utilities, QMIX
/// mixes them through the monotonic mixer.
struct ValueHead {
  Algorithm algo = Algorithm::VDN;
  std::optional<QmixMixer> mixer;  // engaged iff algo == QMIX

  Tensor join(const Tensor& agent_qs, const Tensor& states) const;
  std::vector<Tensor> parameters();
};

/// Masked mean of squared TD errors over the batch:
///   (Qtot(t) - [r_t + gamma * max_a Qtot_target(t+1)])^2,
/// with terminal steps using r_t alone. Throws ContractError when the batch
/// mask is empty.
Tensor td_loss(const EpisodeBatch& batch, RecurrentQNetwork& online, ValueHead& head,
               RecurrentQNetwork& target, ValueHead& target_head, double gamma);

// ---- action selection ---------------------------------------------------------

/// Epsilon-greedy over a batch of observation rows; advances hidden rows.
/// With probability sigma an action is uniform, otherwise argmax with ties
/// to the lowest index. Draw order is one uniform01 per row, plus one
/// uniform_int inside the explore branch.
struct SelectResult {
  std::vector<int> actions;
  std::vector<double> next_hidden;  // [rows, hidden]
  std::vector<double> chosen_q;
};

/// All pursuers' observations flattened into contiguous rows.
std::vector<double> team_obs_rows_for(const GridWorld& world);
SelectResult select_actions(const RecurrentQNetwork& net,
                            const std::vector<double>& obs_rows, int rows,
                            const std::vector<double>& hidden_rows, double sigma, Rng* rng);

// ---- training -----------------------------------------------------------------

struct TrainConfig {
  int episodes = 1500;
  int batch_size = 32;
  int buffer_capacity = 5000;
  double sigma = 0.05;  // greedy factor
  double gamma = 0.99;
  double learning_rate = 5e-4;
  int target_update_interval = 200;
  double rmsprop_decay = 0.99;
  double rmsprop_epsilon = 1e-5;
  double grad_clip_norm = 10.0;
  int qmix_embed = 32;
  int hidden1 = 128;  // input/GRU width
  int hidden2 = 64;   // penultimate width
};

struct CurvePoint {
  int episode = 0;
  int steps = 0;
  double reward_clean = 0.0;     // this episode's return when clean
  double reward_poisoned = 0.0;  // this episode's return when poisoned (else NaN)
  double loss = 0.0;             // NaN before the first update
};

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve);

struct TrainedPolicy {
  RecurrentQNetwork net;
  ValueHead head;
  Algorithm algo = Algorithm::VDN;
  std::vector<CurvePoint> curve;
};

/// Cooperative CTDE training with a parameter-shared recurrent Q-network,
/// one optimization step per collected episode, and hard target updates.
/// Fully deterministic for a fixed (config, seed).
TrainedPolicy train_clean(const EnvConfig& env_cfg, Algorithm algo, const TrainConfig& tc,
                          std::uint64_t seed,
                          const std::function<void(const CurvePoint&)>& on_episode = {});

// ---- evaluation ----------------------------------------------------------------

/// Teammates run `clean_net`; when `blast_net` is set it drives the agent at
/// `blast_agent` instead.
struct TeamAssembly {
  RecurrentQNetwork* clean_net = nullptr;
  RecurrentQNetwork* blast_net = nullptr;
  int blast_agent = 0;
};

struct EvalOptions {
  int episodes = 100;
  std::uint64_t seed = 0;
  const TriggerSpec* trigger = nullptr;  // armed every episode when present
  int attack_period = 40;                // window length for log annotation
  std::string trajectory_dir;            // when set, one JSONL log per episode
};

struct EvalReport {
  int episodes = 0;
  double mean_reward = 0.0;
  double std_reward = 0.0;
  double success_rate = 0.0;  // all evaders captured within the limit
  double mean_length = 0.0;
  double mean_captures = 0.0;
  int fired_episodes = 0;
  std::vector<double> episode_rewards;
  std::vector<int> fire_steps;  // -1 when the trigger never fired
};

/// Greedy rollouts (sigma = 0) over fresh episodes with per-episode seeds.
EvalReport evaluate_policy(const TeamAssembly& team, const EnvConfig& env_cfg,
                           const EvalOptions& opts);

}  // namespace blastlab
