#include "blastlab/blast.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "blastlab/errors.hpp"

namespace blastlab {

using nlohmann::json;

// ---- dataset ------------------------------------------------------------------

TransitionDataset::TransitionDataset(EnvConfig cfg)
    : cfg_(cfg), stride_(packed_state_stride(cfg)) {}

void TransitionDataset::add_transition(const WorldCore& state,
                                       const std::vector<Action>& actions,
                                       const WorldCore& next_state, double team_reward) {
  if (!cfg_) throw ContractError("dataset not configured for packed transitions");
  const std::size_t base = packed_.size();
  packed_.resize(base + 2 * static_cast<std::size_t>(stride_));
  pack_state(state, *cfg_, packed_.data() + base);
  pack_state(next_state, *cfg_, packed_.data() + base + stride_);
  for (Action a : actions) acts_.push_back(static_cast<std::uint8_t>(a));
  rewards_.push_back(team_reward);
}

void TransitionDataset::add_raw(std::vector<std::vector<double>> obs,
                                std::vector<int> actions,
                                std::vector<std::vector<double>> next_obs,
                                double team_reward) {
  if (cfg_) throw ContractError("dataset configured for packed transitions");
  raw_obs_.push_back(std::move(obs));
  raw_acts_.push_back(std::move(actions));
  raw_next_.push_back(std::move(next_obs));
  rewards_.push_back(team_reward);
}

std::vector<std::vector<double>> TransitionDataset::observations(int i) const {
  if (!cfg_) return raw_obs_[static_cast<std::size_t>(i)];
  const WorldCore core =
      unpack_state(packed_.data() + 2 * static_cast<std::size_t>(i) * stride_, *cfg_, 0);
  std::vector<std::vector<double>> out;
  for (int a = 0; a < cfg_->n_pursuers; ++a) out.push_back(observation_from(core, *cfg_, a));
  return out;
}

std::vector<std::vector<double>> TransitionDataset::next_observations(int i) const {
  if (!cfg_) return raw_next_[static_cast<std::size_t>(i)];
  const WorldCore core = unpack_state(
      packed_.data() + (2 * static_cast<std::size_t>(i) + 1) * stride_, *cfg_, 0);
  std::vector<std::vector<double>> out;
  for (int a = 0; a < cfg_->n_pursuers; ++a) out.push_back(observation_from(core, *cfg_, a));
  return out;
}

std::vector<int> TransitionDataset::actions(int i) const {
  if (!cfg_) return raw_acts_[static_cast<std::size_t>(i)];
  std::vector<int> out;
  for (int a = 0; a < cfg_->n_pursuers; ++a)
    out.push_back(acts_[static_cast<std::size_t>(i) * cfg_->n_pursuers + a]);
  return out;
}

void TransitionDataset::save(const std::string& path) const {
  if (!cfg_) throw ContractError("only packed datasets serialize");
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write dataset: " + path);
  json header = {{"schema", "blastlab/transitions/1"},
                 {"n_pursuers", cfg_->n_pursuers},
                 {"n_evaders", cfg_->n_evaders},
                 {"width", cfg_->width},
                 {"height", cfg_->height},
                 {"window_radius", cfg_->window_radius},
                 {"step_limit", cfg_->step_limit},
                 {"count", size()}};
  os << header.dump() << "\n";
  for (int i = 0; i < size(); ++i) {
    json rec;
    auto dump_state = [&](std::size_t off) {
      json arr = json::array();
      for (int b = 0; b < stride_; ++b) arr.push_back(static_cast<int>(packed_[off + b]));
      return arr;
    };
    rec["s"] = dump_state(2 * static_cast<std::size_t>(i) * stride_);
    rec["s1"] = dump_state((2 * static_cast<std::size_t>(i) + 1) * stride_);
    rec["a"] = actions(i);
    rec["r"] = rewards_[static_cast<std::size_t>(i)];
    os << rec.dump() << "\n";
  }
}

TransitionDataset TransitionDataset::load(const std::string& path) {
  std::ifstream is(path);
  if (!is)
    throw MissingArtifactError("cannot open transition dataset: " + path, "collect");
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("empty dataset file: " + path);
  json header = json::parse(line);
  if (header.value("schema", "") != "blastlab/transitions/1")
    throw ConfigError("unknown dataset schema in " + path);
  EnvConfig cfg;
  cfg.n_pursuers = header["n_pursuers"].get<int>();
  cfg.n_evaders = header["n_evaders"].get<int>();
  cfg.width = header["width"].get<int>();
  cfg.height = header["height"].get<int>();
  cfg.window_radius = header["window_radius"].get<int>();
  cfg.step_limit = header["step_limit"].get<int>();
  TransitionDataset d(cfg);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    const std::size_t base = d.packed_.size();
    d.packed_.resize(base + 2 * static_cast<std::size_t>(d.stride_));
    for (int b = 0; b < d.stride_; ++b)
      d.packed_[base + static_cast<std::size_t>(b)] =
          static_cast<std::uint8_t>(rec["s"][static_cast<std::size_t>(b)].get<int>());
    for (int b = 0; b < d.stride_; ++b)
      d.packed_[base + static_cast<std::size_t>(d.stride_ + b)] =
          static_cast<std::uint8_t>(rec["s1"][static_cast<std::size_t>(b)].get<int>());
    for (const auto& a : rec["a"]) d.acts_.push_back(static_cast<std::uint8_t>(a.get<int>()));
    d.rewards_.push_back(rec["r"].get<double>());
  }
  return d;
}

TransitionDataset collect_dataset(RecurrentQNetwork& clean_net, const EnvConfig& env_cfg,
                                  int step_budget, double stochastic_fraction,
                                  std::uint64_t seed) {
  env_cfg.validate();
  TransitionDataset dataset(env_cfg);
  if (step_budget <= 0) return dataset;

  Rng rng = Rng(seed).child(rng_tags::kCollect);
  const int n = env_cfg.n_pursuers;

  GridWorld world = GridWorld::reset(env_cfg, rng.raw());
  std::vector<double> hiddens(static_cast<std::size_t>(n) * clean_net.hidden_size(), 0.0);

  while (dataset.size() < step_budget) {
    if (world.done()) {
      world = GridWorld::reset(env_cfg, rng.raw());
      std::fill(hiddens.begin(), hiddens.end(), 0.0);
    }
    const WorldCore before = world.core();
    std::vector<Action> acts(static_cast<std::size_t>(n), Action::Stay);
    const bool random_step = rng.uniform01() < stochastic_fraction;
    if (random_step) {
      // The hidden state still advances so later greedy steps stay coherent.
      const auto rows = team_obs_rows_for(world);
      auto sel = select_actions(clean_net, rows, n, hiddens, 0.0, nullptr);
      hiddens = std::move(sel.next_hidden);
      for (auto& a : acts) a = static_cast<Action>(rng.uniform_int(kNumActions));
    } else {
      const auto rows = team_obs_rows_for(world);
      auto sel = select_actions(clean_net, rows, n, hiddens, 0.0, nullptr);
      hiddens = std::move(sel.next_hidden);
      for (int i = 0; i < n; ++i) acts[static_cast<std::size_t>(i)] =
          static_cast<Action>(sel.actions[static_cast<std::size_t>(i)]);
    }
    StepResult res = world.step(acts);
    dataset.add_transition(before, acts, world.core(), res.team_reward);
  }
  return dataset;
}

// ---- failure mining ------------------------------------------------------------

FailureObservations mine_failure_observations(const TransitionDataset& dataset) {
  if (dataset.size() == 0)
    throw ContractError("mine_failure_observations: dataset is empty");
  int best = 0;
  double best_r = dataset.reward(0);
  for (int i = 1; i < dataset.size(); ++i) {
    const double r = dataset.reward(i);
    if (r < best_r) {  // strict: ties resolve to the earliest tuple
      best_r = r;
      best = i;
    }
  }
  FailureObservations fails;
  fails.observations = dataset.next_observations(best);
  fails.dataset_size = dataset.size();
  fails.min_reward = best_r;
  fails.tuple_index = best;
  return fails;
}

void save_failure_observations(const std::string& path, const FailureObservations& fails) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write failure observations: " + path);
  json j = {{"schema", "blastlab/failures/1"},
            {"dataset_size", fails.dataset_size},
            {"min_reward", fails.min_reward},
            {"tuple_index", fails.tuple_index},
            {"observations", fails.observations}};
  os << j.dump(2) << "\n";
}

FailureObservations load_failure_observations(const std::string& path) {
  std::ifstream is(path);
  if (!is)
    throw MissingArtifactError("cannot open failure observations: " + path, "mine-failures");
  json j = json::parse(is);
  if (j.value("schema", "") != "blastlab/failures/1")
    throw ConfigError("unknown failure-observations schema in " + path);
  FailureObservations fails;
  fails.dataset_size = j["dataset_size"].get<int>();
  fails.min_reward = j["min_reward"].get<double>();
  fails.tuple_index = j["tuple_index"].get<int>();
  fails.observations = j["observations"].get<std::vector<std::vector<double>>>();
  return fails;
}

double reward_fs(const std::vector<std::vector<double>>& next_obs,
                 const FailureObservations& fails, int k) {
  if (next_obs.size() != fails.observations.size())
    throw ContractError("reward_fs: agent count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < next_obs.size(); ++i) {
    if (static_cast<int>(i) == k) continue;
    const auto& a = next_obs[i];
    const auto& b = fails.observations[i];
    if (a.size() != b.size()) throw ContractError("reward_fs: observation shape mismatch");
    double d2 = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double d = a[j] - b[j];
      d2 += d * d;
    }
    total += std::sqrt(d2);
  }
  return -total;
}

// ---- reward normalization --------------------------------------------------------

void RunningRange::update(double x) {
  lo = std::min(lo, x);
  hi = std::max(hi, x);
  ++count;
}

double rescale_to(double x, const RunningRange& from, const RunningRange& to) {
  if (!from.warmed() || from.hi == from.lo) return to.midpoint();
  const double unit = (x - from.lo) / (from.hi - from.lo);
  return to.lo + unit * (to.hi - to.lo);
}

double normalize_and_combine(double fs, double ad, const RunningRange& fs_range,
                             const RunningRange& ad_range, const RunningRange& reward_range,
                             double lambda) {
  if (!reward_range.warmed())
    throw ContractError("normalize_and_combine: reward range not warmed");
  const double fs_scaled = rescale_to(fs, fs_range, reward_range);
  const double ad_scaled = rescale_to(ad, ad_range, reward_range);
  return (1.0 - lambda) * fs_scaled + lambda * ad_scaled;
}

// ---- action-deviation branches ----------------------------------------------------

BranchOutcome action_deviation_branches(GridWorld& world, std::vector<Action> joint_clean,
                                        Action blast_action, int k,
                                        const NextActionsFn& next_actions,
                                        const std::map<int, Action>& evader_overrides) {
  const EnvSnapshot snap = world.snapshot();

  // Branch A (counterfactual): the backdoored agent plays its clean action.
  world.step(joint_clean, evader_overrides);
  const std::vector<int> planned_a = next_actions(world);

  world = GridWorld::restore(snap);

  // Branch B (lived): the backdoored agent plays its own action.
  joint_clean[static_cast<std::size_t>(k)] = blast_action;
  BranchOutcome out;
  out.lived_step = world.step(joint_clean, evader_overrides);
  const std::vector<int> planned_b = next_actions(world);

  for (std::size_t i = 0; i < planned_a.size(); ++i) {
    if (static_cast<int>(i) == k) continue;
    if (planned_a[i] != planned_b[i]) ++out.deviations;
  }
  return out;
}

// ---- retraining --------------------------------------------------------------------

void write_blast_episode_csv(const std::string& path,
                             const std::vector<BlastEpisodeRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write episode csv: " + path);
  os << "episode,poisoned,fire_step,window_start,window_end,reward\n";
  os.precision(17);
  for (const auto& r : rows) {
    os << r.episode << "," << (r.poisoned ? 1 : 0) << "," << r.fire_step << ","
       << r.window_start << "," << r.window_end << "," << r.reward << "\n";
  }
}

BlastTrainResult train_blast(RecurrentQNetwork& clean_net, const EnvConfig& env_cfg,
                             const TriggerSpec& trigger, const HackConfig& hack,
                             const FailureObservations& fails, const TrainConfig& tc,
                             std::uint64_t seed,
                             const std::function<void(const CurvePoint&)>& on_episode) {
  env_cfg.validate();
  trigger.validate();
  if (hack.agent_index < 0 || hack.agent_index >= env_cfg.n_pursuers)
    throw ConfigError("hack.agent_index out of range");
  if (static_cast<int>(fails.observations.size()) != env_cfg.n_pursuers)
    throw ContractError("failure observations do not match the team size");

  Rng master = Rng(seed);
  Rng env_rng = master.child(rng_tags::kEnv);
  Rng explore_rng = master.child(rng_tags::kExplore);
  Rng sampler_rng = master.child(rng_tags::kSampler);
  Rng poison_rng = master.child(rng_tags::kPoison);

  const int n = env_cfg.n_pursuers;
  const int k = hack.agent_index;
  const int stride = packed_state_stride(env_cfg);

  BlastTrainResult result;
  result.net = clone_network(clean_net);  // pi^b starts as pi^c
  RecurrentQNetwork target = clone_network(result.net);

  ValueHead single_head{Algorithm::VDN, std::nullopt};
  ValueHead single_target_head{Algorithm::VDN, std::nullopt};

  RmsProp opt(result.net.parameters(), {tc.learning_rate, tc.rmsprop_decay,
                                        tc.rmsprop_epsilon, tc.grad_clip_norm});
  ReplayBuffer clean_buffer(tc.buffer_capacity);
  ReplayBuffer poison_buffer(tc.buffer_capacity);

  AttackerController ctrl(trigger);
  const std::vector<int> k_only{k};

  int opt_steps = 0;
  for (int episode = 0; episode < tc.episodes; ++episode) {
    const bool is_poison = poison_rng.uniform01() < hack.poison_rate;
    GridWorld world = GridWorld::reset(env_cfg, env_rng.raw());
    if (is_poison)
      ctrl.arm();
    else
      ctrl.disarm();

    std::vector<double> clean_hiddens(static_cast<std::size_t>(n) * clean_net.hidden_size(),
                                      0.0);  // row k is the shadow clean policy
    std::vector<double> blast_hidden(static_cast<std::size_t>(result.net.hidden_size()), 0.0);

    StoredEpisode rec;
    rec.agents_stored = n;
    rec.poisoned = is_poison;

    BlastEpisodeRow row;
    row.episode = episode;
    row.poisoned = is_poison;

    int attack_left = 0;
    double original_return = 0.0;

    while (!world.done()) {
      const int t = world.t();
      rec.packed_states.resize(rec.packed_states.size() + static_cast<std::size_t>(stride));
      pack_state(world.core(), env_cfg,
                 rec.packed_states.data() + rec.packed_states.size() - stride);

      AttackerController::StepPlan plan;
      if (is_poison) plan = ctrl.step(world, k);
      if (plan.fire) {
        attack_left = hack.attack_period;
        row.fire_step = t;
        row.window_start = t;
      }

      const auto rows = team_obs_rows_for(world);
      auto clean_sel = select_actions(clean_net, rows, n, clean_hiddens, 0.0, nullptr);
      std::vector<double> krow(
          rows.begin() + static_cast<std::size_t>(k) * env_cfg.obs_size(),
          rows.begin() + static_cast<std::size_t>(k + 1) * env_cfg.obs_size());
      auto blast_sel = select_actions(result.net, krow, 1, blast_hidden, tc.sigma,
                                      &explore_rng);

      std::vector<Action> joint(static_cast<std::size_t>(n), Action::Stay);
      for (int i = 0; i < n; ++i)
        joint[static_cast<std::size_t>(i)] =
            static_cast<Action>(clean_sel.actions[static_cast<std::size_t>(i)]);
      const Action blast_action = static_cast<Action>(blast_sel.actions[0]);

      double stored_reward;
      if (attack_left > 0) {
        // Attack window: evaluate both branches to price the action deviation,
        // then continue from the lived branch with the hacked reward.
        const std::vector<double> hidden_at_t = clean_sel.next_hidden;
        NextActionsFn peek = [&clean_net, &hidden_at_t, n](const GridWorld& w) {
          std::vector<double> h = hidden_at_t;  // rollback of the hidden states
          const auto obs_rows = team_obs_rows_for(w);
          auto sel = select_actions(clean_net, obs_rows, n, h, 0.0, nullptr);
          return sel.actions;
        };
        BranchOutcome branches = action_deviation_branches(world, joint, blast_action, k,
                                                           peek, plan.overrides);
        const double r_ad = static_cast<double>(branches.deviations);
        const double r_fs = reward_fs(branches.lived_step.observations, fails, k);
        result.reward_range.update(branches.lived_step.team_reward);
        result.fs_range.update(r_fs);
        result.ad_range.update(r_ad);
        stored_reward = normalize_and_combine(r_fs, r_ad, result.fs_range, result.ad_range,
                                              result.reward_range, hack.lambda);
        original_return += branches.lived_step.team_reward;
        row.window_end = t;
        --attack_left;
      } else {
        joint[static_cast<std::size_t>(k)] = blast_action;
        StepResult res = world.step(joint, plan.overrides);
        result.reward_range.update(res.team_reward);
        stored_reward = res.team_reward;
        original_return += res.team_reward;
      }

      clean_hiddens = std::move(clean_sel.next_hidden);
      blast_hidden = std::move(blast_sel.next_hidden);

      joint[static_cast<std::size_t>(k)] = blast_action;
      for (Action a : joint) rec.actions.push_back(static_cast<std::uint8_t>(a));
      rec.rewards.push_back(stored_reward);
    }
    rec.packed_states.resize(rec.packed_states.size() + static_cast<std::size_t>(stride));
    pack_state(world.core(), env_cfg,
               rec.packed_states.data() + rec.packed_states.size() - stride);
    rec.length = static_cast<int>(rec.rewards.size());
    const int ep_len = rec.length;

    row.reward = original_return;
    if (row.fire_step >= 0) ++result.fired_episodes;
    result.episodes.push_back(row);

    (is_poison ? poison_buffer : clean_buffer).insert(std::move(rec));

    // Batch source: poisoned buffer with probability p, else clean buffer.
    double loss_val = std::numeric_limits<double>::quiet_NaN();
    ReplayBuffer& source =
        sampler_rng.uniform01() < hack.poison_rate ? poison_buffer : clean_buffer;
    if (source.size() > 0) {
      auto samples = source.sample(tc.batch_size, sampler_rng);
      EpisodeBatch batch = make_batch(samples, env_cfg, k_only);
      Tensor loss =
          td_loss(batch, result.net, single_head, target, single_target_head, tc.gamma);
      loss_val = loss.item();
      if (!std::isfinite(loss_val))
        throw NumericalError("retraining diverged: non-finite loss at episode " +
                             std::to_string(episode));
      opt.zero_grad();
      backward(loss);
      opt.step();
      ++opt_steps;
      if (opt_steps % tc.target_update_interval == 0) hard_update(result.net, target);
    }

    CurvePoint point{episode, ep_len,
                     is_poison ? std::numeric_limits<double>::quiet_NaN() : original_return,
                     is_poison ? original_return : std::numeric_limits<double>::quiet_NaN(),
                     loss_val};
    result.curve.push_back(point);
    if (on_episode) on_episode(point);
  }
  return result;
}

}  // namespace blastlab
