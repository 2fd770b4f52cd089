#include "blastlab/marl.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

#include "blastlab/errors.hpp"

namespace blastlab {

const char* algorithm_name(Algorithm a) { return a == Algorithm::VDN ? "vdn" : "qmix"; }

std::optional<Algorithm> algorithm_from_name(const std::string& name) {
  if (name == "vdn") return Algorithm::VDN;
  if (name == "qmix") return Algorithm::QMIX;
  return std::nullopt;
}

double vdn_qtot(std::span<const double> agent_qs) {
  double s = 0.0;
  for (double q : agent_qs) s += q;
  return s;
}

// ---- QMIX mixer ---------------------------------------------------------------

QmixMixer::QmixMixer(int n_agents, int state_size, Rng& rng, int embed)
    : n_agents_(n_agents),
      embed_(embed),
      hw1_a(state_size, embed, rng),
      hw1_b(embed, n_agents * embed, rng),
      hb1(state_size, embed, rng),
      hw2_a(state_size, embed, rng),
      hw2_b(embed, embed, rng),
      hv_a(state_size, embed, rng),
      hv_b(embed, 1, rng) {}

Tensor QmixMixer::mix(const Tensor& agent_qs, const Tensor& states) const {
  if (agent_qs.rank() != 2 || agent_qs.dim(1) != n_agents_)
    throw ShapeError("qmix: agent_qs " + shape_str(agent_qs.shape()) + " vs n_agents " +
                     std::to_string(n_agents_));
  if (states.rank() != 2 || states.dim(0) != agent_qs.dim(0))
    throw ShapeError("qmix: states " + shape_str(states.shape()) + " vs batch " +
                     std::to_string(agent_qs.dim(0)));
  Tensor w1 = abs_op(hw1_b.forward(hw1_a.forward_relu(states)));  // [B, n*embed]
  Tensor b1 = hb1.forward(states);                                // [B, embed]
  Tensor hidden = elu(add(bmm_rows(agent_qs, w1, embed_), b1));   // [B, embed]
  Tensor w2 = abs_op(hw2_b.forward(hw2_a.forward_relu(states)));  // [B, embed]
  Tensor v = hv_b.forward(hv_a.forward_relu(states));             // [B, 1]
  return squeeze1(add(bmm_rows(hidden, w2, 1), v));               // [B]
}

double QmixMixer::mix_one(std::span<const double> agent_qs,
                          std::span<const double> state) const {
  NoGradGuard ng;
  Tensor q = Tensor::from({1, n_agents_}, {agent_qs.begin(), agent_qs.end()});
  Tensor s = Tensor::from({1, static_cast<int>(state.size())}, {state.begin(), state.end()});
  return mix(q, s).values()[0];
}

std::vector<std::pair<std::string, Tensor>> QmixMixer::named_parameters() {
  return {{"hw1_a.weight", hw1_a.weight}, {"hw1_a.bias", hw1_a.bias},
          {"hw1_b.weight", hw1_b.weight}, {"hw1_b.bias", hw1_b.bias},
          {"hb1.weight", hb1.weight},     {"hb1.bias", hb1.bias},
          {"hw2_a.weight", hw2_a.weight}, {"hw2_a.bias", hw2_a.bias},
          {"hw2_b.weight", hw2_b.weight}, {"hw2_b.bias", hw2_b.bias},
          {"hv_a.weight", hv_a.weight},   {"hv_a.bias", hv_a.bias},
          {"hv_b.weight", hv_b.weight},   {"hv_b.bias", hv_b.bias}};
}

std::vector<Tensor> QmixMixer::parameters() {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void hard_update_mixer(QmixMixer& source, QmixMixer& target) {
  auto src = source.named_parameters();
  auto dst = target.named_parameters();
  if (src.size() != dst.size() || source.n_agents() != target.n_agents())
    throw ContractError("hard_update_mixer: mixer mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto sv = src[i].second.values();
    std::copy(sv.begin(), sv.end(), dst[i].second.mutable_values().begin());
  }
}

QmixMixer QmixMixer::independent_clone() const {
  QmixMixer copy = *this;
  auto reattach = [](Tensor& t) {
    t = Tensor::from(t.shape(), std::vector<double>(t.values().begin(), t.values().end()),
                     /*requires_grad=*/true);
  };
  for (Linear* l : {&copy.hw1_a, &copy.hw1_b, &copy.hb1, &copy.hw2_a, &copy.hw2_b,
                    &copy.hv_a, &copy.hv_b}) {
    reattach(l->weight);
    reattach(l->bias);
  }
  return copy;
}

// ---- replay -------------------------------------------------------------------

void ReplayBuffer::insert(StoredEpisode ep) {
  episodes_.push_back(std::move(ep));
  while (static_cast<int>(episodes_.size()) > capacity_) episodes_.pop_front();
}

std::vector<const StoredEpisode*> ReplayBuffer::sample(int batch, Rng& rng) const {
  if (episodes_.empty()) throw ContractError("sample on empty replay buffer");
  std::vector<const StoredEpisode*> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i)
    out.push_back(&episodes_[static_cast<std::size_t>(rng.uniform_int(size()))]);
  return out;
}

int EpisodeBatch::alive_at(int t) const {
  int count = 0;
  for (int len : lengths) {
    if (len > t)
      ++count;
    else
      break;  // lengths sorted descending
  }
  return count;
}

EpisodeBatch make_batch(const std::vector<const StoredEpisode*>& eps, const EnvConfig& cfg,
                        const std::vector<int>& agent_ids) {
  if (eps.empty()) throw ContractError("make_batch: no episodes");
  EpisodeBatch b;
  b.n_episodes = static_cast<int>(eps.size());
  b.n_agents = static_cast<int>(agent_ids.size());
  b.obs_size = cfg.obs_size();
  b.state_size = cfg.global_state_size();

  // Sort by decreasing length (stable on sample position) so training can
  // process a shrinking packed prefix of rows.
  std::vector<int> order(eps.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&eps](int a, int b2) {
    return eps[static_cast<std::size_t>(a)]->length > eps[static_cast<std::size_t>(b2)]->length;
  });

  b.lengths.reserve(eps.size());
  for (int idx : order) b.lengths.push_back(eps[static_cast<std::size_t>(idx)]->length);
  b.t_max = b.lengths.front();
  if (b.t_max == 0) throw ContractError("make_batch: all episodes empty");

  const int stride = packed_state_stride(cfg);
  const int rows = b.n_episodes * b.n_agents;
  b.obs.assign(static_cast<std::size_t>(b.t_max) + 1,
               std::vector<double>(static_cast<std::size_t>(rows) * b.obs_size, 0.0));
  b.states.assign(static_cast<std::size_t>(b.t_max) + 1,
                  std::vector<double>(static_cast<std::size_t>(b.n_episodes) * b.state_size, 0.0));
  b.actions.assign(static_cast<std::size_t>(b.t_max),
                   std::vector<int>(static_cast<std::size_t>(rows), 0));
  b.rewards.assign(static_cast<std::size_t>(b.t_max),
                   std::vector<double>(static_cast<std::size_t>(b.n_episodes), 0.0));
  b.mask.assign(static_cast<std::size_t>(b.t_max),
                std::vector<double>(static_cast<std::size_t>(b.n_episodes), 0.0));

  for (int e = 0; e < b.n_episodes; ++e) {
    const StoredEpisode& ep = *eps[static_cast<std::size_t>(order[static_cast<std::size_t>(e)])];
    for (int t = 0; t <= ep.length; ++t) {
      const WorldCore core =
          unpack_state(ep.packed_states.data() + static_cast<std::size_t>(t) * stride, cfg, t);
      const std::vector<double> gs = global_state_from(core, cfg);
      std::copy(gs.begin(), gs.end(),
                b.states[static_cast<std::size_t>(t)].begin() +
                    static_cast<std::size_t>(e) * b.state_size);
      for (int a = 0; a < b.n_agents; ++a) {
        const std::vector<double> obs =
            observation_from(core, cfg, agent_ids[static_cast<std::size_t>(a)]);
        std::copy(obs.begin(), obs.end(),
                  b.obs[static_cast<std::size_t>(t)].begin() +
                      (static_cast<std::size_t>(e) * b.n_agents + a) * b.obs_size);
      }
      if (t < ep.length) {
        for (int a = 0; a < b.n_agents; ++a)
          b.actions[static_cast<std::size_t>(t)]
                   [static_cast<std::size_t>(e) * b.n_agents + a] =
              ep.actions[static_cast<std::size_t>(t) * cfg.n_pursuers +
                         agent_ids[static_cast<std::size_t>(a)]];
        b.rewards[static_cast<std::size_t>(t)][static_cast<std::size_t>(e)] =
            ep.rewards[static_cast<std::size_t>(t)];
        b.mask[static_cast<std::size_t>(t)][static_cast<std::size_t>(e)] = 1.0;
      }
    }
  }
  return b;
}

// ---- value head and TD loss -----------------------------------------------------

Tensor ValueHead::join(const Tensor& agent_qs, const Tensor& states) const {
  if (algo == Algorithm::VDN) return row_sum(agent_qs);
  return mixer->mix(agent_qs, states);
}

std::vector<Tensor> ValueHead::parameters() {
  if (algo == Algorithm::VDN || !mixer) return {};
  return mixer->parameters();
}

Tensor td_loss(const EpisodeBatch& batch, RecurrentQNetwork& online, ValueHead& head,
               RecurrentQNetwork& target, ValueHead& target_head, double gamma) {
  const int n = batch.n_agents;
  double total_steps = 0.0;
  for (int len : batch.lengths) total_steps += len;
  if (total_steps <= 0.0) throw ContractError("td_loss: empty batch mask");

  // Target pass: no graph, per-agent max, joined by the target head.
  std::vector<std::vector<double>> target_qtot(static_cast<std::size_t>(batch.t_max));
  {
    NoGradGuard ng;
    const int rows0 = batch.alive_at(0) * n;
    Tensor h = target.initial_hidden(rows0);
    for (int t = 0; t < batch.t_max; ++t) {
      const int epis = batch.alive_at(t);
      const int rows = epis * n;
      if (rows == 0) break;
      if (h.dim(0) > rows) h = take_rows(h, rows);
      Tensor x = Tensor::from({rows, batch.obs_size},
                              {batch.obs[static_cast<std::size_t>(t)].begin(),
                               batch.obs[static_cast<std::size_t>(t)].begin() +
                                   static_cast<std::size_t>(rows) * batch.obs_size});
      auto out = target.step(x, h);
      h = out.hidden;
      if (t >= 1) {
        std::vector<double> maxq(static_cast<std::size_t>(rows));
        const auto qv = out.q.values();
        const int na = target.n_actions();
        for (int r = 0; r < rows; ++r) {
          double best = qv[static_cast<std::size_t>(r) * na];
          for (int a2 = 1; a2 < na; ++a2)
            best = std::max(best, qv[static_cast<std::size_t>(r) * na + a2]);
          maxq[static_cast<std::size_t>(r)] = best;
        }
        Tensor agent_maxes = Tensor::from({epis, n}, std::move(maxq));
        Tensor st = Tensor::from({epis, batch.state_size},
                                 {batch.states[static_cast<std::size_t>(t)].begin(),
                                  batch.states[static_cast<std::size_t>(t)].begin() +
                                      static_cast<std::size_t>(epis) * batch.state_size});
        Tensor qt = target_head.join(agent_maxes, st);
        target_qtot[static_cast<std::size_t>(t)]
            .assign(qt.values().begin(), qt.values().end());
      }
    }
  }

  // Online pass with the recorded graph.
  Tensor loss_acc = Tensor::scalar(0.0);
  const int rows0 = batch.alive_at(0) * n;
  Tensor h = online.initial_hidden(rows0);
  for (int t = 0; t < batch.t_max; ++t) {
    const int epis = batch.alive_at(t);
    const int rows = epis * n;
    if (rows == 0) break;
    if (h.dim(0) > rows) h = take_rows(h, rows);
    Tensor x = Tensor::from({rows, batch.obs_size},
                            {batch.obs[static_cast<std::size_t>(t)].begin(),
                             batch.obs[static_cast<std::size_t>(t)].begin() +
                                 static_cast<std::size_t>(rows) * batch.obs_size});
    auto out = online.step(x, h);
    h = out.hidden;

    std::vector<int> acts(batch.actions[static_cast<std::size_t>(t)].begin(),
                          batch.actions[static_cast<std::size_t>(t)].begin() + rows);
    Tensor chosen = gather_cols(out.q, acts);          // [rows]
    Tensor agent_qs = reshape(chosen, {epis, n});      // [epis, n]
    Tensor st = Tensor::from({epis, batch.state_size},
                             {batch.states[static_cast<std::size_t>(t)].begin(),
                              batch.states[static_cast<std::size_t>(t)].begin() +
                                  static_cast<std::size_t>(epis) * batch.state_size});
    Tensor qtot = head.join(agent_qs, st);  // [epis]

    // y = r + gamma * Qtot_target(t+1), terminal steps use r alone.
    std::vector<double> y(static_cast<std::size_t>(epis));
    for (int e = 0; e < epis; ++e) {
      const double r = batch.rewards[static_cast<std::size_t>(t)][static_cast<std::size_t>(e)];
      const bool terminal = batch.lengths[static_cast<std::size_t>(e)] == t + 1;
      double boot = 0.0;
      if (!terminal) {
        const auto& tq = target_qtot[static_cast<std::size_t>(t + 1)];
        boot = gamma * tq[static_cast<std::size_t>(e)];
      }
      y[static_cast<std::size_t>(e)] = r + boot;
    }
    Tensor yt = Tensor::from({epis}, std::move(y));
    loss_acc = add(loss_acc, sum(square(sub(qtot, yt))));
  }
  return affine(loss_acc, 1.0 / total_steps, 0.0);
}

// ---- action selection -----------------------------------------------------------

SelectResult select_actions(const RecurrentQNetwork& net, const std::vector<double>& obs_rows,
                            int rows, const std::vector<double>& hidden_rows, double sigma,
                            Rng* rng) {
  NoGradGuard ng;
  Tensor x = Tensor::from({rows, net.obs_size()},
                          {obs_rows.begin(), obs_rows.begin() + static_cast<std::size_t>(rows) * net.obs_size()});
  Tensor h = Tensor::from({rows, net.hidden_size()}, hidden_rows);
  auto out = net.step(x, h);
  const auto qv = out.q.values();
  const int na = net.n_actions();

  SelectResult res;
  res.actions.resize(static_cast<std::size_t>(rows));
  res.chosen_q.resize(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    int pick = 0;
    double best = qv[static_cast<std::size_t>(r) * na];
    for (int a = 1; a < na; ++a) {
      const double q = qv[static_cast<std::size_t>(r) * na + a];
      if (q > best) {  // strict: ties keep the lowest index
        best = q;
        pick = a;
      }
    }
    if (sigma > 0.0 && rng && rng->uniform01() < sigma) pick = rng->uniform_int(na);
    res.actions[static_cast<std::size_t>(r)] = pick;
    res.chosen_q[static_cast<std::size_t>(r)] = qv[static_cast<std::size_t>(r) * na + pick];
  }
  res.next_hidden.assign(out.hidden.values().begin(), out.hidden.values().end());
  return res;
}

// ---- training -------------------------------------------------------------------

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write curve csv: " + path);
  os << "episode,steps,reward_clean,reward_poisoned,loss\n";
  auto cell = [](double v) {
    if (std::isnan(v)) return std::string();
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
  };
  for (const auto& p : curve) {
    os << p.episode << "," << p.steps << "," << cell(p.reward_clean) << ","
       << cell(p.reward_poisoned) << "," << cell(p.loss) << "\n";
  }
}

std::vector<double> team_obs_rows_for(const GridWorld& world) {
  const auto& cfg = world.config();
  std::vector<double> rows;
  rows.reserve(static_cast<std::size_t>(cfg.n_pursuers) * cfg.obs_size());
  for (int i = 0; i < cfg.n_pursuers; ++i) {
    const auto o = world.observe(i);
    rows.insert(rows.end(), o.begin(), o.end());
  }
  return rows;
}

TrainedPolicy train_clean(const EnvConfig& env_cfg, Algorithm algo, const TrainConfig& tc,
                          std::uint64_t seed,
                          const std::function<void(const CurvePoint&)>& on_episode) {
  env_cfg.validate();
  Rng master = Rng(seed);
  Rng env_rng = master.child(rng_tags::kEnv);
  Rng init_rng = master.child(rng_tags::kInit);
  Rng explore_rng = master.child(rng_tags::kExplore);
  Rng sampler_rng = master.child(rng_tags::kSampler);

  const int n = env_cfg.n_pursuers;
  const int stride = packed_state_stride(env_cfg);

  TrainedPolicy policy;
  policy.algo = algo;
  policy.net = RecurrentQNetwork(env_cfg.obs_size(), kNumActions, init_rng, tc.hidden1,
                                 tc.hidden2);
  policy.head.algo = algo;
  if (algo == Algorithm::QMIX)
    policy.head.mixer =
        QmixMixer(n, env_cfg.global_state_size(), init_rng, tc.qmix_embed);

  RecurrentQNetwork target = clone_network(policy.net);
  ValueHead target_head;
  target_head.algo = algo;
  if (algo == Algorithm::QMIX) target_head.mixer = policy.head.mixer->independent_clone();

  std::vector<Tensor> params = policy.net.parameters();
  for (auto& t : policy.head.parameters()) params.push_back(t);
  RmsProp opt(params, {tc.learning_rate, tc.rmsprop_decay, tc.rmsprop_epsilon,
                       tc.grad_clip_norm});
  ReplayBuffer buffer(tc.buffer_capacity);

  std::vector<int> agent_ids(static_cast<std::size_t>(n));
  std::iota(agent_ids.begin(), agent_ids.end(), 0);

  int opt_steps = 0;
  for (int episode = 0; episode < tc.episodes; ++episode) {
    GridWorld world = GridWorld::reset(env_cfg, env_rng.raw());
    std::vector<double> hiddens(static_cast<std::size_t>(n) * tc.hidden1, 0.0);

    StoredEpisode rec;
    rec.agents_stored = n;
    double ret = 0.0;
    while (!world.done()) {
      rec.packed_states.resize(rec.packed_states.size() + static_cast<std::size_t>(stride));
      pack_state(world.core(), env_cfg,
                 rec.packed_states.data() + rec.packed_states.size() - stride);
      const auto rows = team_obs_rows_for(world);
      auto sel = select_actions(policy.net, rows, n, hiddens, tc.sigma, &explore_rng);
      hiddens = std::move(sel.next_hidden);
      std::vector<Action> acts;
      acts.reserve(static_cast<std::size_t>(n));
      for (int a : sel.actions) acts.push_back(static_cast<Action>(a));
      StepResult res = world.step(acts);
      for (int a : sel.actions) rec.actions.push_back(static_cast<std::uint8_t>(a));
      rec.rewards.push_back(res.team_reward);
      ret += res.team_reward;
    }
    rec.packed_states.resize(rec.packed_states.size() + static_cast<std::size_t>(stride));
    pack_state(world.core(), env_cfg,
               rec.packed_states.data() + rec.packed_states.size() - stride);
    rec.length = static_cast<int>(rec.rewards.size());

    const int ep_len = rec.length;
    buffer.insert(std::move(rec));

    double loss_val = std::numeric_limits<double>::quiet_NaN();
    if (buffer.size() >= tc.batch_size) {
      auto samples = buffer.sample(tc.batch_size, sampler_rng);
      EpisodeBatch batch = make_batch(samples, env_cfg, agent_ids);
      Tensor loss = td_loss(batch, policy.net, policy.head, target, target_head, tc.gamma);
      loss_val = loss.item();
      if (!std::isfinite(loss_val))
        throw NumericalError("training diverged: non-finite loss at episode " +
                             std::to_string(episode));
      opt.zero_grad();
      backward(loss);
      opt.step();
      ++opt_steps;
      if (opt_steps % tc.target_update_interval == 0) {
        hard_update(policy.net, target);
        if (algo == Algorithm::QMIX) hard_update_mixer(*policy.head.mixer, *target_head.mixer);
      }
    }

    CurvePoint point{episode, ep_len, ret, std::numeric_limits<double>::quiet_NaN(),
                     loss_val};
    policy.curve.push_back(point);
    if (on_episode) on_episode(point);
  }
  return policy;
}

// ---- evaluation -----------------------------------------------------------------

EvalReport evaluate_policy(const TeamAssembly& team, const EnvConfig& env_cfg,
                           const EvalOptions& opts) {
  if (!team.clean_net) throw ContractError("evaluate_policy: missing clean network");
  env_cfg.validate();
  Rng eval_rng = Rng(opts.seed).child(rng_tags::kEvalEpisode);
  const int n = env_cfg.n_pursuers;
  const int h1 = team.clean_net->hidden_size();

  EvalReport report;
  report.episodes = opts.episodes;
  double sum = 0.0, sum2 = 0.0, lengths = 0.0, captures = 0.0;
  int successes = 0;

  for (int episode = 0; episode < opts.episodes; ++episode) {
    GridWorld world = GridWorld::reset(env_cfg, eval_rng.raw());
    std::vector<double> hiddens(static_cast<std::size_t>(n) * h1, 0.0);
    std::vector<double> blast_hidden;
    if (team.blast_net)
      blast_hidden.assign(static_cast<std::size_t>(team.blast_net->hidden_size()), 0.0);

    AttackerController ctrl;
    if (opts.trigger) {
      ctrl = AttackerController(*opts.trigger);
      ctrl.arm();
    }

    std::unique_ptr<TrajectoryWriter> traj;
    if (!opts.trajectory_dir.empty()) {
      std::filesystem::create_directories(opts.trajectory_dir);
      std::ostringstream name;
      name << opts.trajectory_dir << "/episode_" << episode << ".jsonl";
      traj = std::make_unique<TrajectoryWriter>(
          name.str(), env_cfg,
          team.blast_net ? std::optional<int>(team.blast_agent) : std::nullopt);
    }

    double ret = 0.0;
    int fire_step = -1;
    int window_left = 0;
    while (!world.done()) {
      const int t = world.t();
      AttackerController::StepPlan plan;
      if (opts.trigger) plan = ctrl.step(world, team.blast_agent);
      if (plan.fire) {
        fire_step = t;
        window_left = opts.attack_period;
      }

      const auto pre_core = world.core();
      const auto rows = team_obs_rows_for(world);
      auto sel = select_actions(*team.clean_net, rows, n, hiddens, 0.0, nullptr);
      hiddens = std::move(sel.next_hidden);
      if (team.blast_net) {
        std::vector<double> krow(
            rows.begin() + static_cast<std::size_t>(team.blast_agent) * env_cfg.obs_size(),
            rows.begin() + static_cast<std::size_t>(team.blast_agent + 1) * env_cfg.obs_size());
        auto ksel = select_actions(*team.blast_net, krow, 1, blast_hidden, 0.0, nullptr);
        blast_hidden = std::move(ksel.next_hidden);
        sel.actions[static_cast<std::size_t>(team.blast_agent)] = ksel.actions[0];
      }

      std::vector<Action> acts;
      acts.reserve(static_cast<std::size_t>(n));
      for (int a : sel.actions) acts.push_back(static_cast<Action>(a));
      StepResult res = world.step(acts, plan.overrides);
      ret += res.team_reward;
      captures += static_cast<double>(res.captures.size());

      if (traj) {
        TrajStep s;
        s.t = t;
        s.pursuers = pre_core.pursuers;
        s.evaders = pre_core.evaders;
        s.alive = pre_core.alive;
        for (int a : sel.actions) s.actions.push_back(a);
        for (Action a : res.evader_actions) s.evader_actions.push_back(static_cast<int>(a));
        s.rewards = res.rewards;
        s.team_reward = res.team_reward;
        s.captures = res.captures;
        s.trigger_fire = plan.fire;
        s.attack_window = window_left > 0;
        traj->write(s);
      }
      if (window_left > 0) --window_left;
    }

    report.episode_rewards.push_back(ret);
    report.fire_steps.push_back(fire_step);
    if (fire_step >= 0) ++report.fired_episodes;
    if (world.alive_evaders() == 0) ++successes;
    sum += ret;
    sum2 += ret * ret;
    lengths += world.t();
  }

  const double mean = sum / opts.episodes;
  report.mean_reward = mean;
  report.std_reward = std::sqrt(std::max(0.0, sum2 / opts.episodes - mean * mean));
  report.success_rate = static_cast<double>(successes) / opts.episodes;
  report.mean_length = lengths / opts.episodes;
  report.mean_captures = captures / opts.episodes;
  return report;
}

}  // namespace blastlab
