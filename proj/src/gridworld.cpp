#include "blastlab/gridworld.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "blastlab/errors.hpp"

namespace blastlab {

using nlohmann::json;

std::array<int, 2> action_delta(Action a) {
  switch (a) {
    case Action::North: return {0, 1};
    case Action::South: return {0, -1};
    case Action::East: return {1, 0};
    case Action::West: return {-1, 0};
    case Action::Stay: return {0, 0};
  }
  return {0, 0};
}

const char* action_name(Action a) {
  switch (a) {
    case Action::North: return "north";
    case Action::South: return "south";
    case Action::East: return "east";
    case Action::West: return "west";
    case Action::Stay: return "stay";
  }
  return "?";
}

std::optional<Action> action_from_name(const std::string& name) {
  for (int i = 0; i < kNumActions; ++i) {
    if (name == action_name(static_cast<Action>(i))) return static_cast<Action>(i);
  }
  return std::nullopt;
}

void EnvConfig::validate() const {
  if (width <= 0 || height <= 0) throw ConfigError("grid extents must be positive");
  if (n_pursuers < 0 || n_evaders < 0) throw ConfigError("unit counts must be non-negative");
  if (window_radius < 0) throw ConfigError("window radius must be non-negative");
  if (step_limit <= 0) throw ConfigError("step limit must be positive");
  if (n_pursuers + n_evaders > width * height)
    throw ConfigError("grid too small: " + std::to_string(n_pursuers + n_evaders) +
                      " units on " + std::to_string(width * height) + " cells");
}

int EnvConfig::obs_size() const {
  const int side = 2 * window_radius + 1;
  return 3 * side * side + 2 + n_pursuers;
}

int EnvConfig::global_state_size() const { return 2 * n_pursuers + 3 * n_evaders + 1; }

bool GridWorld::in_bounds(const Pos& p) const {
  return p.x >= 0 && p.x < cfg_.width && p.y >= 0 && p.y < cfg_.height;
}

bool GridWorld::cell_free(const Pos& p) const {
  for (const auto& q : core_.pursuers)
    if (q == p) return false;
  for (std::size_t i = 0; i < core_.evaders.size(); ++i)
    if (core_.alive[i] && core_.evaders[i] == p) return false;
  return true;
}

GridWorld GridWorld::reset(const EnvConfig& config, std::uint64_t seed) {
  config.validate();
  GridWorld w;
  w.cfg_ = config;
  w.rng_ = Rng(seed);
  w.core_.t = 0;
  w.core_.alive.assign(static_cast<std::size_t>(config.n_evaders), 1);
  w.controlled_.assign(static_cast<std::size_t>(config.n_evaders), 0);
  auto place = [&w]() {
    for (;;) {
      Pos p{w.rng_.uniform_int(w.cfg_.width), w.rng_.uniform_int(w.cfg_.height)};
      if (w.cell_free(p)) return p;
    }
  };
  for (int i = 0; i < config.n_pursuers; ++i) w.core_.pursuers.push_back(place());
  for (int i = 0; i < config.n_evaders; ++i) w.core_.evaders.push_back(place());
  return w;
}

int GridWorld::alive_evaders() const {
  int n = 0;
  for (auto a : core_.alive) n += a ? 1 : 0;
  return n;
}

void GridWorld::set_controlled(int evader_id, bool controlled) {
  controlled_.at(static_cast<std::size_t>(evader_id)) = controlled ? 1 : 0;
}

bool GridWorld::is_controlled(int evader_id) const {
  return controlled_.at(static_cast<std::size_t>(evader_id)) != 0;
}

std::vector<Action> GridWorld::legal_evader_actions(int evader_id) const {
  const Pos self = core_.evaders[static_cast<std::size_t>(evader_id)];
  std::vector<Action> legal;
  for (int a = 0; a < kNumActions; ++a) {
    const auto d = action_delta(static_cast<Action>(a));
    const Pos target{self.x + d[0], self.y + d[1]};
    if (target == self) {
      legal.push_back(static_cast<Action>(a));  // staying is always legal
      continue;
    }
    if (in_bounds(target) && cell_free(target)) legal.push_back(static_cast<Action>(a));
  }
  return legal;
}

Action GridWorld::heuristic_evader_action(int evader_id) {
  if (!core_.alive.at(static_cast<std::size_t>(evader_id)))
    throw ContractError("heuristic action requested for dead evader " +
                        std::to_string(evader_id));
  const std::vector<Action> legal = legal_evader_actions(evader_id);
  if (core_.pursuers.empty()) {
    return legal[static_cast<std::size_t>(rng_.uniform_int(static_cast<int>(legal.size())))];
  }
  const double u = rng_.uniform01();
  if (u < 0.8) {
    const Pos self = core_.evaders[static_cast<std::size_t>(evader_id)];
    long best_d2 = -1;
    Action best = Action::Stay;
    for (Action a : legal) {
      const auto d = action_delta(a);
      const Pos target{self.x + d[0], self.y + d[1]};
      long nearest = std::numeric_limits<long>::max();
      for (const auto& p : core_.pursuers) {
        const long dx = target.x - p.x, dy = target.y - p.y;
        nearest = std::min(nearest, dx * dx + dy * dy);
      }
      if (nearest > best_d2) {  // strict: ties keep the lowest action index
        best_d2 = nearest;
        best = a;
      }
    }
    return best;
  }
  return legal[static_cast<std::size_t>(rng_.uniform_int(static_cast<int>(legal.size())))];
}

StepResult GridWorld::step(const std::vector<Action>& pursuer_actions,
                           const std::map<int, Action>& evader_overrides) {
  if (done_) throw ContractError("step() on finished episode");
  if (static_cast<int>(pursuer_actions.size()) != cfg_.n_pursuers)
    throw ContractError("expected " + std::to_string(cfg_.n_pursuers) + " pursuer actions");
  for (const auto& [id, a] : evader_overrides) {
    if (id < 0 || id >= cfg_.n_evaders || !core_.alive[static_cast<std::size_t>(id)])
      throw ContractError("action override for dead or unknown evader " + std::to_string(id));
  }

  // Evader decisions are made against the pre-move state, in index order so
  // the RNG consumption is reproducible.
  std::vector<Action> evader_actions(static_cast<std::size_t>(cfg_.n_evaders), Action::Stay);
  for (int e = 0; e < cfg_.n_evaders; ++e) {
    if (!core_.alive[static_cast<std::size_t>(e)]) continue;
    auto it = evader_overrides.find(e);
    evader_actions[static_cast<std::size_t>(e)] =
        it != evader_overrides.end() ? it->second : heuristic_evader_action(e);
  }

  // Movement resolution in ascending unit index, pursuers before evaders.
  // A move into a wall or an occupied cell becomes Stay.
  auto try_move = [this](Pos& self, Action a) {
    const auto d = action_delta(a);
    const Pos target{self.x + d[0], self.y + d[1]};
    if (target == self) return;
    if (in_bounds(target) && cell_free(target)) self = target;
  };
  for (int i = 0; i < cfg_.n_pursuers; ++i)
    try_move(core_.pursuers[static_cast<std::size_t>(i)], pursuer_actions[static_cast<std::size_t>(i)]);
  for (int e = 0; e < cfg_.n_evaders; ++e) {
    if (!core_.alive[static_cast<std::size_t>(e)]) continue;
    try_move(core_.evaders[static_cast<std::size_t>(e)], evader_actions[static_cast<std::size_t>(e)]);
  }

  auto pursuer_at = [this](const Pos& p) -> int {
    for (int i = 0; i < cfg_.n_pursuers; ++i)
      if (core_.pursuers[static_cast<std::size_t>(i)] == p) return i;
    return -1;
  };

  // Captures: an evader whose every in-bounds cardinal neighbor holds a
  // pursuer is removed; all surrounding pursuers are credited. Evaluated
  // simultaneously on the post-move state.
  StepResult result;
  result.rewards.assign(static_cast<std::size_t>(cfg_.n_pursuers), 0.0);
  std::vector<std::uint8_t> captured(static_cast<std::size_t>(cfg_.n_evaders), 0);
  for (int e = 0; e < cfg_.n_evaders; ++e) {
    if (!core_.alive[static_cast<std::size_t>(e)]) continue;
    const Pos self = core_.evaders[static_cast<std::size_t>(e)];
    std::vector<int> surround;
    bool all_pursuers = true;
    bool any_neighbor = false;
    for (Action a : {Action::North, Action::South, Action::East, Action::West}) {
      const auto d = action_delta(a);
      const Pos nb{self.x + d[0], self.y + d[1]};
      if (!in_bounds(nb)) continue;  // the board edge counts as blocking
      any_neighbor = true;
      const int pid = pursuer_at(nb);
      if (pid < 0) {
        all_pursuers = false;
        break;
      }
      surround.push_back(pid);
    }
    if (any_neighbor && all_pursuers) {
      captured[static_cast<std::size_t>(e)] = 1;
      for (int pid : surround) result.rewards[static_cast<std::size_t>(pid)] += cfg_.capture_reward;
      result.captures.push_back({e, self, surround});
    }
  }
  for (int e = 0; e < cfg_.n_evaders; ++e) {
    if (captured[static_cast<std::size_t>(e)]) {
      core_.alive[static_cast<std::size_t>(e)] = 0;
      controlled_[static_cast<std::size_t>(e)] = 0;
    }
  }

  // Touch: flat bonus for each pursuer cardinally adjacent to a surviving
  // evader (capture supersedes touch for the captured pair).
  for (int i = 0; i < cfg_.n_pursuers; ++i) {
    const Pos p = core_.pursuers[static_cast<std::size_t>(i)];
    bool touching = false;
    for (int e = 0; e < cfg_.n_evaders && !touching; ++e) {
      if (!core_.alive[static_cast<std::size_t>(e)]) continue;
      const Pos q = core_.evaders[static_cast<std::size_t>(e)];
      touching = std::abs(p.x - q.x) + std::abs(p.y - q.y) == 1;
    }
    if (touching) result.rewards[static_cast<std::size_t>(i)] += cfg_.touch_reward;
  }
  for (auto& r : result.rewards) r -= cfg_.step_penalty;

  core_.t += 1;
  done_ = alive_evaders() == 0 || core_.t >= cfg_.step_limit;

  double sum = 0.0;
  for (double r : result.rewards) sum += r;
  result.team_reward = sum / static_cast<double>(cfg_.n_pursuers);
  result.done = done_;
  result.evader_actions = std::move(evader_actions);
  result.observations.reserve(static_cast<std::size_t>(cfg_.n_pursuers));
  for (int i = 0; i < cfg_.n_pursuers; ++i) result.observations.push_back(observe(i));
  return result;
}

std::vector<double> observation_from(const WorldCore& core, const EnvConfig& cfg,
                                     int agent_id) {
  const int R = cfg.window_radius;
  const int side = 2 * R + 1;
  std::vector<double> obs(static_cast<std::size_t>(cfg.obs_size()), 0.0);
  const Pos self = core.pursuers.at(static_cast<std::size_t>(agent_id));
  auto channel_index = [R, side](int dx, int dy, int c) {
    return (static_cast<std::size_t>(dy + R) * side + static_cast<std::size_t>(dx + R)) * 3 +
           static_cast<std::size_t>(c);
  };
  for (int dy = -R; dy <= R; ++dy) {
    for (int dx = -R; dx <= R; ++dx) {
      const Pos cell{self.x + dx, self.y + dy};
      if (cell.x < 0 || cell.x >= cfg.width || cell.y < 0 || cell.y >= cfg.height) {
        obs[channel_index(dx, dy, 2)] = 1.0;
        continue;
      }
      for (const auto& p : core.pursuers) {
        if (p == cell) {
          obs[channel_index(dx, dy, 0)] = 1.0;
          break;
        }
      }
      for (std::size_t e = 0; e < core.evaders.size(); ++e) {
        if (core.alive[e] && core.evaders[e] == cell) {
          obs[channel_index(dx, dy, 1)] = 1.0;
          break;
        }
      }
    }
  }
  const std::size_t base = static_cast<std::size_t>(3 * side * side);
  obs[base] = cfg.width > 1 ? static_cast<double>(self.x) / (cfg.width - 1) : 0.0;
  obs[base + 1] = cfg.height > 1 ? static_cast<double>(self.y) / (cfg.height - 1) : 0.0;
  obs[base + 2 + static_cast<std::size_t>(agent_id)] = 1.0;
  return obs;
}

std::vector<double> global_state_from(const WorldCore& core, const EnvConfig& cfg) {
  std::vector<double> s;
  s.reserve(static_cast<std::size_t>(cfg.global_state_size()));
  const double wx = cfg.width > 1 ? cfg.width - 1 : 1;
  const double wy = cfg.height > 1 ? cfg.height - 1 : 1;
  for (const auto& p : core.pursuers) {
    s.push_back(p.x / wx);
    s.push_back(p.y / wy);
  }
  for (std::size_t e = 0; e < core.evaders.size(); ++e) {
    s.push_back(core.evaders[e].x / wx);
    s.push_back(core.evaders[e].y / wy);
    s.push_back(core.alive[e] ? 1.0 : 0.0);
  }
  s.push_back(static_cast<double>(core.t) / cfg.step_limit);
  return s;
}

std::vector<double> GridWorld::observe(int agent_id) const {
  if (agent_id < 0 || agent_id >= cfg_.n_pursuers)
    throw ContractError("observe: invalid agent id " + std::to_string(agent_id));
  return observation_from(core_, cfg_, agent_id);
}

std::vector<double> GridWorld::global_state() const {
  return global_state_from(core_, cfg_);
}

EnvSnapshot GridWorld::snapshot() const { return {cfg_, core_, rng_, controlled_, done_}; }

GridWorld GridWorld::restore(const EnvSnapshot& snap) {
  GridWorld w;
  w.cfg_ = snap.config;
  w.core_ = snap.core;
  w.rng_ = snap.rng;
  w.controlled_ = snap.controlled;
  w.done_ = snap.done;
  return w;
}

bool GridWorld::same_state(const GridWorld& other) const {
  return core_.pursuers == other.core_.pursuers && core_.evaders == other.core_.evaders &&
         core_.alive == other.core_.alive && core_.t == other.core_.t &&
         controlled_ == other.controlled_ && done_ == other.done_ && rng_ == other.rng_;
}

int packed_state_stride(const EnvConfig& cfg) {
  return 2 * cfg.n_pursuers + 3 * cfg.n_evaders;
}

void pack_state(const WorldCore& core, const EnvConfig& cfg, std::uint8_t* out) {
  std::size_t k = 0;
  for (int i = 0; i < cfg.n_pursuers; ++i) {
    out[k++] = static_cast<std::uint8_t>(core.pursuers[static_cast<std::size_t>(i)].x);
    out[k++] = static_cast<std::uint8_t>(core.pursuers[static_cast<std::size_t>(i)].y);
  }
  for (int e = 0; e < cfg.n_evaders; ++e) {
    out[k++] = static_cast<std::uint8_t>(core.evaders[static_cast<std::size_t>(e)].x);
    out[k++] = static_cast<std::uint8_t>(core.evaders[static_cast<std::size_t>(e)].y);
    out[k++] = core.alive[static_cast<std::size_t>(e)];
  }
}

WorldCore unpack_state(const std::uint8_t* in, const EnvConfig& cfg, int t) {
  WorldCore core;
  core.t = t;
  std::size_t k = 0;
  core.pursuers.resize(static_cast<std::size_t>(cfg.n_pursuers));
  core.evaders.resize(static_cast<std::size_t>(cfg.n_evaders));
  core.alive.resize(static_cast<std::size_t>(cfg.n_evaders));
  for (auto& p : core.pursuers) {
    p.x = in[k++];
    p.y = in[k++];
  }
  for (std::size_t e = 0; e < core.evaders.size(); ++e) {
    core.evaders[e].x = in[k++];
    core.evaders[e].y = in[k++];
    core.alive[e] = in[k++];
  }
  return core;
}

// ---- trajectory log ---------------------------------------------------------

struct TrajectoryWriter::Impl {
  std::ofstream os;
};

TrajectoryWriter::TrajectoryWriter(const std::string& path, const EnvConfig& cfg,
                                   std::optional<int> blast_agent)
    : impl_(new Impl{std::ofstream(path, std::ios::trunc)}) {
  if (!impl_->os) throw ConfigError("cannot open trajectory log for writing: " + path);
  json header = {{"schema", "blastlab/trajlog/1"},
                 {"n_pursuers", cfg.n_pursuers},
                 {"n_evaders", cfg.n_evaders},
                 {"step_limit", cfg.step_limit}};
  header["blast_agent"] = blast_agent ? json(*blast_agent) : json(nullptr);
  impl_->os << header.dump() << "\n";
}

TrajectoryWriter::~TrajectoryWriter() {
  close();
  delete impl_;
}

void TrajectoryWriter::close() {
  if (impl_ && impl_->os.is_open()) impl_->os.close();
}

void TrajectoryWriter::write(const TrajStep& s) {
  json rec;
  rec["t"] = s.t;
  auto& jp = rec["pursuers"] = json::array();
  for (const auto& p : s.pursuers) jp.push_back({p.x, p.y});
  auto& je = rec["evaders"] = json::array();
  for (std::size_t e = 0; e < s.evaders.size(); ++e)
    je.push_back({s.evaders[e].x, s.evaders[e].y, static_cast<int>(s.alive[e])});
  rec["actions"] = s.actions;
  rec["evader_actions"] = s.evader_actions;
  rec["rewards"] = s.rewards;
  rec["team_reward"] = s.team_reward;
  auto& jc = rec["captures"] = json::array();
  for (const auto& c : s.captures)
    jc.push_back({{"evader", c.evader}, {"cell", {c.cell.x, c.cell.y}}, {"pursuers", c.pursuers}});
  rec["fire"] = s.trigger_fire;
  rec["attack"] = s.attack_window;
  impl_->os << rec.dump() << "\n";
}

TrajectoryLog read_trajectory(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open trajectory log: " + path);
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("empty trajectory log: " + path);
  json header = json::parse(line);
  if (header.value("schema", "") != "blastlab/trajlog/1")
    throw ConfigError("unknown trajectory schema in " + path);
  TrajectoryLog log;
  log.n_pursuers = header["n_pursuers"].get<int>();
  log.n_evaders = header["n_evaders"].get<int>();
  log.step_limit = header["step_limit"].get<int>();
  if (!header["blast_agent"].is_null()) log.blast_agent = header["blast_agent"].get<int>();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    TrajStep s;
    s.t = rec["t"].get<int>();
    for (const auto& p : rec["pursuers"]) s.pursuers.push_back({p[0].get<int>(), p[1].get<int>()});
    for (const auto& e : rec["evaders"]) {
      s.evaders.push_back({e[0].get<int>(), e[1].get<int>()});
      s.alive.push_back(static_cast<std::uint8_t>(e[2].get<int>()));
    }
    s.actions = rec["actions"].get<std::vector<int>>();
    s.evader_actions = rec["evader_actions"].get<std::vector<int>>();
    s.rewards = rec["rewards"].get<std::vector<double>>();
    s.team_reward = rec["team_reward"].get<double>();
    for (const auto& c : rec["captures"]) {
      CaptureEvent ev;
      ev.evader = c["evader"].get<int>();
      ev.cell = {c["cell"][0].get<int>(), c["cell"][1].get<int>()};
      ev.pursuers = c["pursuers"].get<std::vector<int>>();
      s.captures.push_back(std::move(ev));
    }
    s.trigger_fire = rec["fire"].get<bool>();
    s.attack_window = rec["attack"].get<bool>();
    log.steps.push_back(std::move(s));
  }
  return log;
}

}  // namespace blastlab
