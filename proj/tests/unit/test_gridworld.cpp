#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "blastlab/gridworld.hpp"
#include "blastlab/errors.hpp"

using namespace blastlab;

namespace {

EnvConfig tiny_config() {
  EnvConfig cfg;
  cfg.width = 8;
  cfg.height = 8;
  cfg.n_pursuers = 2;
  cfg.n_evaders = 1;
  cfg.window_radius = 2;
  cfg.step_limit = 40;
  return cfg;
}

GridWorld world_with(const EnvConfig& cfg, const std::vector<Pos>& pursuers,
                     const std::vector<Pos>& evaders, std::uint64_t seed = 1) {
  GridWorld w = GridWorld::reset(cfg, seed);
  EnvSnapshot snap = w.snapshot();
  snap.core.pursuers = pursuers;
  snap.core.evaders = evaders;
  snap.core.alive.assign(evaders.size(), 1);
  return GridWorld::restore(snap);
}

}  // namespace

TEST_CASE("reset: same seed gives identical placements") {
  EnvConfig cfg;  // defaults: 16x16, 8 pursuers, 10 evaders
  GridWorld a = GridWorld::reset(cfg, 42);
  GridWorld b = GridWorld::reset(cfg, 42);
  CHECK(a.same_state(b));
}

TEST_CASE("reset: different seeds give different placements") {
  EnvConfig cfg;
  GridWorld a = GridWorld::reset(cfg, 1);
  GridWorld b = GridWorld::reset(cfg, 2);
  CHECK_FALSE(a.same_state(b));
}

TEST_CASE("reset: all units occupy distinct cells") {
  EnvConfig cfg;
  GridWorld w = GridWorld::reset(cfg, 7);
  std::set<std::pair<int, int>> cells;
  for (const auto& p : w.core().pursuers) cells.insert({p.x, p.y});
  for (const auto& e : w.core().evaders) cells.insert({e.x, e.y});
  CHECK(cells.size() == 18);
}

TEST_CASE("reset: grid too small raises config error") {
  EnvConfig cfg;
  cfg.width = 4;
  cfg.height = 4;
  cfg.n_pursuers = 10;
  cfg.n_evaders = 10;
  CHECK_THROWS_AS(GridWorld::reset(cfg, 1), ConfigError);
}

TEST_CASE("step: full surround captures and pays 4.99 to each pursuer") {
  EnvConfig cfg;
  cfg.n_pursuers = 4;
  cfg.n_evaders = 1;
  GridWorld w = world_with(cfg, {{4, 5}, {6, 5}, {5, 4}, {5, 6}}, {{5, 5}});
  StepResult res = w.step({Action::Stay, Action::Stay, Action::Stay, Action::Stay});
  REQUIRE(res.captures.size() == 1);
  CHECK(res.captures[0].evader == 0);
  CHECK(res.captures[0].pursuers.size() == 4);
  for (double r : res.rewards) CHECK(r == doctest::Approx(4.99).epsilon(1e-12));
  CHECK(w.alive_evaders() == 0);
  CHECK(res.done);
}

TEST_CASE("step: lone adjacent pursuer nets zero (touch minus penalty)") {
  EnvConfig cfg;
  cfg.n_pursuers = 1;
  cfg.n_evaders = 1;
  cfg.width = 8;
  cfg.height = 8;
  GridWorld w = world_with(cfg, {{3, 3}}, {{4, 3}});
  StepResult res = w.step({Action::Stay});
  const Pos e = w.core().evaders[0];
  const Pos p = w.core().pursuers[0];
  const bool adjacent = std::abs(e.x - p.x) + std::abs(e.y - p.y) == 1;
  CHECK(res.rewards[0] == doctest::Approx(adjacent ? 0.0 : -0.01).epsilon(1e-12));
}

TEST_CASE("step: no adjacency means every pursuer pays the step penalty") {
  EnvConfig cfg;
  cfg.n_pursuers = 2;
  cfg.n_evaders = 1;
  GridWorld w = world_with(cfg, {{0, 0}, {15, 15}}, {{8, 8}});
  StepResult res = w.step({Action::Stay, Action::Stay});
  for (double r : res.rewards) CHECK(r == doctest::Approx(-0.01).epsilon(1e-12));
}

TEST_CASE("team reward equals the mean of per-agent rewards") {
  EnvConfig cfg;
  GridWorld w = GridWorld::reset(cfg, 3);
  for (int t = 0; t < 30 && !w.done(); ++t) {
    std::vector<Action> acts;
    for (int i = 0; i < cfg.n_pursuers; ++i)
      acts.push_back(static_cast<Action>(w.rng().uniform_int(kNumActions)));
    StepResult res = w.step(acts);
    double mean = 0.0;
    for (double r : res.rewards) mean += r;
    mean /= cfg.n_pursuers;
    CHECK(std::abs(res.team_reward - mean) <= 1e-12);
  }
}

TEST_CASE("observe: empty neighborhood has empty unit channels") {
  EnvConfig cfg;
  cfg.n_pursuers = 1;
  cfg.n_evaders = 1;
  GridWorld w = world_with(cfg, {{8, 8}}, {{0, 0}});
  auto obs = w.observe(0);
  const int R = cfg.window_radius;
  const int side = 2 * R + 1;
  for (int cell = 0; cell < side * side; ++cell) {
    const int dx = cell % side - R;
    const int dy = cell / side - R;
    if (dx == 0 && dy == 0) {
      CHECK(obs[cell * 3 + 0] == 1.0);  // sees itself
    } else {
      CHECK(obs[cell * 3 + 0] == 0.0);
    }
    CHECK(obs[cell * 3 + 1] == 0.0);
    CHECK(obs[cell * 3 + 2] == 0.0);
  }
}

TEST_CASE("observe: corner window flags exactly the off-grid cells") {
  EnvConfig cfg;
  cfg.n_pursuers = 1;
  cfg.n_evaders = 1;
  GridWorld w = world_with(cfg, {{0, 0}}, {{8, 8}});
  auto obs = w.observe(0);
  const int R = cfg.window_radius;
  const int side = 2 * R + 1;
  int oob = 0;
  for (int dy = -R; dy <= R; ++dy) {
    for (int dx = -R; dx <= R; ++dx) {
      const bool outside = dx < 0 || dy < 0;  // corner (0,0)
      const double flag = obs[((dy + R) * side + (dx + R)) * 3 + 2];
      CHECK(flag == (outside ? 1.0 : 0.0));
      oob += outside ? 1 : 0;
    }
  }
  CHECK(oob == side * side - (R + 1) * (R + 1));
}

TEST_CASE("observe: identical worlds give identical observations") {
  EnvConfig cfg;
  GridWorld a = GridWorld::reset(cfg, 9);
  GridWorld b = GridWorld::reset(cfg, 9);
  for (int i = 0; i < cfg.n_pursuers; ++i) CHECK(a.observe(i) == b.observe(i));
}

TEST_CASE("snapshot/restore round-trips the full state") {
  EnvConfig cfg;
  GridWorld w = GridWorld::reset(cfg, 5);
  EnvSnapshot snap = w.snapshot();
  GridWorld r = GridWorld::restore(snap);
  CHECK(w.same_state(r));
  CHECK(w.rng().raw() == r.rng().raw());  // RNG stream round-trips
}

TEST_CASE("snapshot replay reproduces step results bitwise") {
  EnvConfig cfg;
  GridWorld w = GridWorld::reset(cfg, 6);
  EnvSnapshot snap = w.snapshot();

  std::vector<std::vector<Action>> inputs;
  Rng action_rng(17);
  for (int t = 0; t < 10; ++t) {
    std::vector<Action> acts;
    for (int i = 0; i < cfg.n_pursuers; ++i)
      acts.push_back(static_cast<Action>(action_rng.uniform_int(kNumActions)));
    inputs.push_back(acts);
  }

  std::vector<StepResult> first;
  for (const auto& acts : inputs) first.push_back(w.step(acts));

  GridWorld r = GridWorld::restore(snap);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    StepResult res = r.step(inputs[t]);
    CHECK(res.rewards == first[t].rewards);
    CHECK(res.team_reward == first[t].team_reward);
    CHECK(res.evader_actions == first[t].evader_actions);
    CHECK(res.observations == first[t].observations);
  }
  CHECK(w.same_state(r));
}

TEST_CASE("heuristic: no pursuers degenerates to a uniform legal move") {
  EnvConfig cfg;
  cfg.n_pursuers = 0;
  cfg.n_evaders = 1;
  cfg.width = 8;
  cfg.height = 8;
  GridWorld w = world_with(cfg, {}, {{4, 4}});
  std::vector<int> counts(kNumActions, 0);
  for (int i = 0; i < 10000; ++i) counts[static_cast<int>(w.heuristic_evader_action(0))]++;
  for (int c : counts) CHECK(std::abs(c / 10000.0 - 0.2) <= 0.02);
}

TEST_CASE("heuristic: single pursuer due east pushes the evader west") {
  EnvConfig cfg;
  cfg.n_pursuers = 1;
  cfg.n_evaders = 1;
  GridWorld w = world_with(cfg, {{10, 8}}, {{8, 8}});
  int west = 0;
  for (int i = 0; i < 10000; ++i)
    west += w.heuristic_evader_action(0) == Action::West ? 1 : 0;
  CHECK(west >= 8000);
}

TEST_CASE("heuristic: boxed-in evader stays") {
  EnvConfig cfg;
  cfg.n_pursuers = 4;
  cfg.n_evaders = 1;
  GridWorld w = world_with(cfg, {{4, 5}, {6, 5}, {5, 4}, {5, 6}}, {{5, 5}});
  for (int i = 0; i < 50; ++i) CHECK(w.heuristic_evader_action(0) == Action::Stay);
}

TEST_CASE("dead evader override raises a contract error") {
  EnvConfig cfg;
  cfg.n_pursuers = 4;
  cfg.n_evaders = 2;
  GridWorld w = world_with(cfg, {{4, 5}, {6, 5}, {5, 4}, {5, 6}}, {{5, 5}, {10, 10}});
  w.step({Action::Stay, Action::Stay, Action::Stay, Action::Stay});  // captures evader 0
  CHECK(w.alive_evaders() == 1);
  CHECK_THROWS_AS(
      w.step({Action::Stay, Action::Stay, Action::Stay, Action::Stay}, {{0, Action::North}}),
      ContractError);
}

TEST_CASE("conservation and occupancy invariants hold over random rollouts") {
  EnvConfig cfg;
  GridWorld w = GridWorld::reset(cfg, 21);
  Rng rng(3);
  int alive = w.alive_evaders();
  while (!w.done()) {
    std::vector<Action> acts;
    for (int i = 0; i < cfg.n_pursuers; ++i)
      acts.push_back(static_cast<Action>(rng.uniform_int(kNumActions)));
    StepResult res = w.step(acts);
    const int now = w.alive_evaders();
    CHECK(now == alive - static_cast<int>(res.captures.size()));
    alive = now;
    std::set<std::pair<int, int>> pursuer_cells, evader_cells;
    for (const auto& p : w.core().pursuers) pursuer_cells.insert({p.x, p.y});
    for (std::size_t e = 0; e < w.core().evaders.size(); ++e)
      if (w.core().alive[e]) evader_cells.insert({w.core().evaders[e].x, w.core().evaders[e].y});
    CHECK(pursuer_cells.size() == static_cast<std::size_t>(cfg.n_pursuers));
    CHECK(evader_cells.size() == static_cast<std::size_t>(alive));
  }
}

TEST_CASE("packed state round-trips through the replay encoding") {
  EnvConfig cfg;
  GridWorld w = GridWorld::reset(cfg, 33);
  std::vector<std::uint8_t> buf(packed_state_stride(cfg));
  pack_state(w.core(), cfg, buf.data());
  WorldCore core = unpack_state(buf.data(), cfg, w.t());
  CHECK(core.pursuers == w.core().pursuers);
  CHECK(core.evaders == w.core().evaders);
  CHECK(core.alive == w.core().alive);
  CHECK(observation_from(core, cfg, 0) == w.observe(0));
  CHECK(global_state_from(core, cfg) == w.global_state());
}

TEST_CASE("trajectory log round-trips") {
  EnvConfig cfg = tiny_config();
  const std::string path =
      (std::filesystem::temp_directory_path() / "bl_traj_test.jsonl").string();
  {
    TrajectoryWriter writer(path, cfg, 0);
    GridWorld w = GridWorld::reset(cfg, 2);
    for (int t = 0; t < 5; ++t) {
      const auto pre = w.core();
      StepResult res = w.step({Action::North, Action::East});
      TrajStep s;
      s.t = t;
      s.pursuers = pre.pursuers;
      s.evaders = pre.evaders;
      s.alive = pre.alive;
      s.actions = {0, 2};
      for (Action a : res.evader_actions) s.evader_actions.push_back(static_cast<int>(a));
      s.rewards = res.rewards;
      s.team_reward = res.team_reward;
      s.captures = res.captures;
      s.trigger_fire = t == 2;
      s.attack_window = t >= 2;
      writer.write(s);
    }
  }
  TrajectoryLog log = read_trajectory(path);
  CHECK(log.n_pursuers == 2);
  CHECK(log.blast_agent == 0);
  REQUIRE(log.steps.size() == 5);
  CHECK(log.steps[2].trigger_fire);
  CHECK(log.steps[4].attack_window);
  CHECK(log.steps[0].rewards.size() == 2);
  std::filesystem::remove(path);
}
