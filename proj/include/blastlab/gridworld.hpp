#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blastlab/rng.hpp"

namespace blastlab {

/// Movement actions. Grid coordinates are x in [0,W) growing east and
/// y in [0,H) growing north; the index order below is the tie-break order
/// used everywhere ("lowest action index").
enum class Action : std::uint8_t { North = 0, South = 1, East = 2, West = 3, Stay = 4 };

inline constexpr int kNumActions = 5;

std::array<int, 2> action_delta(Action a);
const char* action_name(Action a);
std::optional<Action> action_from_name(const std::string& name);

struct Pos {
  int x = 0;
  int y = 0;
  bool operator==(const Pos&) const = default;
};

struct EnvConfig {
  int width = 16;
  int height = 16;
  int n_pursuers = 8;
  int n_evaders = 10;
  int window_radius = 3;  // 7x7 observation window
  int step_limit = 500;
  double capture_reward = 5.0;
  double touch_reward = 0.01;
  double step_penalty = 0.01;

  void validate() const;
  int obs_size() const;          // 3*(2R+1)^2 + 2 + n_pursuers
  int global_state_size() const; // 2*n_pursuers + 3*n_evaders + 1
};

/// Positions-only view of the world, sufficient to regenerate every
/// observation and global state deterministically. Replay buffers store a
/// packed form of this instead of observation vectors.
struct WorldCore {
  std::vector<Pos> pursuers;
  std::vector<Pos> evaders;
  std::vector<std::uint8_t> alive;  // per evader
  int t = 0;
};

struct CaptureEvent {
  int evader = 0;
  Pos cell;
  std::vector<int> pursuers;  // surrounding pursuer ids
};

struct StepResult {
  std::vector<std::vector<double>> observations;  // per pursuer
  std::vector<double> rewards;                    // per pursuer
  double team_reward = 0.0;                       // mean of rewards
  bool done = false;
  std::vector<CaptureEvent> captures;
  std::vector<Action> evader_actions;  // resolved, Stay for dead evaders
};

class GridWorld;

/// Bit-exact copy of the full environment, including RNG state.
struct EnvSnapshot {
  EnvConfig config;
  WorldCore core;
  Rng rng;
  std::vector<std::uint8_t> controlled;
  bool done = false;
};

class GridWorld {
 public:
  GridWorld() = default;

  /// Places pursuers then evaders on distinct cells using the seeded stream.
  static GridWorld reset(const EnvConfig& config, std::uint64_t seed);

  /// Advances one step. Evader actions come from `overrides` when present
  /// (attacker control), otherwise from the heuristic controller. Throws
  /// ContractError for overrides naming dead evaders or when already done.
  StepResult step(const std::vector<Action>& pursuer_actions,
                  const std::map<int, Action>& evader_overrides = {});

  std::vector<double> observe(int agent_id) const;
  std::vector<double> global_state() const;

  EnvSnapshot snapshot() const;
  static GridWorld restore(const EnvSnapshot& snap);

  /// Heuristic evader controller: with probability 0.8 the legal move that
  /// maximizes distance to the nearest pursuer (ties toward the lowest action
  /// index), otherwise a uniform legal move. Staying put is always legal.
  /// Draws from the world RNG.
  Action heuristic_evader_action(int evader_id);

  const EnvConfig& config() const { return cfg_; }
  const WorldCore& core() const { return core_; }
  bool done() const { return done_; }
  int t() const { return core_.t; }
  int alive_evaders() const;
  Rng& rng() { return rng_; }

  void set_controlled(int evader_id, bool controlled);
  bool is_controlled(int evader_id) const;

  bool same_state(const GridWorld& other) const;

 private:
  bool cell_free(const Pos& p) const;
  bool in_bounds(const Pos& p) const;
  std::vector<Action> legal_evader_actions(int evader_id) const;

  EnvConfig cfg_;
  WorldCore core_;
  Rng rng_;
  std::vector<std::uint8_t> controlled_;
  bool done_ = false;
};

/// Observation built from a positions-only view (used when replay buffers
/// rematerialize training batches).
std::vector<double> observation_from(const WorldCore& core, const EnvConfig& cfg,
                                     int agent_id);
std::vector<double> global_state_from(const WorldCore& core, const EnvConfig& cfg);

/// Packed fixed-stride encoding of WorldCore for replay storage.
int packed_state_stride(const EnvConfig& cfg);
void pack_state(const WorldCore& core, const EnvConfig& cfg, std::uint8_t* out);
WorldCore unpack_state(const std::uint8_t* in, const EnvConfig& cfg, int t);

// ---- trajectory log (line-delimited JSON, schema "blastlab/trajlog/1") -----

struct TrajStep {
  int t = 0;
  std::vector<Pos> pursuers;
  std::vector<Pos> evaders;
  std::vector<std::uint8_t> alive;
  std::vector<int> actions;         // pursuer actions
  std::vector<int> evader_actions;  // resolved evader actions
  std::vector<double> rewards;
  double team_reward = 0.0;
  std::vector<CaptureEvent> captures;
  bool trigger_fire = false;
  bool attack_window = false;
};

struct TrajectoryLog {
  int n_pursuers = 0;
  int n_evaders = 0;
  int step_limit = 0;
  std::optional<int> blast_agent;
  std::vector<TrajStep> steps;
};

class TrajectoryWriter {
 public:
  TrajectoryWriter(const std::string& path, const EnvConfig& cfg,
                   std::optional<int> blast_agent);
  ~TrajectoryWriter();
  void write(const TrajStep& step);
  void close();

 private:
  struct Impl;
  Impl* impl_;
};

TrajectoryLog read_trajectory(const std::string& path);

}  // namespace blastlab
