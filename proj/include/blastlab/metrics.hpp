#pragma once

#include <optional>
#include <string>
#include <vector>

#include "blastlab/gridworld.hpp"

namespace blastlab {

/// Attack metrics derived from the six measured quantities.
///   cER/cWR: clean model, trigger-free episodes
///   bER/bWR: backdoored model, trigger-free episodes
///   bER_tg/bWR_tg: backdoored model, trigger-embedded episodes
/// Win-rate metrics are unavailable (nullopt) when their denominator is zero.
struct MetricsReport {
  double cER = 0, cWR = 0, bER = 0, bWR = 0, bER_tg = 0, bWR_tg = 0;
  std::optional<double> AER;   // |bER_tg - cER| / cER
  std::optional<double> ASR;   // |bWR_tg - cWR| / cWR
  std::optional<double> CPVR;  // |bER - cER| / cER
  std::optional<double> WRVR;  // |bWR - cWR| / cWR
};

MetricsReport derive_metrics(double cER, double cWR, double bER, double bWR, double bER_tg,
                             double bWR_tg);

std::string metrics_to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const std::string& text);
void save_metrics(const std::string& path, const MetricsReport& m);
MetricsReport load_metrics(const std::string& path);
void write_metrics_csv(const std::string& path, const MetricsReport& m);

/// Per-agent per-timestep rewards with attack-window annotations.
struct TimestepRewardMatrix {
  int n_agents = 0;
  int timesteps = 0;
  std::vector<double> values;        // row-major [n_agents, timesteps]
  std::vector<double> team_rewards;  // per timestep
  std::vector<std::pair<int, int>> attack_windows;  // inclusive [start, end]

  double at(int agent, int t) const {
    return values[static_cast<std::size_t>(agent) * timesteps + t];
  }
};

TimestepRewardMatrix per_agent_timestep_rewards(const TrajectoryLog& log);
void write_timestep_rewards_csv(const std::string& path, const TimestepRewardMatrix& m);

/// Clean agents' action counts per time bin (the backdoored agent named in
/// the log header is excluded).
struct ActionHistogram {
  int bin_width = 0;
  int n_bins = 0;
  std::vector<std::vector<int>> counts;  // [n_bins][kNumActions]
};

ActionHistogram action_distribution(const TrajectoryLog& log, int bin_width);
void write_action_histogram_csv(const std::string& path, const ActionHistogram& h);

}  // namespace blastlab
