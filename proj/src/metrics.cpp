#include "blastlab/metrics.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "blastlab/errors.hpp"

namespace blastlab {

using nlohmann::json;

MetricsReport derive_metrics(double cER, double cWR, double bER, double bWR, double bER_tg,
                             double bWR_tg) {
  MetricsReport m;
  m.cER = cER;
  m.cWR = cWR;
  m.bER = bER;
  m.bWR = bWR;
  m.bER_tg = bER_tg;
  m.bWR_tg = bWR_tg;
  if (cER != 0.0) {
    m.AER = std::abs(bER_tg - cER) / cER;
    m.CPVR = std::abs(bER - cER) / cER;
  }
  if (cWR != 0.0) {
    m.ASR = std::abs(bWR_tg - cWR) / cWR;
    m.WRVR = std::abs(bWR - cWR) / cWR;
  }
  return m;
}

namespace {

json opt_to_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> opt_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string metrics_to_json(const MetricsReport& m) {
  json j = {{"schema", "blastlab/metrics/1"},
            {"cER", m.cER},
            {"cWR", m.cWR},
            {"bER", m.bER},
            {"bWR", m.bWR},
            {"bER_tg", m.bER_tg},
            {"bWR_tg", m.bWR_tg},
            {"AER", opt_to_json(m.AER)},
            {"ASR", opt_to_json(m.ASR)},
            {"CPVR", opt_to_json(m.CPVR)},
            {"WRVR", opt_to_json(m.WRVR)}};
  return j.dump(2);
}

MetricsReport metrics_from_json(const std::string& text) {
  json j = json::parse(text);
  if (j.value("schema", "") != "blastlab/metrics/1")
    throw ConfigError("unknown metrics schema");
  MetricsReport m;
  m.cER = j["cER"].get<double>();
  m.cWR = j["cWR"].get<double>();
  m.bER = j["bER"].get<double>();
  m.bWR = j["bWR"].get<double>();
  m.bER_tg = j["bER_tg"].get<double>();
  m.bWR_tg = j["bWR_tg"].get<double>();
  m.AER = opt_from_json(j["AER"]);
  m.ASR = opt_from_json(j["ASR"]);
  m.CPVR = opt_from_json(j["CPVR"]);
  m.WRVR = opt_from_json(j["WRVR"]);
  return m;
}

void save_metrics(const std::string& path, const MetricsReport& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write metrics: " + path);
  os << metrics_to_json(m) << "\n";
}

MetricsReport load_metrics(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MissingArtifactError("cannot open metrics report: " + path, "evaluate");
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return metrics_from_json(text);
}

void write_metrics_csv(const std::string& path, const MetricsReport& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write metrics csv: " + path);
  os.precision(17);
  os << "metric,value\n";
  os << "cER," << m.cER << "\n";
  os << "cWR," << m.cWR << "\n";
  os << "bER," << m.bER << "\n";
  os << "bWR," << m.bWR << "\n";
  os << "bER_tg," << m.bER_tg << "\n";
  os << "bWR_tg," << m.bWR_tg << "\n";
  auto cell = [&os](const char* name, const std::optional<double>& v) {
    os << name << ",";
    if (v) os << *v;
    os << "\n";
  };
  cell("AER", m.AER);
  cell("ASR", m.ASR);
  cell("CPVR", m.CPVR);
  cell("WRVR", m.WRVR);
}

TimestepRewardMatrix per_agent_timestep_rewards(const TrajectoryLog& log) {
  TimestepRewardMatrix m;
  m.n_agents = log.n_pursuers;
  m.timesteps = static_cast<int>(log.steps.size());
  m.values.assign(static_cast<std::size_t>(m.n_agents) * m.timesteps, 0.0);
  m.team_rewards.reserve(log.steps.size());
  int window_start = -1;
  for (int t = 0; t < m.timesteps; ++t) {
    const TrajStep& s = log.steps[static_cast<std::size_t>(t)];
    if (static_cast<int>(s.rewards.size()) != m.n_agents)
      throw ContractError("trajectory step " + std::to_string(t) +
                          " lacks per-agent rewards");
    for (int a = 0; a < m.n_agents; ++a)
      m.values[static_cast<std::size_t>(a) * m.timesteps + t] =
          s.rewards[static_cast<std::size_t>(a)];
    m.team_rewards.push_back(s.team_reward);
    const bool in_window = s.attack_window;
    if (in_window && window_start < 0) window_start = t;
    if (!in_window && window_start >= 0) {
      m.attack_windows.emplace_back(window_start, t - 1);
      window_start = -1;
    }
  }
  if (window_start >= 0) m.attack_windows.emplace_back(window_start, m.timesteps - 1);
  return m;
}

void write_timestep_rewards_csv(const std::string& path, const TimestepRewardMatrix& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write timestep rewards: " + path);
  os.precision(17);
  os << "t";
  for (int a = 0; a < m.n_agents; ++a) os << ",agent" << a;
  os << ",team,attack_window\n";
  for (int t = 0; t < m.timesteps; ++t) {
    os << t;
    for (int a = 0; a < m.n_agents; ++a) os << "," << m.at(a, t);
    bool in_window = false;
    for (const auto& [s, e] : m.attack_windows) in_window = in_window || (t >= s && t <= e);
    os << "," << m.team_rewards[static_cast<std::size_t>(t)] << "," << (in_window ? 1 : 0)
       << "\n";
  }
}

ActionHistogram action_distribution(const TrajectoryLog& log, int bin_width) {
  if (bin_width <= 0) throw ContractError("action_distribution: bin width must be positive");
  ActionHistogram h;
  h.bin_width = bin_width;
  h.n_bins = (static_cast<int>(log.steps.size()) + bin_width - 1) / bin_width;
  h.counts.assign(static_cast<std::size_t>(h.n_bins),
                  std::vector<int>(static_cast<std::size_t>(kNumActions), 0));
  for (std::size_t t = 0; t < log.steps.size(); ++t) {
    const int bin = static_cast<int>(t) / bin_width;
    const TrajStep& s = log.steps[t];
    for (int a = 0; a < log.n_pursuers; ++a) {
      if (log.blast_agent && *log.blast_agent == a) continue;
      h.counts[static_cast<std::size_t>(bin)]
               [static_cast<std::size_t>(s.actions[static_cast<std::size_t>(a)])] += 1;
    }
  }
  return h;
}

void write_action_histogram_csv(const std::string& path, const ActionHistogram& h) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write action histogram: " + path);
  os << "bin,start_t";
  for (int a = 0; a < kNumActions; ++a) os << "," << action_name(static_cast<Action>(a));
  os << "\n";
  for (int b = 0; b < h.n_bins; ++b) {
    os << b << "," << b * h.bin_width;
    for (int a = 0; a < kNumActions; ++a)
      os << "," << h.counts[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)];
    os << "\n";
  }
}

}  // namespace blastlab
