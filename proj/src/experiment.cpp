#include "blastlab/experiment.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "blastlab/checkpoint.hpp"
#include "blastlab/errors.hpp"

namespace blastlab {

namespace fs = std::filesystem;
using nlohmann::json;

void ExperimentConfig::validate() const {
  env.validate();
  if (hack.lambda < 0.0 || hack.lambda > 1.0) throw ConfigError("hack.lambda must be in [0,1]");
  if (hack.poison_rate < 0.0 || hack.poison_rate > 1.0)
    throw ConfigError("hack.poison_rate must be in [0,1]");
  if (hack.attack_period <= 0) throw ConfigError("hack.attack_period must be positive");
  if (hack.agent_index < 0 || hack.agent_index >= env.n_pursuers)
    throw ConfigError("hack.agent_index out of range");
  if (clean_train.episodes <= 0 || blast_train.episodes <= 0)
    throw ConfigError("training episode counts must be positive");
  if (collect_stochastic_fraction < 0.0 || collect_stochastic_fraction > 1.0)
    throw ConfigError("collect_stochastic_fraction must be in [0,1]");
  if (eval_episodes <= 0) throw ConfigError("eval_episodes must be positive");
}

namespace {

json env_to_json(const EnvConfig& e) {
  return {{"width", e.width},
          {"height", e.height},
          {"pursuers", e.n_pursuers},
          {"evaders", e.n_evaders},
          {"window_radius", e.window_radius},
          {"step_limit", e.step_limit},
          {"capture_reward", e.capture_reward},
          {"touch_reward", e.touch_reward},
          {"step_penalty", e.step_penalty}};
}

EnvConfig env_from_json(const json& j) {
  EnvConfig e;
  e.width = j.value("width", e.width);
  e.height = j.value("height", e.height);
  e.n_pursuers = j.value("pursuers", e.n_pursuers);
  e.n_evaders = j.value("evaders", e.n_evaders);
  e.window_radius = j.value("window_radius", e.window_radius);
  e.step_limit = j.value("step_limit", e.step_limit);
  e.capture_reward = j.value("capture_reward", e.capture_reward);
  e.touch_reward = j.value("touch_reward", e.touch_reward);
  e.step_penalty = j.value("step_penalty", e.step_penalty);
  return e;
}

json train_to_json(const TrainConfig& t) {
  return {{"episodes", t.episodes},
          {"batch_size", t.batch_size},
          {"buffer_capacity", t.buffer_capacity},
          {"sigma", t.sigma},
          {"gamma", t.gamma},
          {"learning_rate", t.learning_rate},
          {"target_update_interval", t.target_update_interval},
          {"rmsprop_decay", t.rmsprop_decay},
          {"rmsprop_epsilon", t.rmsprop_epsilon},
          {"grad_clip_norm", t.grad_clip_norm},
          {"qmix_embed", t.qmix_embed},
          {"hidden1", t.hidden1},
          {"hidden2", t.hidden2}};
}

TrainConfig train_from_json(const json& j, TrainConfig t) {
  t.episodes = j.value("episodes", t.episodes);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.buffer_capacity = j.value("buffer_capacity", t.buffer_capacity);
  t.sigma = j.value("sigma", t.sigma);
  t.gamma = j.value("gamma", t.gamma);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.target_update_interval = j.value("target_update_interval", t.target_update_interval);
  t.rmsprop_decay = j.value("rmsprop_decay", t.rmsprop_decay);
  t.rmsprop_epsilon = j.value("rmsprop_epsilon", t.rmsprop_epsilon);
  t.grad_clip_norm = j.value("grad_clip_norm", t.grad_clip_norm);
  t.qmix_embed = j.value("qmix_embed", t.qmix_embed);
  t.hidden1 = j.value("hidden1", t.hidden1);
  t.hidden2 = j.value("hidden2", t.hidden2);
  return t;
}

json config_to_json_obj(const ExperimentConfig& c) {
  json j;
  j["schema"] = "blastlab/config/1";
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["algorithm"] = algorithm_name(c.algorithm);
  j["env"] = env_to_json(c.env);
  j["clean_train"] = train_to_json(c.clean_train);
  j["blast_train"] = train_to_json(c.blast_train);
  j["hack"] = {{"lambda", c.hack.lambda},
               {"poison_rate", c.hack.poison_rate},
               {"attack_period", c.hack.attack_period},
               {"agent_index", c.hack.agent_index}};
  j["trigger_path"] = c.trigger_path;
  j["collect"] = {{"steps", c.collect_steps},
                  {"stochastic_fraction", c.collect_stochastic_fraction}};
  j["eval"] = {{"episodes", c.eval_episodes}, {"trajectories", c.eval_trajectories}};
  j["sweep"] = {{"lambdas", c.sweep_lambdas},
                {"poison_rates", c.sweep_poison_rates},
                {"blast_episodes", c.sweep_blast_episodes},
                {"eval_episodes", c.sweep_eval_episodes}};
  j["detect"] = {{"episodes", c.detect_episodes},
                 {"expected_poison_rate", c.detect_expected_poison_rate},
                 {"small_cluster_threshold", c.detect_small_cluster_threshold},
                 {"spectral_multiplier", c.detect_spectral_multiplier}};
  return j;
}

ExperimentConfig config_from_json_obj(const json& j) {
  if (j.value("schema", "") != "blastlab/config/1")
    throw ConfigError("config: unknown or missing schema (want blastlab/config/1)");
  ExperimentConfig c;
  c.seed = j.value("seed", c.seed);
  c.out_dir = j.value("out_dir", c.out_dir);
  if (j.contains("algorithm")) {
    auto algo = algorithm_from_name(j["algorithm"].get<std::string>());
    if (!algo) throw ConfigError("config: algorithm must be vdn or qmix");
    c.algorithm = *algo;
  }
  if (j.contains("env")) c.env = env_from_json(j["env"]);
  if (j.contains("clean_train")) c.clean_train = train_from_json(j["clean_train"], c.clean_train);
  if (j.contains("blast_train")) c.blast_train = train_from_json(j["blast_train"], c.blast_train);
  if (j.contains("hack")) {
    const auto& h = j["hack"];
    c.hack.lambda = h.value("lambda", c.hack.lambda);
    c.hack.poison_rate = h.value("poison_rate", c.hack.poison_rate);
    c.hack.attack_period = h.value("attack_period", c.hack.attack_period);
    c.hack.agent_index = h.value("agent_index", c.hack.agent_index);
  }
  c.trigger_path = j.value("trigger_path", c.trigger_path);
  if (j.contains("collect")) {
    c.collect_steps = j["collect"].value("steps", c.collect_steps);
    c.collect_stochastic_fraction =
        j["collect"].value("stochastic_fraction", c.collect_stochastic_fraction);
  }
  if (j.contains("eval")) {
    c.eval_episodes = j["eval"].value("episodes", c.eval_episodes);
    c.eval_trajectories = j["eval"].value("trajectories", c.eval_trajectories);
  }
  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    if (s.contains("lambdas")) c.sweep_lambdas = s["lambdas"].get<std::vector<double>>();
    if (s.contains("poison_rates"))
      c.sweep_poison_rates = s["poison_rates"].get<std::vector<double>>();
    c.sweep_blast_episodes = s.value("blast_episodes", c.sweep_blast_episodes);
    c.sweep_eval_episodes = s.value("eval_episodes", c.sweep_eval_episodes);
  }
  if (j.contains("detect")) {
    const auto& d = j["detect"];
    c.detect_episodes = d.value("episodes", c.detect_episodes);
    c.detect_expected_poison_rate =
        d.value("expected_poison_rate", c.detect_expected_poison_rate);
    c.detect_small_cluster_threshold =
        d.value("small_cluster_threshold", c.detect_small_cluster_threshold);
    c.detect_spectral_multiplier =
        d.value("spectral_multiplier", c.detect_spectral_multiplier);
  }
  return c;
}

void apply_override(json& j, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must be key.path=value, got '" + kv + "'");
  const std::string path = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // plain string
  }
  json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("override has empty key path");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &((*node)[parts[i]]);
  (*node)[parts.back()] = value;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& cfg) {
  return config_to_json_obj(cfg).dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return config_from_json_obj(j);
}

ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + ": invalid JSON: " + e.what());
  }
  for (const auto& kv : overrides) apply_override(j, kv);
  ExperimentConfig cfg = config_from_json_obj(j);
  cfg.validate();
  return cfg;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_to_json(cfg);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string resolve_out_dir(const ExperimentConfig& cfg) {
  const char* root = std::getenv("BLASTLAB_OUTPUT_ROOT");
  fs::path p(cfg.out_dir);
  if (root && *root && p.is_relative()) p = fs::path(root) / p;
  return p.string();
}

StagePaths stage_paths(const ExperimentConfig& cfg) { return {resolve_out_dir(cfg)}; }

void write_provenance(const std::string& dir, const ExperimentConfig& cfg,
                      const std::string& subcommand) {
  fs::create_directories(dir);
  json j;
  j["schema"] = "blastlab/provenance/1";
  j["subcommand"] = subcommand;
  j["seed"] = cfg.seed;
  j["config_hash"] = config_hash(cfg);
  j["config"] = json::parse(config_to_json(cfg));
  std::ofstream os(dir + "/resolved_config.json", std::ios::trunc);
  if (!os) throw ConfigError("cannot write provenance into " + dir);
  os << j.dump(2) << "\n";
}

RecurrentQNetwork load_network(const std::string& path, const EnvConfig& env,
                               const TrainConfig& tc, const std::string& producer) {
  if (!fs::exists(path))
    throw MissingArtifactError("missing checkpoint " + path + "; run `" + producer +
                                   "` first",
                               producer);
  Rng dummy = Rng(0);
  RecurrentQNetwork net(env.obs_size(), kNumActions, dummy, tc.hidden1, tc.hidden2);
  restore_into(net, load_checkpoint(path));
  return net;
}

// ---- stages -------------------------------------------------------------------

void run_train_clean(const ExperimentConfig& cfg) {
  cfg.validate();
  const StagePaths paths = stage_paths(cfg);
  fs::create_directories(paths.root + "/clean");
  write_provenance(paths.root + "/clean", cfg, "train-clean");

  TrainedPolicy policy = train_clean(cfg.env, cfg.algorithm, cfg.clean_train, cfg.seed);

  Checkpoint ckpt = checkpoint_of(policy.net, {"", cfg.seed,
                                               static_cast<std::uint64_t>(cfg.clean_train.episodes)});
  if (cfg.algorithm == Algorithm::QMIX && policy.head.mixer) {
    for (auto& [name, t] : policy.head.mixer->named_parameters()) {
      ckpt.entries.push_back({"mixer." + name, t.shape(),
                              std::vector<double>(t.values().begin(), t.values().end())});
    }
  }
  save_checkpoint(paths.clean_checkpoint(), ckpt);
  write_curve_csv(paths.clean_curve(), policy.curve);
}

void run_collect(const ExperimentConfig& cfg) {
  cfg.validate();
  const StagePaths paths = stage_paths(cfg);
  RecurrentQNetwork net =
      load_network(paths.clean_checkpoint(), cfg.env, cfg.clean_train, "train-clean");
  fs::create_directories(paths.root + "/dataset");
  write_provenance(paths.root + "/dataset", cfg, "collect");
  TransitionDataset dataset = collect_dataset(net, cfg.env, cfg.collect_steps,
                                              cfg.collect_stochastic_fraction, cfg.seed);
  dataset.save(paths.dataset());
}

void run_mine_failures(const ExperimentConfig& cfg) {
  cfg.validate();
  const StagePaths paths = stage_paths(cfg);
  if (!fs::exists(paths.dataset()))
    throw MissingArtifactError("missing dataset " + paths.dataset() + "; run `collect` first",
                               "collect");
  TransitionDataset dataset = TransitionDataset::load(paths.dataset());
  fs::create_directories(paths.root + "/failures");
  write_provenance(paths.root + "/failures", cfg, "mine-failures");
  FailureObservations fails = mine_failure_observations(dataset);
  save_failure_observations(paths.failures(), fails);
}

void run_train_blast(const ExperimentConfig& cfg) {
  cfg.validate();
  const StagePaths paths = stage_paths(cfg);
  RecurrentQNetwork clean_net =
      load_network(paths.clean_checkpoint(), cfg.env, cfg.clean_train, "train-clean");
  if (!fs::exists(paths.failures()))
    throw MissingArtifactError(
        "missing failure observations " + paths.failures() + "; run `mine-failures` first",
        "mine-failures");
  FailureObservations fails = load_failure_observations(paths.failures());
  TriggerSpec trigger = load_trigger(cfg.trigger_path);

  fs::create_directories(paths.root + "/blast");
  write_provenance(paths.root + "/blast", cfg, "train-blast");
  BlastTrainResult result = train_blast(clean_net, cfg.env, trigger, cfg.hack, fails,
                                        cfg.blast_train, cfg.seed);
  save_checkpoint(paths.blast_checkpoint(),
                  checkpoint_of(result.net,
                                {"", cfg.seed,
                                 static_cast<std::uint64_t>(cfg.blast_train.episodes)}));
  write_curve_csv(paths.blast_curve(), result.curve);
  write_blast_episode_csv(paths.blast_episodes(), result.episodes);
}

MetricsReport run_evaluate(const ExperimentConfig& cfg) {
  cfg.validate();
  const StagePaths paths = stage_paths(cfg);
  RecurrentQNetwork clean_net =
      load_network(paths.clean_checkpoint(), cfg.env, cfg.clean_train, "train-clean");
  RecurrentQNetwork blast_net =
      load_network(paths.blast_checkpoint(), cfg.env, cfg.blast_train, "train-blast");
  TriggerSpec trigger = load_trigger(cfg.trigger_path);

  fs::create_directories(paths.root + "/eval");
  write_provenance(paths.root + "/eval", cfg, "evaluate");

  TeamAssembly clean_team{&clean_net, nullptr, cfg.hack.agent_index};
  TeamAssembly blast_team{&clean_net, &blast_net, cfg.hack.agent_index};

  EvalOptions base;
  base.episodes = cfg.eval_episodes;
  base.seed = cfg.seed;
  base.attack_period = cfg.hack.attack_period;

  EvalOptions clean_opts = base;
  clean_opts.trajectory_dir = paths.root + "/eval/traj_clean";
  EvalReport clean_free = evaluate_policy(clean_team, cfg.env, clean_opts);

  EvalOptions bd_free_opts = base;
  bd_free_opts.trajectory_dir = paths.root + "/eval/traj_blast_free";
  EvalReport blast_free = evaluate_policy(blast_team, cfg.env, bd_free_opts);

  EvalOptions bd_trig_opts = base;
  bd_trig_opts.trigger = &trigger;
  bd_trig_opts.trajectory_dir = paths.root + "/eval/traj_blast_trigger";
  EvalReport blast_trig = evaluate_policy(blast_team, cfg.env, bd_trig_opts);

  // Trajectory logging is limited to the first few episodes to keep artifacts
  // small: re-run those episodes alone with logging enabled.
  auto trim_logs = [&](const std::string& dir) {
    // keep only the first cfg.eval_trajectories logs
    for (int e = cfg.eval_trajectories; e < cfg.eval_episodes; ++e) {
      std::ostringstream name;
      name << dir << "/episode_" << e << ".jsonl";
      std::error_code ec;
      fs::remove(name.str(), ec);
    }
  };
  trim_logs(clean_opts.trajectory_dir);
  trim_logs(bd_free_opts.trajectory_dir);
  trim_logs(bd_trig_opts.trajectory_dir);

  MetricsReport report =
      derive_metrics(clean_free.mean_reward, clean_free.success_rate, blast_free.mean_reward,
                     blast_free.success_rate, blast_trig.mean_reward, blast_trig.success_rate);
  save_metrics(paths.metrics_json(), report);
  write_metrics_csv(paths.metrics_csv(), report);

  json detail;
  detail["schema"] = "blastlab/eval-detail/1";
  auto rep = [](const EvalReport& r) {
    return json{{"episodes", r.episodes},
                {"mean_reward", r.mean_reward},
                {"std_reward", r.std_reward},
                {"success_rate", r.success_rate},
                {"mean_length", r.mean_length},
                {"mean_captures", r.mean_captures},
                {"fired_episodes", r.fired_episodes},
                {"episode_rewards", r.episode_rewards},
                {"fire_steps", r.fire_steps}};
  };
  detail["clean_trigger_free"] = rep(clean_free);
  detail["blast_trigger_free"] = rep(blast_free);
  detail["blast_trigger_embedded"] = rep(blast_trig);
  std::ofstream os(paths.root + "/eval/detail.json", std::ios::trunc);
  os << detail.dump(2) << "\n";

  // Analysis artifacts from the first triggered trajectory.
  const std::string first_trig = bd_trig_opts.trajectory_dir + "/episode_0.jsonl";
  if (fs::exists(first_trig)) {
    TrajectoryLog log = read_trajectory(first_trig);
    write_timestep_rewards_csv(paths.root + "/eval/timestep_rewards.csv",
                               per_agent_timestep_rewards(log));
    write_action_histogram_csv(paths.root + "/eval/action_histogram.csv",
                               action_distribution(log, 10));
  }
  return report;
}

namespace {

std::string sweep_point_name(double lambda, double p) {
  std::ostringstream os;
  os << "lambda_" << lambda << "_p_" << p;
  std::string s = os.str();
  for (char& c : s)
    if (c == '.') c = 'd';
  return s;
}

}  // namespace

void run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const StagePaths paths = stage_paths(cfg);
  fs::create_directories(paths.sweep_dir());
  write_provenance(paths.sweep_dir(), cfg, "sweep");

  std::vector<std::pair<double, double>> points;
  for (double l : cfg.sweep_lambdas) points.emplace_back(l, cfg.hack.poison_rate);
  for (double p : cfg.sweep_poison_rates) {
    if (std::find(points.begin(), points.end(), std::make_pair(cfg.hack.lambda, p)) ==
        points.end())
      points.emplace_back(cfg.hack.lambda, p);
  }

  for (const auto& [lambda, p] : points) {
    ExperimentConfig point = cfg;
    point.hack.lambda = lambda;
    point.hack.poison_rate = p;
    point.blast_train.episodes = cfg.sweep_blast_episodes;
    point.eval_episodes = cfg.sweep_eval_episodes;
    point.eval_trajectories = 0;
    point.out_dir = cfg.out_dir + "/sweep/" + sweep_point_name(lambda, p);

    // Sweep points reuse the parent's clean policy and mined failures.
    const StagePaths ppaths = stage_paths(point);
    fs::create_directories(ppaths.root + "/clean");
    fs::create_directories(ppaths.root + "/failures");
    fs::copy_file(paths.clean_checkpoint(), ppaths.clean_checkpoint(),
                  fs::copy_options::overwrite_existing);
    fs::copy_file(paths.failures(), ppaths.failures(), fs::copy_options::overwrite_existing);

    run_train_blast(point);
    run_evaluate(point);
  }
}

void run_report(const ExperimentConfig& cfg) {
  cfg.validate();
  const StagePaths paths = stage_paths(cfg);
  if (!fs::exists(paths.sweep_dir()))
    throw MissingArtifactError("missing sweep directory " + paths.sweep_dir() +
                                   "; run `sweep` first",
                               "sweep");

  const std::uint64_t base_env_hash = [&cfg] {
    ExperimentConfig env_only;
    env_only.env = cfg.env;
    return config_hash(env_only);
  }();

  std::ofstream os(paths.sweep_table(), std::ios::trunc);
  if (!os) throw ConfigError("cannot write sweep table");
  os.precision(17);
  os << "lambda,poison_rate,cER,cWR,bER,bWR,bER_tg,bWR_tg,AER,ASR,CPVR,WRVR\n";

  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(paths.sweep_dir()))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());

  for (const auto& dir : dirs) {
    const fs::path metrics = dir / "eval" / "metrics.json";
    const fs::path prov = dir / "eval" / "resolved_config.json";
    if (!fs::exists(metrics) || !fs::exists(prov)) continue;
    std::ifstream pis(prov.string());
    json pj = json::parse(pis);
    ExperimentConfig point = config_from_json(pj["config"].dump());
    ExperimentConfig env_only;
    env_only.env = point.env;
    if (config_hash(env_only) != base_env_hash)
      throw ContractError("report: sweep point " + dir.string() +
                          " ran on a different environment config");
    MetricsReport m = load_metrics(metrics.string());
    auto cell = [](const std::optional<double>& v) {
      return v ? std::to_string(*v) : std::string();
    };
    os << point.hack.lambda << "," << point.hack.poison_rate << "," << m.cER << "," << m.cWR
       << "," << m.bER << "," << m.bWR << "," << m.bER_tg << "," << m.bWR_tg << ","
       << cell(m.AER) << "," << cell(m.ASR) << "," << cell(m.CPVR) << "," << cell(m.WRVR)
       << "\n";
  }
}

DetectionReport run_detect(const ExperimentConfig& cfg, const std::string& method) {
  cfg.validate();
  const StagePaths paths = stage_paths(cfg);
  RecurrentQNetwork clean_net =
      load_network(paths.clean_checkpoint(), cfg.env, cfg.clean_train, "train-clean");
  RecurrentQNetwork blast_net =
      load_network(paths.blast_checkpoint(), cfg.env, cfg.blast_train, "train-blast");
  TriggerSpec trigger = load_trigger(cfg.trigger_path);

  fs::create_directories(paths.root + "/detect");
  write_provenance(paths.root + "/detect", cfg, "detect-" + method);

  TeamAssembly team{&clean_net, &blast_net, cfg.hack.agent_index};
  ActivationSet set = collect_activations(team, cfg.env, cfg.detect_episodes, cfg.seed,
                                          &trigger, cfg.hack.attack_period);
  write_activations_csv(paths.root + "/detect/activations.csv", set);

  DetectionReport report;
  if (method == "ac") {
    report = activation_clustering_defense(set, cfg.seed, cfg.detect_small_cluster_threshold);
    save_detection_report(paths.root + "/detect/ac_report.json", report);
  } else if (method == "ss") {
    report = spectral_signature_defense(set, cfg.detect_expected_poison_rate,
                                        cfg.detect_spectral_multiplier);
    save_detection_report(paths.root + "/detect/ss_report.json", report);
  } else {
    throw ConfigError("unknown detect method: " + method);
  }
  return report;
}

}  // namespace blastlab
