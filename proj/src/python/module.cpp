#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "blastlab/blast.hpp"
#include "blastlab/defense.hpp"
#include "blastlab/experiment.hpp"
#include "blastlab/gridworld.hpp"
#include "blastlab/marl.hpp"
#include "blastlab/metrics.hpp"
#include "blastlab/trigger.hpp"

namespace py = pybind11;
using namespace blastlab;

namespace {

Matrix matrix_from_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m;
  m.rows = static_cast<int>(rows.size());
  m.cols = rows.empty() ? 0 : static_cast<int>(rows[0].size());
  m.data.reserve(static_cast<std::size_t>(m.rows) * m.cols);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != m.cols)
      throw ContractError("ragged matrix rows");
    m.data.insert(m.data.end(), r.begin(), r.end());
  }
  return m;
}

std::vector<std::vector<double>> matrix_to_rows(const Matrix& m) {
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(m.rows));
  for (int r = 0; r < m.rows; ++r)
    rows.emplace_back(m.data.begin() + static_cast<std::size_t>(r) * m.cols,
                      m.data.begin() + static_cast<std::size_t>(r + 1) * m.cols);
  return rows;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "blastlab core: pursuit gridworld, trigger DSL, attack pipeline, detectors";

  py::register_exception<ShapeError>(m, "ShapeError");
  py::register_exception<ContractError>(m, "ContractError");
  py::register_exception<ConfigError>(m, "BlastlabConfigError");
  py::register_exception<MissingArtifactError>(m, "MissingArtifactError");

  py::enum_<Action>(m, "Action")
      .value("NORTH", Action::North)
      .value("SOUTH", Action::South)
      .value("EAST", Action::East)
      .value("WEST", Action::West)
      .value("STAY", Action::Stay);

  py::class_<EnvConfig>(m, "EnvConfig")
      .def(py::init<>())
      .def_readwrite("width", &EnvConfig::width)
      .def_readwrite("height", &EnvConfig::height)
      .def_readwrite("n_pursuers", &EnvConfig::n_pursuers)
      .def_readwrite("n_evaders", &EnvConfig::n_evaders)
      .def_readwrite("window_radius", &EnvConfig::window_radius)
      .def_readwrite("step_limit", &EnvConfig::step_limit)
      .def_readwrite("capture_reward", &EnvConfig::capture_reward)
      .def_readwrite("touch_reward", &EnvConfig::touch_reward)
      .def_readwrite("step_penalty", &EnvConfig::step_penalty)
      .def("obs_size", &EnvConfig::obs_size)
      .def("global_state_size", &EnvConfig::global_state_size);

  py::class_<Pos>(m, "Pos")
      .def_readonly("x", &Pos::x)
      .def_readonly("y", &Pos::y);

  py::class_<CaptureEvent>(m, "CaptureEvent")
      .def_readonly("evader", &CaptureEvent::evader)
      .def_readonly("pursuers", &CaptureEvent::pursuers);

  py::class_<StepResult>(m, "StepResult")
      .def_readonly("observations", &StepResult::observations)
      .def_readonly("rewards", &StepResult::rewards)
      .def_readonly("team_reward", &StepResult::team_reward)
      .def_readonly("done", &StepResult::done)
      .def_readonly("captures", &StepResult::captures);

  py::class_<EnvSnapshot>(m, "EnvSnapshot");

  py::class_<GridWorld>(m, "GridWorld")
      .def_static("reset", &GridWorld::reset, py::arg("config"), py::arg("seed"))
      .def("step",
           [](GridWorld& w, const std::vector<int>& actions,
              const std::map<int, int>& overrides) {
             std::vector<Action> acts;
             for (int a : actions) acts.push_back(static_cast<Action>(a));
             std::map<int, Action> ov;
             for (const auto& [k, v] : overrides) ov[k] = static_cast<Action>(v);
             return w.step(acts, ov);
           },
           py::arg("actions"), py::arg("evader_overrides") = std::map<int, int>{})
      .def("observe", &GridWorld::observe)
      .def("global_state", &GridWorld::global_state)
      .def("snapshot", &GridWorld::snapshot)
      .def_static("restore", &GridWorld::restore)
      .def("done", &GridWorld::done)
      .def("t", &GridWorld::t)
      .def("alive_evaders", &GridWorld::alive_evaders)
      .def("same_state", &GridWorld::same_state)
      .def("pursuer_positions", [](const GridWorld& w) {
        std::vector<std::pair<int, int>> out;
        for (const auto& p : w.core().pursuers) out.emplace_back(p.x, p.y);
        return out;
      })
      .def("evader_positions", [](const GridWorld& w) {
        std::vector<std::tuple<int, int, bool>> out;
        for (std::size_t e = 0; e < w.core().evaders.size(); ++e)
          out.emplace_back(w.core().evaders[e].x, w.core().evaders[e].y,
                           w.core().alive[e] != 0);
        return out;
      });

  py::class_<TriggerSpec>(m, "TriggerSpec")
      .def_readonly("window_len", &TriggerSpec::window_len);
  m.def("load_trigger", &load_trigger);
  m.def("trigger_from_json", &trigger_from_json);
  m.def("trigger_to_json", &trigger_to_json);
  m.def("scan",
        [](const std::vector<std::tuple<double, double, double, double>>& positions,
           const std::vector<std::optional<int>>& actions, const TriggerSpec& spec) {
          std::vector<PosPair> pos;
          for (const auto& [bx, by, ex, ey] : positions) pos.push_back({bx, by, ex, ey});
          std::vector<std::optional<Action>> acts;
          for (const auto& a : actions)
            acts.push_back(a ? std::optional<Action>(static_cast<Action>(*a)) : std::nullopt);
          return scan(pos, acts, spec);
        },
        py::arg("positions"), py::arg("attacker_actions"), py::arg("spec"));

  py::class_<MetricsReport>(m, "MetricsReport")
      .def_readonly("cER", &MetricsReport::cER)
      .def_readonly("cWR", &MetricsReport::cWR)
      .def_readonly("bER", &MetricsReport::bER)
      .def_readonly("bWR", &MetricsReport::bWR)
      .def_readonly("bER_tg", &MetricsReport::bER_tg)
      .def_readonly("bWR_tg", &MetricsReport::bWR_tg)
      .def_readonly("AER", &MetricsReport::AER)
      .def_readonly("ASR", &MetricsReport::ASR)
      .def_readonly("CPVR", &MetricsReport::CPVR)
      .def_readonly("WRVR", &MetricsReport::WRVR);
  m.def("derive_metrics", &derive_metrics, py::arg("cER"), py::arg("cWR"), py::arg("bER"),
        py::arg("bWR"), py::arg("bER_tg"), py::arg("bWR_tg"));

  m.def("pca_project", [](const std::vector<std::vector<double>>& rows, int dims) {
    const PcaResult r = pca_project(matrix_from_rows(rows), dims);
    return py::make_tuple(matrix_to_rows(r.projected), r.eigenvalues);
  }, py::arg("rows"), py::arg("dims") = 3);
  m.def("kmeans", [](const std::vector<std::vector<double>>& rows, int k, std::uint64_t seed,
                     int restarts) {
    const KmeansResult r = kmeans(matrix_from_rows(rows), k, seed, restarts);
    return py::make_tuple(r.labels, matrix_to_rows(r.centroids), r.within_ss);
  }, py::arg("rows"), py::arg("k") = 2, py::arg("seed") = 0, py::arg("restarts") = 10);
  m.def("spectral_scores", [](const std::vector<std::vector<double>>& rows) {
    return spectral_scores(matrix_from_rows(rows));
  });

  m.def("mine_failure_observations",
        [](const std::vector<std::vector<std::vector<double>>>& next_obs,
           const std::vector<double>& rewards) {
          TransitionDataset d;
          for (std::size_t i = 0; i < rewards.size(); ++i)
            d.add_raw({}, {}, next_obs[i], rewards[i]);
          const FailureObservations f = mine_failure_observations(d);
          return py::make_tuple(f.observations, f.min_reward, f.tuple_index);
        },
        py::arg("next_observations"), py::arg("rewards"));

  // Pipeline stages driven from a config file (same surface as the CLI).
  m.def("load_config", [](const std::string& path, const std::vector<std::string>& overrides) {
    return config_to_json(load_config(path, overrides));
  }, py::arg("path"), py::arg("overrides") = std::vector<std::string>{});
  m.def("run_train_clean", [](const std::string& cfg) { run_train_clean(config_from_json(cfg)); });
  m.def("run_collect", [](const std::string& cfg) { run_collect(config_from_json(cfg)); });
  m.def("run_mine_failures", [](const std::string& cfg) { run_mine_failures(config_from_json(cfg)); });
  m.def("run_train_blast", [](const std::string& cfg) { run_train_blast(config_from_json(cfg)); });
  m.def("run_evaluate", [](const std::string& cfg) { return run_evaluate(config_from_json(cfg)); });

  m.attr("N_ACTIONS") = kNumActions;
}
