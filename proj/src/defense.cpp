#include "blastlab/defense.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "blastlab/errors.hpp"

namespace blastlab {

using nlohmann::json;

std::vector<int> ActivationSet::ids_with_action(int action) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].action == action) out.push_back(static_cast<int>(i));
  return out;
}

ActivationSet collect_activations(const TeamAssembly& team, const EnvConfig& env_cfg,
                                  int episodes, std::uint64_t seed,
                                  const TriggerSpec* trigger, int attack_period) {
  if (!team.clean_net) throw ContractError("collect_activations: missing clean network");
  const RecurrentQNetwork* inspected =
      team.blast_net ? team.blast_net : team.clean_net;

  ActivationSet set;
  set.activation_width = inspected->penult_size();

  Rng eval_rng = Rng(seed).child(rng_tags::kDetect);
  const int n = env_cfg.n_pursuers;
  const int k = team.blast_agent;

  for (int episode = 0; episode < episodes; ++episode) {
    GridWorld world = GridWorld::reset(env_cfg, eval_rng.raw());
    std::vector<double> hiddens(static_cast<std::size_t>(n) * team.clean_net->hidden_size(),
                                0.0);
    std::vector<double> k_hidden(static_cast<std::size_t>(inspected->hidden_size()), 0.0);

    AttackerController ctrl;
    if (trigger) {
      ctrl = AttackerController(*trigger);
      ctrl.arm();
    }

    int window_left = 0;
    while (!world.done()) {
      AttackerController::StepPlan plan;
      if (trigger) plan = ctrl.step(world, k);
      if (plan.fire) window_left = attack_period;

      const auto rows = team_obs_rows_for(world);
      auto sel = select_actions(*team.clean_net, rows, n, hiddens, 0.0, nullptr);
      hiddens = std::move(sel.next_hidden);

      std::vector<double> krow(
          rows.begin() + static_cast<std::size_t>(k) * env_cfg.obs_size(),
          rows.begin() + static_cast<std::size_t>(k + 1) * env_cfg.obs_size());
      auto ksel = select_actions(*inspected, krow, 1, k_hidden, 0.0, nullptr);
      k_hidden = std::move(ksel.next_hidden);

      ActivationRecord rec;
      rec.observation_id = static_cast<int>(set.records.size());
      rec.action = ksel.actions[0];
      rec.activation = inspected->last_penultimate();
      rec.poisoned = window_left > 0;
      set.records.push_back(std::move(rec));

      sel.actions[static_cast<std::size_t>(k)] = ksel.actions[0];
      std::vector<Action> acts;
      acts.reserve(static_cast<std::size_t>(n));
      for (int a : sel.actions) acts.push_back(static_cast<Action>(a));
      world.step(acts, plan.overrides);
      if (window_left > 0) --window_left;
    }
  }
  return set;
}

void write_activations_csv(const std::string& path, const ActivationSet& set) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write activations: " + path);
  os.precision(17);
  os << "id,action,poisoned";
  for (int i = 0; i < set.activation_width; ++i) os << ",a" << i;
  os << "\n";
  for (const auto& r : set.records) {
    os << r.observation_id << "," << r.action << "," << (r.poisoned ? 1 : 0);
    for (double v : r.activation) os << "," << v;
    os << "\n";
  }
}

// ---- linear algebra ------------------------------------------------------------

void symmetric_eigen(const Matrix& a, std::vector<double>& eigenvalues, Matrix& eigenvectors) {
  const int n = a.rows;
  if (a.rows != a.cols) throw ContractError("symmetric_eigen: square matrices only");
  Matrix m = a;
  Matrix v{n, n, std::vector<double>(static_cast<std::size_t>(n) * n, 0.0)};
  for (int i = 0; i < n; ++i) v.at(i, i) = 1.0;

  // Cyclic Jacobi sweeps.
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += m.at(p, q) * m.at(p, q);
    if (off < 1e-22) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = m.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (m.at(q, q) - m.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double mip = m.at(i, p), miq = m.at(i, q);
          m.at(i, p) = c * mip - s * miq;
          m.at(i, q) = s * mip + c * miq;
        }
        for (int i = 0; i < n; ++i) {
          const double mpi = m.at(p, i), mqi = m.at(q, i);
          m.at(p, i) = c * mpi - s * mqi;
          m.at(q, i) = s * mpi + c * mqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = v.at(i, p), viq = v.at(i, q);
          v.at(i, p) = c * vip - s * viq;
          v.at(i, q) = s * vip + c * viq;
        }
      }
    }
  }

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&m](int x, int y) { return m.at(x, x) > m.at(y, y); });
  eigenvalues.resize(static_cast<std::size_t>(n));
  eigenvectors = Matrix{n, n, std::vector<double>(static_cast<std::size_t>(n) * n, 0.0)};
  for (int j = 0; j < n; ++j) {
    eigenvalues[static_cast<std::size_t>(j)] = m.at(order[static_cast<std::size_t>(j)],
                                                    order[static_cast<std::size_t>(j)]);
    for (int i = 0; i < n; ++i)
      eigenvectors.at(i, j) = v.at(i, order[static_cast<std::size_t>(j)]);
  }
}

namespace {

std::vector<double> column_means(const Matrix& x) {
  std::vector<double> mu(static_cast<std::size_t>(x.cols), 0.0);
  for (int r = 0; r < x.rows; ++r)
    for (int c = 0; c < x.cols; ++c) mu[static_cast<std::size_t>(c)] += x.at(r, c);
  for (double& v : mu) v /= x.rows;
  return mu;
}

Matrix covariance(const Matrix& x, const std::vector<double>& mu) {
  Matrix cov{x.cols, x.cols,
             std::vector<double>(static_cast<std::size_t>(x.cols) * x.cols, 0.0)};
  for (int r = 0; r < x.rows; ++r) {
    for (int i = 0; i < x.cols; ++i) {
      const double di = x.at(r, i) - mu[static_cast<std::size_t>(i)];
      for (int j = i; j < x.cols; ++j)
        cov.at(i, j) += di * (x.at(r, j) - mu[static_cast<std::size_t>(j)]);
    }
  }
  for (int i = 0; i < x.cols; ++i)
    for (int j = i; j < x.cols; ++j) {
      cov.at(i, j) /= x.rows;
      cov.at(j, i) = cov.at(i, j);
    }
  return cov;
}

}  // namespace

PcaResult pca_project(const Matrix& x, int dims) {
  if (x.rows < dims)
    throw ContractError("pca_project: need at least " + std::to_string(dims) + " rows");
  const auto mu = column_means(x);
  const Matrix cov = covariance(x, mu);
  std::vector<double> evals;
  Matrix evecs;
  symmetric_eigen(cov, evals, evecs);

  PcaResult out;
  out.eigenvalues = evals;
  out.projected = Matrix{x.rows, dims,
                         std::vector<double>(static_cast<std::size_t>(x.rows) * dims, 0.0)};
  for (int r = 0; r < x.rows; ++r) {
    for (int d = 0; d < dims; ++d) {
      // Rank deficiency: directions with ~zero variance stay zero components.
      if (evals[static_cast<std::size_t>(d)] <= 1e-12) continue;
      double s = 0.0;
      for (int c = 0; c < x.cols; ++c)
        s += (x.at(r, c) - mu[static_cast<std::size_t>(c)]) * evecs.at(c, d);
      out.projected.at(r, d) = s;
    }
  }
  return out;
}

KmeansResult kmeans(const Matrix& x, int k, std::uint64_t seed, int restarts) {
  if (x.rows < k) throw ContractError("kmeans: fewer rows than clusters");
  Rng rng = Rng(seed).child(rng_tags::kDetect);

  KmeansResult best;
  best.within_ss = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < restarts; ++restart) {
    // Seed centroids from k distinct rows.
    std::vector<int> centers;
    while (static_cast<int>(centers.size()) < k) {
      const int cand = rng.uniform_int(x.rows);
      if (std::find(centers.begin(), centers.end(), cand) == centers.end())
        centers.push_back(cand);
    }
    Matrix cent{k, x.cols, std::vector<double>(static_cast<std::size_t>(k) * x.cols, 0.0)};
    for (int c = 0; c < k; ++c)
      for (int j = 0; j < x.cols; ++j) cent.at(c, j) = x.at(centers[static_cast<std::size_t>(c)], j);

    std::vector<int> labels(static_cast<std::size_t>(x.rows), 0);
    for (int iter = 0; iter < 300; ++iter) {
      bool changed = false;
      for (int r = 0; r < x.rows; ++r) {
        int bestc = 0;
        double bestd = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
          double d = 0.0;
          for (int j = 0; j < x.cols; ++j) {
            const double diff = x.at(r, j) - cent.at(c, j);
            d += diff * diff;
          }
          if (d < bestd) {
            bestd = d;
            bestc = c;
          }
        }
        if (labels[static_cast<std::size_t>(r)] != bestc) {
          labels[static_cast<std::size_t>(r)] = bestc;
          changed = true;
        }
      }
      if (!changed && iter > 0) break;
      std::vector<int> counts(static_cast<std::size_t>(k), 0);
      Matrix sums{k, x.cols, std::vector<double>(static_cast<std::size_t>(k) * x.cols, 0.0)};
      for (int r = 0; r < x.rows; ++r) {
        counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(r)])] += 1;
        for (int j = 0; j < x.cols; ++j)
          sums.at(labels[static_cast<std::size_t>(r)], j) += x.at(r, j);
      }
      for (int c = 0; c < k; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0) continue;  // keep empty centroid
        for (int j = 0; j < x.cols; ++j)
          cent.at(c, j) = sums.at(c, j) / counts[static_cast<std::size_t>(c)];
      }
    }

    double wss = 0.0;
    for (int r = 0; r < x.rows; ++r) {
      for (int j = 0; j < x.cols; ++j) {
        const double d = x.at(r, j) - cent.at(labels[static_cast<std::size_t>(r)], j);
        wss += d * d;
      }
    }
    if (wss < best.within_ss) {
      best.within_ss = wss;
      best.labels = labels;
      best.centroids = cent;
    }
  }
  return best;
}

std::vector<double> spectral_scores(const Matrix& x) {
  if (x.rows < 2) throw ContractError("spectral_scores: need at least 2 rows");
  const auto mu = column_means(x);
  const Matrix cov = covariance(x, mu);
  std::vector<double> evals;
  Matrix evecs;
  symmetric_eigen(cov, evals, evecs);

  std::vector<double> scores(static_cast<std::size_t>(x.rows), 0.0);
  if (evals.empty() || evals[0] <= 1e-300) return scores;  // zero matrix
  for (int r = 0; r < x.rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < x.cols; ++c)
      s += (x.at(r, c) - mu[static_cast<std::size_t>(c)]) * evecs.at(c, 0);
    scores[static_cast<std::size_t>(r)] = s * s;
  }
  return scores;
}

DetectionScores detection_metrics(const std::vector<int>& flagged_ids,
                                  const std::vector<std::uint8_t>& ground_truth,
                                  const std::vector<double>& scores) {
  DetectionScores out;
  std::size_t positives = 0;
  for (auto g : ground_truth) positives += g ? 1 : 0;

  std::size_t tp = 0;
  for (int id : flagged_ids)
    if (ground_truth[static_cast<std::size_t>(id)]) ++tp;
  if (!flagged_ids.empty())
    out.precision = static_cast<double>(tp) / static_cast<double>(flagged_ids.size());
  if (positives > 0)
    out.recall = static_cast<double>(tp) / static_cast<double>(positives);
  else
    out.recall = std::nullopt;

  // Rank-statistic AUC with tie correction.
  const std::size_t negatives = ground_truth.size() - positives;
  if (positives > 0 && negatives > 0 && scores.size() == ground_truth.size()) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&scores](int a, int b) {
      return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)];
    });
    // Average ranks over ties.
    std::vector<double> rank(scores.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() &&
             scores[static_cast<std::size_t>(order[j + 1])] ==
                 scores[static_cast<std::size_t>(order[i])])
        ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t h = i; h <= j; ++h) rank[static_cast<std::size_t>(order[h])] = avg;
      i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (std::size_t r = 0; r < ground_truth.size(); ++r)
      if (ground_truth[r]) rank_sum_pos += rank[r];
    const double u = rank_sum_pos - static_cast<double>(positives) *
                                        (static_cast<double>(positives) + 1.0) / 2.0;
    out.auc = u / (static_cast<double>(positives) * static_cast<double>(negatives));
  }
  return out;
}

double silhouette_score(const Matrix& x, const std::vector<int>& labels) {
  int n0 = 0, n1 = 0;
  for (int l : labels) (l == 0 ? n0 : n1) += 1;
  if (n0 == 0 || n1 == 0 || x.rows < 3) return 0.0;
  double total = 0.0;
  for (int r = 0; r < x.rows; ++r) {
    double same = 0.0, other = 0.0;
    int same_n = 0, other_n = 0;
    for (int r2 = 0; r2 < x.rows; ++r2) {
      if (r2 == r) continue;
      double d = 0.0;
      for (int c = 0; c < x.cols; ++c) {
        const double diff = x.at(r, c) - x.at(r2, c);
        d += diff * diff;
      }
      d = std::sqrt(d);
      if (labels[static_cast<std::size_t>(r2)] == labels[static_cast<std::size_t>(r)]) {
        same += d;
        ++same_n;
      } else {
        other += d;
        ++other_n;
      }
    }
    if (same_n == 0) continue;
    const double a = same / same_n;
    const double b = other / other_n;
    total += (b - a) / std::max(a, b);
  }
  return total / x.rows;
}

namespace {

Matrix matrix_of(const ActivationSet& set, const std::vector<int>& ids) {
  Matrix x{static_cast<int>(ids.size()), set.activation_width,
           std::vector<double>(ids.size() * static_cast<std::size_t>(set.activation_width),
                               0.0)};
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto& a = set.records[static_cast<std::size_t>(ids[r])].activation;
    std::copy(a.begin(), a.end(), x.data.begin() + r * static_cast<std::size_t>(x.cols));
  }
  return x;
}

}  // namespace

DetectionReport activation_clustering_defense(const ActivationSet& set, std::uint64_t seed,
                                              double small_cluster_threshold) {
  DetectionReport report;
  report.method = "activation-clustering";
  std::vector<double> scores(set.records.size(), 0.0);

  for (int action = 0; action < kNumActions; ++action) {
    const auto ids = set.ids_with_action(action);
    if (static_cast<int>(ids.size()) < 4) continue;
    const Matrix x = matrix_of(set, ids);
    const PcaResult pca = pca_project(x, 3);
    const KmeansResult km = kmeans(pca.projected, 2, seed + static_cast<std::uint64_t>(action));

    ActionClassReport cls;
    cls.action = action;
    cls.count = static_cast<int>(ids.size());
    int n1 = 0;
    for (int l : km.labels) n1 += l;
    const int small_label = n1 * 2 <= static_cast<int>(km.labels.size()) ? 1 : 0;
    cls.cluster_small = small_label == 1 ? n1 : static_cast<int>(km.labels.size()) - n1;
    cls.cluster_large = static_cast<int>(km.labels.size()) - cls.cluster_small;
    cls.silhouette = silhouette_score(pca.projected, km.labels);

    const double share = static_cast<double>(cls.cluster_small) / cls.count;
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const bool in_small = km.labels[r] == small_label;
      scores[static_cast<std::size_t>(ids[r])] = in_small ? 1.0 : 0.0;
      if (in_small && share < small_cluster_threshold && cls.cluster_small > 0)
        cls.flagged_ids.push_back(ids[r]);
    }
    report.flagged_ids.insert(report.flagged_ids.end(), cls.flagged_ids.begin(),
                              cls.flagged_ids.end());
    report.classes.push_back(std::move(cls));
  }

  std::vector<std::uint8_t> gt;
  gt.reserve(set.records.size());
  for (const auto& r : set.records) gt.push_back(r.poisoned ? 1 : 0);
  report.scores = detection_metrics(report.flagged_ids, gt, scores);
  return report;
}

DetectionReport spectral_signature_defense(const ActivationSet& set,
                                           double expected_poison_rate, double multiplier) {
  DetectionReport report;
  report.method = "spectral-signature";
  std::vector<double> scores(set.records.size(), 0.0);

  for (int action = 0; action < kNumActions; ++action) {
    const auto ids = set.ids_with_action(action);
    if (static_cast<int>(ids.size()) < 2) continue;
    const Matrix x = matrix_of(set, ids);
    const std::vector<double> s = spectral_scores(x);

    ActionClassReport cls;
    cls.action = action;
    cls.count = static_cast<int>(ids.size());

    std::vector<int> order(ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&s](int a, int b) {
      return s[static_cast<std::size_t>(a)] > s[static_cast<std::size_t>(b)];
    });
    const int flag_count = static_cast<int>(multiplier * expected_poison_rate *
                                            static_cast<double>(ids.size()));
    for (int r = 0; r < flag_count && r < static_cast<int>(order.size()); ++r)
      cls.flagged_ids.push_back(ids[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])]);
    for (std::size_t r = 0; r < ids.size(); ++r)
      scores[static_cast<std::size_t>(ids[r])] = s[r];

    report.flagged_ids.insert(report.flagged_ids.end(), cls.flagged_ids.begin(),
                              cls.flagged_ids.end());
    report.classes.push_back(std::move(cls));
  }

  std::vector<std::uint8_t> gt;
  gt.reserve(set.records.size());
  for (const auto& r : set.records) gt.push_back(r.poisoned ? 1 : 0);
  report.scores = detection_metrics(report.flagged_ids, gt, scores);
  return report;
}

std::string detection_report_to_json(const DetectionReport& report) {
  json j;
  j["schema"] = "blastlab/detection/1";
  j["method"] = report.method;
  json classes = json::array();
  for (const auto& c : report.classes) {
    classes.push_back({{"action", c.action},
                       {"count", c.count},
                       {"cluster_small", c.cluster_small},
                       {"cluster_large", c.cluster_large},
                       {"silhouette", c.silhouette},
                       {"flagged", c.flagged_ids.size()}});
  }
  j["classes"] = classes;
  j["flagged_total"] = report.flagged_ids.size();
  j["precision"] = report.scores.precision ? json(*report.scores.precision) : json(nullptr);
  j["recall"] = report.scores.recall ? json(*report.scores.recall) : json(nullptr);
  j["auc"] = report.scores.auc ? json(*report.scores.auc) : json(nullptr);
  return j.dump(2);
}

void save_detection_report(const std::string& path, const DetectionReport& report) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write detection report: " + path);
  os << detection_report_to_json(report) << "\n";
}

}  // namespace blastlab
