#pragma once

/**
 * Maximum-margin blockmodel fitting.
 *
 * Alternates (a) one CVB0 sweep over all interactions, tilted by the current
 * classifier, and (b) re-solving the max-margin problem on the expected role
 * mixtures of the labelled nodes, until the joint objective
 *
 *   J = -L(q) + 1/2 ||eta||^2 + (D / n_lab) sum_v xi_v
 *
 * stops improving by more than `rel_tol` (relative). The tilt added to the
 * log-weight of role k for a labelled node v with class y_v is
 *
 *   (1 / n_v) sum_y mu_v^y (eta_{y_v,k} - eta_{y,k}),
 *
 * applied to the sender marginal when v sends and the receiver marginal when
 * v receives. Non-support vectors have mu_v^y = 0 for y != y_v and add no
 * tilt.
 */

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "maxbm/blockmodel.hpp"
#include "maxbm/graph.hpp"
#include "maxbm/max_margin.hpp"

namespace maxbm {

struct FitConfig {
  HyperParams hp;
  std::vector<double> d_grid = default_regularization_grid();
  std::size_t cv_folds = 0;  // 0: min(5, smallest class count)
  std::optional<double> fixed_D;
  double rel_tol = 1e-6;
  double lambda_tol = 1e-4;  // largest per-sweep change of any lambda_i
  std::size_t max_outer = 200;
  std::uint64_t seed = 0;
  bool supervised = true;
  bool warm_start = false;  // active-learning refits start from the previous model
  SolverOptions solver;

  void validate() const {
    hp.validate();
    if (!(rel_tol > 0.0)) throw Error("rel_tol must be positive");
    if (!(lambda_tol >= 0.0)) throw Error("lambda_tol must be non-negative");
    if (max_outer < 1) throw Error("max_outer must be at least 1");
    if (d_grid.empty() && !fixed_D) throw Error("regularization grid is empty");
    if (fixed_D && !(*fixed_D >= 0.0)) throw Error("fixed D must be non-negative");
  }
};

struct FittedModel {
  HyperParams hp;
  std::size_t num_classes = 0;
  EdgeRolePosterior posterior;
  ExpectedCounts counts;
  ClassifierState classifier;
  Matrix mixtures;  // N x K
  std::vector<double> objective_trace;
  std::size_t outer_iterations = 0;
  bool converged = false;
};

struct ObjectiveTerms {
  double neg_bound = 0.0;
  double regularizer = 0.0;
  double slack_penalty = 0.0;
  double total() const { return neg_bound + regularizer + slack_penalty; }
};

struct TrainingSet {
  Matrix features;
  std::vector<ClassIndex> labels;
  std::vector<NodeIndex> nodes;
};

/// Mixture rows of the acquired nodes in ascending node order.
inline TrainingSet training_set(const Matrix& mixtures, const LabelStore& labels) {
  TrainingSet ts;
  ts.features = Matrix(labels.acquired().size(), mixtures.cols());
  std::size_t j = 0;
  for (const auto& [v, c] : labels.acquired()) {
    const auto src = mixtures.row(v);
    std::copy(src.begin(), src.end(), ts.features.row(j).begin());
    ts.labels.push_back(c);
    ts.nodes.push_back(v);
    ++j;
  }
  return ts;
}

/// Per-node log-tilts for the role update; zero for nodes without dual rows.
inline NodeTilts supervision_tilts(const Network& net, const LabelStore& labels, const ClassifierState& cls,
                                   std::size_t K) {
  NodeTilts tilts(net.num_nodes(), K);
  if (cls.mu.rows() == 0) return tilts;
  for (std::size_t j = 0; j < cls.nodes.size(); ++j) {
    const NodeIndex v = cls.nodes[j];
    const auto yv = labels.acquired().find(v);
    if (yv == labels.acquired().end() || net.degree(v) == 0) continue;
    const double inv_deg = 1.0 / static_cast<double>(net.degree(v));
    for (std::size_t k = 0; k < K; ++k) {
      double t = 0.0;
      for (std::size_t y = 0; y < cls.num_classes(); ++y) t += cls.mu(j, y) * (cls.eta(k, yv->second) - cls.eta(k, y));
      tilts(v, k) = t * inv_deg;
    }
  }
  return tilts;
}

inline ObjectiveTerms objective_terms(const FittedModel& model, const Network& net, const LabelStore& labels) {
  ObjectiveTerms t;
  t.neg_bound = -collapsed_bound(model.posterior, model.counts, net, model.hp);
  t.regularizer = 0.5 * detail::frob2(model.classifier.eta);
  if (!labels.acquired().empty() && model.classifier.eta.size() > 0) {
    const auto ts = training_set(model.mixtures, labels);
    const auto xi = compute_slacks(model.classifier.eta, ts.features, ts.labels);
    double s = 0.0;
    for (double x : xi) s += x;
    t.slack_penalty = model.classifier.D / static_cast<double>(ts.labels.size()) * s;
  }
  return t;
}

/// Joint objective -L + 1/2 ||eta||^2 + (D/n_lab) sum xi at the model's state.
inline double joint_objective(const FittedModel& model, const Network& net, const LabelStore& labels) {
  return objective_terms(model, net, labels).total();
}

namespace detail {

inline Matrix random_eta(std::size_t K, std::size_t C, std::uint64_t seed) {
  Matrix eta(K, C);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(-0.01, 0.01);
  for (auto& x : eta.data()) x = u(rng);
  return eta;
}

inline ClassifierState empty_classifier(Matrix eta) {
  ClassifierState cls;
  cls.eta = std::move(eta);
  cls.mu = Matrix(0, cls.eta.cols());
  cls.dual = Matrix(0, cls.eta.cols());
  return cls;
}

inline ClassifierState train_classifier(const FittedModel& model, const LabelStore& labels, const FitConfig& cfg,
                                        std::uint64_t cv_seed) {
  auto ts = training_set(model.mixtures, labels);
  const double D = cfg.fixed_D ? *cfg.fixed_D
                               : select_regularization(ts.features, ts.labels, model.num_classes, cfg.d_grid,
                                                       cfg.cv_folds, cv_seed, cfg.solver);
  auto cls = solve_multiclass(ts.features, ts.labels, model.num_classes, D, cfg.solver);
  cls.nodes = std::move(ts.nodes);
  return cls;
}

inline bool stalled(double prev, double cur, double rel_tol) {
  return prev - cur < rel_tol * std::abs(prev);
}

}  // namespace detail

/// Fits the model. With `warm` set, its posterior and classifier initialize
/// the run instead of a random draw (same network and K required).
inline FittedModel fit(const Network& net, const LabelStore& labels, const FitConfig& cfg,
                       const FittedModel* warm = nullptr) {
  cfg.validate();
  const std::size_t K = cfg.hp.K;
  const std::size_t C = labels.num_classes();

  FittedModel model;
  model.hp = cfg.hp;
  model.num_classes = C;
  if (warm) {
    if (warm->posterior.num_interactions() != net.num_interactions() || warm->posterior.num_roles() != K ||
        warm->num_classes != C) {
      throw Error("warm-start model does not match network, K or class count");
    }
    model.posterior = warm->posterior;
    model.classifier = warm->classifier;
  } else {
    model.posterior = init_posterior(net, cfg.hp, cfg.seed);
    model.classifier = detail::empty_classifier(detail::random_eta(K, C, cfg.seed));
  }
  model.counts = expected_counts(model.posterior, net);
  model.mixtures = node_role_mixtures(model.posterior, net);

  const bool has_labels = !labels.acquired().empty();
  if (!has_labels) model.classifier = detail::empty_classifier(Matrix(K, C));
  const bool tilt = cfg.supervised && has_labels;

  double prev = joint_objective(model, net, labels);
  model.objective_trace.push_back(prev);

  for (std::size_t t = 0; t < cfg.max_outer; ++t) {
    double change = 0.0;
    if (tilt) {
      const auto tilts = supervision_tilts(net, labels, model.classifier, K);
      change = vb_sweep(model.posterior, model.counts, net, cfg.hp, &tilts);
    } else {
      change = vb_sweep(model.posterior, model.counts, net, cfg.hp);
    }
    model.mixtures = node_role_mixtures(model.posterior, net);
    if (tilt) model.classifier = detail::train_classifier(model, labels, cfg, cfg.seed + 7919 * (t + 1));

    const double cur = joint_objective(model, net, labels);
    model.objective_trace.push_back(cur);
    model.outer_iterations = t + 1;
    const bool done = detail::stalled(prev, cur, cfg.rel_tol) && change <= cfg.lambda_tol;
    prev = cur;
    if (done) {
      model.converged = true;
      break;
    }
  }

  if (has_labels && !cfg.supervised) {
    model.classifier = detail::train_classifier(model, labels, cfg, cfg.seed + 7919);
    model.objective_trace.back() = joint_objective(model, net, labels);
  }
  return model;
}

struct Prediction {
  ClassIndex label = 0;
  double margin = 0.0;
};

/// Classifies every node outside the acquired set; the margin is that of the
/// predicted class over the runner-up.
inline std::map<NodeIndex, Prediction> predict_unlabeled(const FittedModel& model, const LabelStore& labels) {
  std::map<NodeIndex, Prediction> out;
  for (std::size_t v = 0; v < model.mixtures.rows(); ++v) {
    if (labels.is_acquired(v)) continue;
    const auto x = model.mixtures.row(v);
    const auto [y, scores] = classify(model.classifier.eta, x);
    out.emplace(v, Prediction{y, multiclass_margin(model.classifier.eta, x, y)});
  }
  return out;
}

/// Fraction of unacquired nodes with ground truth whose prediction is right.
inline double accuracy_on_unlabeled(const FittedModel& model, const LabelStore& labels) {
  std::size_t correct = 0, total = 0;
  for (const auto& [v, p] : predict_unlabeled(model, labels)) {
    const auto truth = labels.true_label(v);
    if (!truth) continue;
    ++total;
    correct += p.label == *truth ? 1 : 0;
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Model snapshot

inline nlohmann::json to_json(const FitConfig& cfg) {
  nlohmann::json j{{"hyper", to_json(cfg.hp)},     {"d_grid", cfg.d_grid},       {"cv_folds", cfg.cv_folds},
                   {"rel_tol", cfg.rel_tol},       {"lambda_tol", cfg.lambda_tol}, {"max_outer", cfg.max_outer}, {"seed", cfg.seed},
                   {"supervised", cfg.supervised}, {"warm_start", cfg.warm_start}, {"kkt_tol", cfg.solver.kkt_tol},
                   {"max_solver_iterations", cfg.solver.max_iterations}};
  j["fixed_d"] = cfg.fixed_D ? nlohmann::json(*cfg.fixed_D) : nlohmann::json(nullptr);
  return j;
}

inline FitConfig fit_config_from_json(const nlohmann::json& j) {
  FitConfig cfg;
  cfg.hp = hyper_params_from_json(j.at("hyper"));
  cfg.d_grid = j.value("d_grid", cfg.d_grid);
  cfg.cv_folds = j.value("cv_folds", cfg.cv_folds);
  cfg.rel_tol = j.value("rel_tol", cfg.rel_tol);
  cfg.lambda_tol = j.value("lambda_tol", cfg.lambda_tol);
  cfg.max_outer = j.value("max_outer", cfg.max_outer);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.supervised = j.value("supervised", cfg.supervised);
  cfg.warm_start = j.value("warm_start", cfg.warm_start);
  cfg.solver.kkt_tol = j.value("kkt_tol", cfg.solver.kkt_tol);
  cfg.solver.max_iterations = j.value("max_solver_iterations", cfg.solver.max_iterations);
  if (j.contains("fixed_d") && !j["fixed_d"].is_null()) cfg.fixed_D = j["fixed_d"].get<double>();
  return cfg;
}

/// Everything needed to restore a fitted model without the original files.
struct ModelSnapshot {
  Network network;
  LabelStore labels;
  FitConfig config;
  FittedModel model;
};

inline nlohmann::json snapshot_to_json(const Network& net, const LabelStore& labels, const FitConfig& cfg,
                                       const FittedModel& model) {
  nlohmann::json j;
  j["format"] = "maxbm-model";
  j["version"] = 1;
  j["node_ids"] = net.node_ids();
  std::vector<std::size_t> senders, receivers;
  for (const auto& e : net.interactions()) {
    senders.push_back(e.sender);
    receivers.push_back(e.receiver);
  }
  j["senders"] = senders;
  j["receivers"] = receivers;
  j["directed_source"] = net.directed_source();
  j["class_names"] = labels.class_names();
  nlohmann::json acquired = nlohmann::json::object();
  for (const auto& [v, c] : labels.acquired()) acquired[net.node_id(v)] = labels.class_names()[c];
  j["acquired"] = acquired;
  if (labels.has_truth()) {
    nlohmann::json truth = nlohmann::json::object();
    for (const auto& [v, c] : labels.truth()) truth[net.node_id(v)] = labels.class_names()[c];
    j["truth"] = truth;
  }
  j["config"] = to_json(cfg);
  j["posterior"] = to_json(model.posterior);
  j["counts"] = to_json(model.counts);
  j["eta"] = to_json(model.classifier.eta);
  j["mu"] = to_json(model.classifier.mu);
  j["xi"] = model.classifier.xi;
  j["classifier_nodes"] = model.classifier.nodes;
  j["regularization"] = model.classifier.D;
  j["classifier_objective"] = model.classifier.objective;
  j["classifier_converged"] = model.classifier.converged;
  j["objective_trace"] = model.objective_trace;
  j["outer_iterations"] = model.outer_iterations;
  j["converged"] = model.converged;
  return j;
}

inline ModelSnapshot snapshot_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "maxbm-model") throw ParseError("not a maxbm model snapshot");
  try {
    auto ids = j.at("node_ids").get<std::vector<std::string>>();
    const auto senders = j.at("senders").get<std::vector<std::size_t>>();
    const auto receivers = j.at("receivers").get<std::vector<std::size_t>>();
    if (senders.size() != receivers.size()) throw ParseError("sender/receiver length mismatch");
    std::vector<Interaction> inter;
    for (std::size_t i = 0; i < senders.size(); ++i) inter.push_back({senders[i], receivers[i]});
    Network net(std::move(ids), std::move(inter), j.value("directed_source", true));

    auto classes = j.at("class_names").get<std::vector<std::string>>();
    auto lookup = [&](const std::string& node, const std::string& label) {
      auto v = net.find(node);
      if (!v) throw ParseError("snapshot references unknown node '" + node + "'");
      ClassIndex c = classes.size();
      for (std::size_t k = 0; k < classes.size(); ++k)
        if (classes[k] == label) c = k;
      if (c == classes.size()) throw ParseError("snapshot references unknown class '" + label + "'");
      return std::pair{*v, c};
    };
    LabelStore labels(classes);
    if (j.contains("truth")) {
      std::map<NodeIndex, ClassIndex> truth;
      for (const auto& [node, label] : j["truth"].items()) truth.insert(lookup(node, label.get<std::string>()));
      labels = LabelStore(classes, std::move(truth));
    }
    for (const auto& [node, label] : j.at("acquired").items()) {
      auto [v, c] = lookup(node, label.get<std::string>());
      labels.acquire(v, c);
    }

    ModelSnapshot snap{std::move(net), std::move(labels), fit_config_from_json(j.at("config")), {}};
    auto& m = snap.model;
    m.hp = snap.config.hp;
    m.num_classes = classes.size();
    m.posterior = posterior_from_json(j.at("posterior"));
    detail::check_shape(m.posterior, snap.network);
    if (m.posterior.num_roles() != m.hp.K) throw ParseError("posterior role count does not match K");
    m.counts = expected_counts(m.posterior, snap.network);
    if (j.contains("counts")) {
      auto stored = counts_from_json(j["counts"]);
      if (stored.d.rows() != m.hp.K || stored.d.cols() != m.hp.K || stored.n_vk.rows() != snap.network.num_nodes() ||
          stored.n_vk.cols() != m.hp.K || stored.n_k.size() != m.hp.K || count_drift(stored, m.counts) > 1e-6)
        throw ParseError("stored counts do not match the posterior");
      m.counts = std::move(stored);
    }
    m.mixtures = node_role_mixtures(m.posterior, snap.network);
    m.classifier.eta = matrix_from_json(j.at("eta"));
    m.classifier.mu = matrix_from_json(j.at("mu"));
    m.classifier.dual = Matrix(m.classifier.mu.rows(), m.classifier.mu.cols());
    m.classifier.xi = j.value("xi", std::vector<double>{});
    m.classifier.nodes = j.at("classifier_nodes").get<std::vector<NodeIndex>>();
    m.classifier.D = j.value("regularization", 1.0);
    m.classifier.objective = j.value("classifier_objective", 0.0);
    m.classifier.converged = j.value("classifier_converged", true);
    const double cap = m.classifier.nodes.empty() ? 0.0 : m.classifier.D / static_cast<double>(m.classifier.nodes.size());
    for (std::size_t r = 0; r < m.classifier.mu.rows(); ++r)
      for (std::size_t c = 0; c < m.classifier.mu.cols(); ++c)
        m.classifier.dual(r, c) = cap > 0.0 ? m.classifier.mu(r, c) / cap : 0.0;
    m.objective_trace = j.value("objective_trace", std::vector<double>{});
    m.outer_iterations = j.value("outer_iterations", std::size_t{0});
    m.converged = j.value("converged", false);
    return snap;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed model snapshot: ") + e.what());
  }
}

}  // namespace maxbm
