#pragma once

// Active label acquisition: seed labels, query strategies and the
// acquire/refit loop shared by the benchmark harness and the HTTP service.

#include <cstdint>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "maxbm/engine.hpp"
#include "maxbm/graph.hpp"

namespace maxbm {

enum class Strategy { Margin, Random, Degree };

inline std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Margin: return "margin";
    case Strategy::Random: return "random";
    case Strategy::Degree: return "degree";
  }
  return "margin";
}

inline Strategy parse_strategy(std::string_view name) {
  if (name == "margin") return Strategy::Margin;
  if (name == "random") return Strategy::Random;
  if (name == "degree") return Strategy::Degree;
  throw Error("unknown query strategy '" + std::string(name) + "'");
}

/// splitmix64 step; derives independent stream seeds from (seed, step).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t step) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (step + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Returns a copy of `labels` whose acquired set holds exactly one uniformly
/// drawn node per class.
inline LabelStore seed_labels(const LabelStore& labels, std::uint64_t seed) {
  LabelStore out = labels;
  out.clear_acquired();
  std::mt19937_64 rng(mix_seed(seed, 0xa11ce));
  for (ClassIndex c = 0; c < labels.num_classes(); ++c) {
    std::vector<NodeIndex> members;
    for (const auto& [v, y] : labels.truth())
      if (y == c) members.push_back(v);
    if (members.empty()) throw Error("class '" + labels.class_names()[c] + "' has no labelled nodes");
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    out.acquire(members[pick(rng)], c);
  }
  return out;
}

/// Picks the next node to label. Margin: smallest multiclass margin of the
/// predicted class. Random: uniform over unlabelled nodes. Degree: largest
/// n_v. Ties go to the lowest node index.
inline NodeIndex select_query(const FittedModel& model, const LabelStore& labels, const Network& net,
                              Strategy strategy, std::uint64_t seed) {
  std::vector<NodeIndex> open;
  for (NodeIndex v = 0; v < net.num_nodes(); ++v)
    if (!labels.is_acquired(v)) open.push_back(v);
  if (open.empty()) throw Error("no unlabelled nodes left to query");

  switch (strategy) {
    case Strategy::Random: {
      std::mt19937_64 rng(seed);
      std::uniform_int_distribution<std::size_t> pick(0, open.size() - 1);
      return open[pick(rng)];
    }
    case Strategy::Degree: {
      NodeIndex best = open.front();
      for (auto v : open)
        if (net.degree(v) > net.degree(best)) best = v;
      return best;
    }
    case Strategy::Margin: {
      NodeIndex best = open.front();
      double best_margin = std::numeric_limits<double>::infinity();
      for (auto v : open) {
        const auto x = model.mixtures.row(v);
        const auto y = classify(model.classifier.eta, x).first;
        const double m = multiclass_margin(model.classifier.eta, x, y);
        if (m < best_margin) {
          best_margin = m;
          best = v;
        }
      }
      return best;
    }
  }
  return open.front();
}

struct CurveStep {
  std::size_t n_acquired = 0;            // labels acquired by queries so far
  std::optional<NodeIndex> queried_node;  // empty on the final record
  double accuracy = 0.0;                 // over nodes not yet acquired
  std::optional<double> margin;          // margin of the queried node
};

struct LearningCurve {
  std::string strategy;
  std::uint64_t seed = 0;
  std::vector<NodeIndex> seed_nodes;
  std::vector<CurveStep> steps;
};

inline std::string format_double(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

inline constexpr std::string_view kCurveCsvHeader = "strategy,seed,n_acquired,queried_node,accuracy,margin";

/// CSV rows `strategy,seed,n_acquired,queried_node,accuracy,margin`.
inline std::string to_csv(const LearningCurve& curve, const Network& net, bool header = true) {
  std::ostringstream os;
  if (header) os << kCurveCsvHeader << '\n';
  for (const auto& s : curve.steps) {
    os << curve.strategy << ',' << curve.seed << ',' << s.n_acquired << ','
       << (s.queried_node ? net.node_id(*s.queried_node) : "") << ',' << format_double(s.accuracy) << ','
       << (s.margin ? format_double(*s.margin) : "") << '\n';
  }
  return os.str();
}

/// Answers label queries.
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual ClassIndex label(NodeIndex v) = 0;
};

/// Reads answers from the ground truth of a label store.
class SimulatedOracle final : public Oracle {
 public:
  explicit SimulatedOracle(const LabelStore& labels) : labels_(labels) {}
  ClassIndex label(NodeIndex v) override {
    const auto c = labels_.true_label(v);
    if (!c) throw Error("oracle has no label for node " + std::to_string(v));
    return *c;
  }

 private:
  const LabelStore& labels_;
};

/// One active-learning session: owns its labels and model, emits queries and
/// refits after each answer.
class ActiveSession {
 public:
  ActiveSession(std::shared_ptr<const Network> net, LabelStore labels, FitConfig cfg, Strategy strategy)
      : net_(std::move(net)), labels_(std::move(labels)), cfg_(std::move(cfg)), strategy_(strategy) {
    refit(/*warm=*/false);
  }

  /// Resumes a persisted session without refitting.
  ActiveSession(std::shared_ptr<const Network> net, LabelStore labels, FitConfig cfg, Strategy strategy,
                FittedModel model, std::size_t num_queried, std::optional<NodeIndex> pending)
      : net_(std::move(net)),
        labels_(std::move(labels)),
        cfg_(std::move(cfg)),
        strategy_(strategy),
        model_(std::move(model)),
        pending_(pending),
        num_queried_(num_queried) {
    if (model_.mixtures.rows() != net_->num_nodes()) throw Error("restored model does not match the network");
    if (pending_ && (*pending_ >= net_->num_nodes() || labels_.is_acquired(*pending_)))
      throw Error("restored pending query is invalid");
  }

  const Network& network() const { return *net_; }
  std::shared_ptr<const Network> network_ptr() const { return net_; }
  const LabelStore& labels() const { return labels_; }
  const FitConfig& config() const { return cfg_; }
  const FittedModel& model() const { return model_; }
  Strategy strategy() const { return strategy_; }
  std::size_t num_queried() const { return num_queried_; }
  const std::optional<NodeIndex>& pending() const { return pending_; }

  bool exhausted() const { return labels_.acquired().size() >= net_->num_nodes(); }

  /// Adds a label (the pending query or any other unlabelled node), refits
  /// and selects the next query.
  void submit(NodeIndex v, ClassIndex c) {
    record(v, c);
    refresh();
  }

  /// First half of submit: stores the label and clears the pending query.
  void record(NodeIndex v, ClassIndex c) {
    if (v >= net_->num_nodes()) throw Error("node index out of range");
    labels_.acquire(v, c);
    ++num_queried_;
    pending_.reset();
  }

  /// Second half of submit: refits and selects the next query.
  void refresh() { refit(/*warm=*/true); }

  double margin_of(NodeIndex v) const {
    const auto x = model_.mixtures.row(v);
    return multiclass_margin(model_.classifier.eta, x, classify(model_.classifier.eta, x).first);
  }

 private:
  void refit(bool warm) {
    model_ = fit(*net_, labels_, cfg_, warm && cfg_.warm_start ? &model_ : nullptr);
    pending_.reset();
    if (!exhausted()) pending_ = select_query(model_, labels_, *net_, strategy_, mix_seed(cfg_.seed, num_queried_));
  }

  std::shared_ptr<const Network> net_;
  LabelStore labels_;
  FitConfig cfg_;
  Strategy strategy_;
  FittedModel model_;
  std::optional<NodeIndex> pending_;
  std::size_t num_queried_ = 0;
};

/// Seeds one label per class, then alternates: record accuracy, query,
/// acquire from the oracle, refit. Produces budget + 1 records.
inline LearningCurve run_session(const Network& net, const LabelStore& labels, Strategy strategy, std::size_t budget,
                                 const FitConfig& cfg, Oracle* oracle = nullptr, std::string curve_name = {}) {
  if (!labels.has_truth()) throw Error("run_session needs ground-truth labels");
  if (budget + labels.num_classes() > net.num_nodes()) {
    throw Error("budget " + std::to_string(budget) + " exceeds the " +
                std::to_string(net.num_nodes() - labels.num_classes()) + " nodes available after seeding");
  }
  SimulatedOracle simulated(labels);
  if (!oracle) oracle = &simulated;

  LearningCurve curve;
  curve.strategy = curve_name.empty() ? std::string(strategy_name(strategy)) : std::move(curve_name);
  curve.seed = cfg.seed;
  auto seeded = seed_labels(labels, cfg.seed);
  for (const auto& [v, c] : seeded.acquired()) curve.seed_nodes.push_back(v);

  ActiveSession session(std::shared_ptr<const Network>(&net, [](const Network*) {}), std::move(seeded), cfg, strategy);
  for (std::size_t step = 0; step <= budget; ++step) {
    CurveStep rec;
    rec.n_acquired = step;
    rec.accuracy = accuracy_on_unlabeled(session.model(), session.labels());
    if (step < budget) {
      const NodeIndex q = *session.pending();
      rec.queried_node = q;
      rec.margin = session.margin_of(q);
      curve.steps.push_back(rec);
      session.submit(q, oracle->label(q));
    } else {
      curve.steps.push_back(rec);
    }
  }
  return curve;
}

}  // namespace maxbm
