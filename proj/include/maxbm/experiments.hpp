#pragma once

// Multi-seed learning-curve benchmarks and their CSV export.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "maxbm/active.hpp"
#include "maxbm/datasets.hpp"
#include "maxbm/engine.hpp"
#include "maxbm/graph.hpp"

namespace maxbm {

inline constexpr std::string_view kDecoupledStrategy = "bm+svm";

struct Dataset {
  std::string name;
  std::shared_ptr<const Network> network;
  LabelStore labels;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

inline Dataset make_dataset(std::string name, std::string_view edges, std::string_view labels, bool directed) {
  auto net = std::make_shared<const Network>(load_network(edges, directed));
  auto store = load_labels(labels, *net);
  return {std::move(name), std::move(net), std::move(store)};
}

/// The bundled Zachary karate club (undirected, two factions).
inline Dataset karate_dataset() {
  return make_dataset("karate", datasets::kKarateEdges, datasets::kKarateLabels, false);
}

inline Dataset load_dataset(std::string name, const std::filesystem::path& edges, const std::filesystem::path& labels,
                            bool directed) {
  if (!std::filesystem::exists(edges)) throw Error("dataset edge file '" + edges.string() + "' not found");
  if (!std::filesystem::exists(labels)) throw Error("dataset label file '" + labels.string() + "' not found");
  if (name.empty()) name = edges.stem().string();
  return make_dataset(std::move(name), read_file(edges), read_file(labels), directed);
}

/// Default role count: twice the number of classes.
inline std::size_t default_roles(const LabelStore& labels) { return 2 * labels.num_classes(); }

struct RunRow {
  std::string dataset;
  std::string strategy;
  std::uint64_t seed = 0;
  std::size_t n_acquired = 0;
  double accuracy = 0.0;

  friend bool operator==(const RunRow&, const RunRow&) = default;
};

struct AggregateRow {
  std::string dataset;
  std::string strategy;
  std::size_t n_acquired = 0;
  double mean = 0.0;
  double std_error = 0.0;

  friend bool operator==(const AggregateRow&, const AggregateRow&) = default;
};

struct CurveTable {
  std::vector<RunRow> runs;
  std::vector<AggregateRow> aggregates;

  friend bool operator==(const CurveTable&, const CurveTable&) = default;
};

inline bool run_order(const RunRow& a, const RunRow& b) {
  return std::tie(a.dataset, a.strategy, a.seed, a.n_acquired) < std::tie(b.dataset, b.strategy, b.seed, b.n_acquired);
}

/// Sorts the per-run rows and recomputes one mean/stderr row per
/// (dataset, strategy, n_acquired).
inline void finalize(CurveTable& table) {
  std::sort(table.runs.begin(), table.runs.end(), run_order);
  table.aggregates.clear();
  std::vector<const RunRow*> order;
  for (const auto& r : table.runs) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](const RunRow* a, const RunRow* b) {
    return std::tie(a->dataset, a->strategy, a->n_acquired) < std::tie(b->dataset, b->strategy, b->n_acquired);
  });
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < order.size() && order[j]->dataset == order[i]->dataset && order[j]->strategy == order[i]->strategy &&
           order[j]->n_acquired == order[i]->n_acquired) {
      sum += order[j]->accuracy;
      ++j;
    }
    const double n = static_cast<double>(j - i);
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t k = i; k < j; ++k) ss += (order[k]->accuracy - mean) * (order[k]->accuracy - mean);
    const double se = j - i > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    table.aggregates.push_back({order[i]->dataset, order[i]->strategy, order[i]->n_acquired, mean, se});
    i = j;
  }
}

struct BenchOptions {
  std::vector<std::string> strategies{"margin", "random"};
  std::vector<std::uint64_t> seeds;  // empty: 0 .. 19
  std::size_t budget = 10;
  std::optional<std::size_t> roles;  // empty: 2C
  FitConfig fit;
  std::size_t threads = 0;  // 0: hardware concurrency
};

inline std::vector<std::uint64_t> seed_range(std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = i;
  return s;
}

namespace detail {

/// Runs `n` tasks on at most `threads` workers; rethrows the first failure.
template <class Task>
void parallel_for(std::size_t n, std::size_t threads, Task task) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

/// One learning curve per (strategy, seed). "bm+svm" runs the decoupled
/// baseline: unsupervised role fits with margin queries.
inline CurveTable run_learning_curves(const Dataset& data, const BenchOptions& opt) {
  if (opt.strategies.empty()) throw Error("no strategies requested");
  for (const auto& s : opt.strategies)
    if (s != kDecoupledStrategy) parse_strategy(s);
  const auto seeds = opt.seeds.empty() ? seed_range(20) : opt.seeds;

  FitConfig base = opt.fit;
  base.hp.K = opt.roles.value_or(default_roles(data.labels));
  base.validate();

  struct Job {
    std::string strategy;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& s : opt.strategies)
    for (auto seed : seeds) jobs.push_back({s, seed});

  std::vector<LearningCurve> curves(jobs.size());
  detail::parallel_for(jobs.size(), opt.threads, [&](std::size_t i) {
    FitConfig cfg = base;
    cfg.seed = jobs[i].seed;
    const bool decoupled = jobs[i].strategy == kDecoupledStrategy;
    if (decoupled) cfg.supervised = false;
    const auto strategy = decoupled ? Strategy::Margin : parse_strategy(jobs[i].strategy);
    curves[i] = run_session(*data.network, data.labels, strategy, opt.budget, cfg, nullptr, jobs[i].strategy);
  });

  CurveTable table;
  for (const auto& c : curves)
    for (const auto& s : c.steps) table.runs.push_back({data.name, c.strategy, c.seed, s.n_acquired, s.accuracy});
  finalize(table);
  return table;
}

/// The decoupled BM+SVM baseline alone.
inline CurveTable run_decoupled_baseline(const Dataset& data, BenchOptions opt) {
  opt.strategies = {std::string(kDecoupledStrategy)};
  return run_learning_curves(data, opt);
}

inline constexpr std::string_view kResultsCsvHeader = "dataset,strategy,seed,n_acquired,accuracy";

inline std::string to_csv(const CurveTable& table) {
  std::ostringstream os;
  os << kResultsCsvHeader << '\n';
  for (const auto& r : table.runs)
    os << r.dataset << ',' << r.strategy << ',' << r.seed << ',' << r.n_acquired << ',' << format_double(r.accuracy)
       << '\n';
  for (const auto& a : table.aggregates) {
    os << a.dataset << ',' << a.strategy << ",mean," << a.n_acquired << ',' << format_double(a.mean) << '\n';
    os << a.dataset << ',' << a.strategy << ",stderr," << a.n_acquired << ',' << format_double(a.std_error) << '\n';
  }
  return os.str();
}

inline void export_results(const CurveTable& table, const std::filesystem::path& path) {
  if (table.runs.empty() && table.aggregates.empty()) throw Error("refusing to export an empty table");
  write_file(path, to_csv(table));
}

inline CurveTable parse_results(std::string_view text) {
  CurveTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw ParseError("results line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != kResultsCsvHeader) fail("expected header '" + std::string(kResultsCsvHeader) + "'");
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 5) fail("expected 5 fields");
    std::size_t n = 0;
    double acc = 0.0;
    try {
      std::size_t pos = 0;
      n = std::stoul(f[3], &pos);
      if (pos != f[3].size()) fail("bad n_acquired");
      acc = std::stod(f[4], &pos);
      if (pos != f[4].size()) fail("bad accuracy");
    } catch (const std::logic_error&) {
      fail("bad number");
    }
    if (f[2] == "mean") {
      table.aggregates.push_back({f[0], f[1], n, acc, 0.0});
    } else if (f[2] == "stderr") {
      auto it = std::find_if(table.aggregates.begin(), table.aggregates.end(), [&](const AggregateRow& a) {
        return a.dataset == f[0] && a.strategy == f[1] && a.n_acquired == n;
      });
      if (it == table.aggregates.end()) fail("stderr row without a preceding mean row");
      it->std_error = acc;
    } else {
      std::uint64_t seed = 0;
      try {
        std::size_t pos = 0;
        seed = std::stoull(f[2], &pos);
        if (pos != f[2].size()) fail("bad seed");
      } catch (const std::logic_error&) {
        fail("bad seed");
      }
      table.runs.push_back({f[0], f[1], seed, n, acc});
    }
  }
  if (line_no == 0) throw ParseError("results file is empty");
  return table;
}

inline CurveTable load_results(const std::filesystem::path& path) { return parse_results(read_file(path)); }

/// Mean accuracy of one (strategy, seed) run over n_acquired in [lo, hi].
inline double mean_accuracy(const CurveTable& table, std::string_view strategy, std::uint64_t seed, std::size_t lo,
                            std::size_t hi) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : table.runs)
    if (r.strategy == strategy && r.seed == seed && r.n_acquired >= lo && r.n_acquired <= hi) {
      sum += r.accuracy;
      ++n;
    }
  if (n == 0) throw Error("no rows for strategy '" + std::string(strategy) + "' in the requested range");
  return sum / static_cast<double>(n);
}

inline std::optional<AggregateRow> aggregate_at(const CurveTable& table, std::string_view strategy,
                                                std::size_t n_acquired) {
  for (const auto& a : table.aggregates)
    if (a.strategy == strategy && a.n_acquired == n_acquired) return a;
  return std::nullopt;
}

/// One-sided sign test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
inline double sign_test_p(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1.0;
  double p = 0.0;
  for (std::size_t k = wins; k <= n; ++k)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  return std::min(1.0, p);
}

// ---------------------------------------------------------------------------
// Benchmark configuration file

struct BenchConfig {
  std::string dataset = "karate";
  std::filesystem::path edges;
  std::filesystem::path labels;
  bool directed = false;
  BenchOptions options;
  std::filesystem::path out = "curves.csv";
};

/// Parses a JSON benchmark config. Relative paths resolve against `base_dir`.
inline BenchConfig bench_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  BenchConfig cfg;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  try {
    cfg.dataset = j.value("dataset", cfg.dataset);
    if (j.contains("edges")) cfg.edges = resolve(j["edges"].get<std::string>());
    if (j.contains("labels")) cfg.labels = resolve(j["labels"].get<std::string>());
    cfg.directed = j.value("directed", cfg.directed);
    if (cfg.edges.empty() != cfg.labels.empty()) throw Error("bench config needs both 'edges' and 'labels'");
    if (cfg.edges.empty() && cfg.dataset != "karate")
      throw Error("dataset '" + cfg.dataset + "' is not bundled; give 'edges' and 'labels' paths");

    auto& o = cfg.options;
    if (j.contains("k") && !j["k"].is_null()) o.roles = j["k"].get<std::size_t>();
    o.fit.hp.alpha = j.value("alpha", o.fit.hp.alpha);
    o.fit.hp.beta = j.value("beta", o.fit.hp.beta);
    o.fit.d_grid = j.value("d_grid", o.fit.d_grid);
    o.fit.warm_start = j.value("warm_start", o.fit.warm_start);
    o.fit.max_outer = j.value("max_outer", o.fit.max_outer);
    o.budget = j.value("budget", o.budget);
    if (j.contains("seeds")) {
      if (j["seeds"].is_array()) o.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
      else o.seeds = seed_range(j["seeds"].get<std::size_t>());
      if (o.seeds.empty()) throw Error("bench config has no seeds");
    }
    o.strategies = j.value("strategies", o.strategies);
    o.threads = j.value("threads", o.threads);
    if (j.contains("out")) cfg.out = resolve(j["out"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed bench config: ") + e.what());
  }
  return cfg;
}

inline Dataset load_dataset(const BenchConfig& cfg) {
  if (cfg.edges.empty()) return karate_dataset();
  return load_dataset(cfg.dataset, cfg.edges, cfg.labels, cfg.directed);
}

}  // namespace maxbm
