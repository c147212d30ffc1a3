// maxbm command-line tool: fit, active, bench, serve, roles.

#include <csignal>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"
#include "maxbm/active.hpp"
#include "maxbm/engine.hpp"
#include "maxbm/experiments.hpp"
#include "maxbm/service.hpp"

namespace fs = std::filesystem;
using namespace maxbm;

namespace {

struct DataFlags {
  std::string dataset;
  std::string edges;
  std::string labels;
  bool directed = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--dataset", dataset, "Bundled dataset name (karate)");
    cmd->add_option("--edges", edges, "Edge list: one 'sender receiver' pair per line")->check(CLI::ExistingFile);
    cmd->add_option("--labels", labels, "Label CSV with header node,label")->check(CLI::ExistingFile);
    cmd->add_flag("--directed", directed, "Treat the edge list as directed");
  }

  Dataset load(bool labels_required) const {
    if (!dataset.empty()) {
      if (dataset != "karate") throw Error("unknown bundled dataset '" + dataset + "'");
      if (!edges.empty()) throw Error("--dataset and --edges are mutually exclusive");
      return karate_dataset();
    }
    if (edges.empty()) throw Error("either --dataset or --edges is required");
    if (labels.empty()) {
      if (labels_required) throw Error("--labels is required");
      auto net = std::make_shared<const Network>(load_network(read_file(edges), directed));
      return {fs::path(edges).stem().string(), net, LabelStore({"class_0", "class_1"})};
    }
    return load_dataset(fs::path(edges).stem().string(), edges, labels, directed);
  }
};

struct ModelFlags {
  std::optional<std::size_t> k;
  double alpha = HyperParams{}.alpha;
  double beta = HyperParams{}.beta;
  std::vector<double> d_grid;
  bool warm_start = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--k", k, "Number of roles (default: twice the class count)")->check(CLI::PositiveNumber);
    cmd->add_option("--alpha", alpha, "Role-pair Dirichlet concentration")->check(CLI::PositiveNumber);
    cmd->add_option("--beta", beta, "Node Dirichlet concentration")->check(CLI::PositiveNumber);
    cmd->add_option("--d-grid", d_grid, "Candidate margin costs for cross-validation")->delimiter(',');
    cmd->add_flag("--warm-start", warm_start, "Initialise each refit from the previous model");
  }

  FitConfig config(const LabelStore& labels) const {
    FitConfig cfg;
    cfg.hp.K = k.value_or(default_roles(labels));
    cfg.hp.alpha = alpha;
    cfg.hp.beta = beta;
    if (!d_grid.empty()) cfg.d_grid = d_grid;
    cfg.warm_start = warm_start;
    return cfg;
  }
};

int run_fit(const DataFlags& data, const ModelFlags& model, std::uint64_t seed, const std::string& out) {
  auto d = data.load(false);
  LabelStore labels = d.labels;
  if (labels.has_truth())
    for (const auto& [v, c] : labels.truth()) labels.acquire(v, c);
  auto cfg = model.config(labels);
  cfg.seed = seed;
  const auto m = fit(*d.network, labels, cfg);
  write_file(out, snapshot_to_json(*d.network, labels, cfg, m).dump(1) + "\n");

  std::cout << "nodes " << d.network->num_nodes() << ", interactions " << d.network->num_interactions() << ", K "
            << cfg.hp.K << "\n";
  std::cout << "outer iterations " << m.outer_iterations << (m.converged ? " (converged)" : " (cap reached)") << "\n";
  std::cout << "objective " << format_double(m.objective_trace.back()) << "\n";
  if (!labels.acquired().empty()) {
    std::size_t correct = 0;
    for (const auto& [v, c] : labels.acquired()) correct += classify(m.classifier.eta, m.mixtures.row(v)).first == c;
    std::cout << "training accuracy " << static_cast<double>(correct) / labels.acquired().size() << " (D "
              << m.classifier.D << ")\n";
    if (!m.classifier.converged)
      std::cerr << "warning: classifier solver hit its iteration cap before the duality gap closed\n";
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

int run_active(const DataFlags& data, const ModelFlags& model, const std::string& strategy, std::size_t budget,
               std::size_t seeds, std::uint64_t first_seed, std::size_t threads, const std::string& out) {
  auto d = data.load(true);
  auto base = model.config(d.labels);
  const bool decoupled = strategy == kDecoupledStrategy;
  const auto strat = decoupled ? Strategy::Margin : parse_strategy(strategy);
  if (decoupled) base.supervised = false;

  std::vector<LearningCurve> curves(seeds);
  detail::parallel_for(seeds, threads, [&](std::size_t i) {
    FitConfig cfg = base;
    cfg.seed = first_seed + i;
    curves[i] = run_session(*d.network, d.labels, strat, budget, cfg, nullptr, strategy);
  });

  std::ostringstream os;
  os << kCurveCsvHeader << '\n';
  for (const auto& c : curves) os << to_csv(c, *d.network, false);
  write_file(out, os.str());

  double final_mean = 0.0;
  for (const auto& c : curves) final_mean += c.steps.back().accuracy / static_cast<double>(curves.size());
  std::cout << strategy << ": mean accuracy after " << budget << " acquisitions " << final_mean << " over " << seeds
            << " seeds\nwrote " << out << "\n";
  return 0;
}

int run_bench(const std::string& config_path, const std::string& out_override) {
  const auto cfg = bench_config_from_json(nlohmann::json::parse(read_file(config_path)),
                                          fs::path(config_path).parent_path());
  const auto data = load_dataset(cfg);
  const auto table = run_learning_curves(data, cfg.options);
  const fs::path out = out_override.empty() ? cfg.out : fs::path(out_override);
  export_results(table, out);
  for (const auto& a : table.aggregates)
    if (a.n_acquired == cfg.options.budget)
      std::cout << a.strategy << ": mean accuracy after " << a.n_acquired << " acquisitions " << a.mean << " (stderr "
                << a.std_error << ")\n";
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

httplib::Server* g_server = nullptr;

int run_serve(const std::string& host, int port, const ServiceOptions& opt) {
  SessionService service(opt);
  httplib::Server svr;
  service.install(svr);
  g_server = &svr;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  if (!svr.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  std::cerr << "maxbm: serving on http://" << host << ":" << port << " (" << service.num_sessions()
            << " sessions recovered)\n";
  svr.listen_after_bind();
  g_server = nullptr;
  return 0;
}

int run_roles(const std::string& model_path, const std::string& matrix_out, const std::string& mixtures_out) {
  const auto snap = snapshot_from_json(nlohmann::json::parse(read_file(model_path)));
  const auto& m = snap.model;
  const auto roles = role_interaction_matrix(m.counts, m.hp);

  std::ostringstream matrix;
  matrix << "role";
  for (std::size_t k = 0; k < roles.cols(); ++k) matrix << ",role_" << k;
  matrix << '\n';
  for (std::size_t r = 0; r < roles.rows(); ++r) {
    matrix << "role_" << r;
    for (double x : roles.row(r)) matrix << ',' << format_double(x);
    matrix << '\n';
  }

  std::ostringstream mix;
  mix << "node";
  for (std::size_t k = 0; k < m.mixtures.cols(); ++k) mix << ",role_" << k;
  mix << '\n';
  for (std::size_t v = 0; v < m.mixtures.rows(); ++v) {
    mix << snap.network.node_id(v);
    for (double x : m.mixtures.row(v)) mix << ',' << format_double(x);
    mix << '\n';
  }

  if (matrix_out.empty() && mixtures_out.empty()) {
    std::cout << matrix.str() << '\n' << mix.str();
    return 0;
  }
  if (!matrix_out.empty()) write_file(matrix_out, matrix.str());
  if (!mixtures_out.empty()) write_file(mixtures_out, mix.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maximum-margin blockmodel: role discovery and active node classification"};
  app.require_subcommand(1);

  DataFlags fit_data, active_data;
  ModelFlags fit_model, active_model;

  auto* fit_cmd = app.add_subcommand("fit", "Fit roles and the classifier on all given labels");
  fit_data.add(fit_cmd);
  fit_model.add(fit_cmd);
  std::uint64_t fit_seed = 0;
  std::string fit_out;
  fit_cmd->add_option("--seed", fit_seed, "Random seed");
  fit_cmd->add_option("--out", fit_out, "Model snapshot JSON")->required();

  auto* active_cmd = app.add_subcommand("active", "Simulate active learning against known labels");
  active_data.add(active_cmd);
  active_model.add(active_cmd);
  std::string strategy = "margin", active_out;
  std::size_t budget = 10, seeds = 20, threads = 0;
  std::uint64_t first_seed = 0;
  active_cmd->add_option("--strategy", strategy, "margin, random, degree or bm+svm")
      ->check(CLI::IsMember({"margin", "random", "degree", "bm+svm"}));
  active_cmd->add_option("--budget", budget, "Queries per run");
  active_cmd->add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);
  active_cmd->add_option("--first-seed", first_seed, "First seed of the range");
  active_cmd->add_option("--threads", threads, "Worker threads (0: all cores)");
  active_cmd->add_option("--out", active_out, "Learning-curve CSV")->required();

  auto* bench_cmd = app.add_subcommand("bench", "Run a benchmark described by a JSON config file");
  std::string bench_config, bench_out;
  bench_cmd->add_option("config", bench_config, "Benchmark config JSON")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--out", bench_out, "Results CSV (overrides the config)");

  auto* serve_cmd = app.add_subcommand("serve", "Serve interactive labelling sessions over HTTP");
  std::string host = "127.0.0.1", data_dir, static_dir;
  int port = 8080;
  ServiceOptions serve_opt;
  serve_cmd->add_option("--host", host, "Listen address");
  serve_cmd->add_option("--port", port, "Listen port")->check(CLI::Range(1, 65535));
  serve_cmd->add_option("--data-dir", data_dir, "Directory for session snapshots");
  serve_cmd->add_option("--static-dir", static_dir, "Directory served at /")->check(CLI::ExistingDirectory);
  serve_cmd->add_option("--background-nodes", serve_opt.background_refit_nodes,
                        "Refit in the background above this many nodes");

  auto* roles_cmd = app.add_subcommand("roles", "Export the role matrix and node mixtures of a model");
  std::string model_path, matrix_out, mixtures_out;
  roles_cmd->add_option("model", model_path, "Model snapshot JSON")->required()->check(CLI::ExistingFile);
  roles_cmd->add_option("--matrix-out", matrix_out, "Role-interaction matrix CSV (default: stdout)");
  roles_cmd->add_option("--mixtures-out", mixtures_out, "Node mixtures CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &app;
    for (auto* sub : app.get_subcommands()) failed = sub;
    std::cerr << failed->help();
    return 2;
  }

  try {
    if (*fit_cmd) return run_fit(fit_data, fit_model, fit_seed, fit_out);
    if (*active_cmd)
      return run_active(active_data, active_model, strategy, budget, seeds, first_seed, threads, active_out);
    if (*bench_cmd) return run_bench(bench_config, bench_out);
    if (*serve_cmd) {
      serve_opt.data_dir = data_dir;
      serve_opt.static_dir = static_dir;
      return run_serve(host, port, serve_opt);
    }
    if (*roles_cmd) return run_roles(model_path, matrix_out, mixtures_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
