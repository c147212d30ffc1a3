#pragma once

// HTTP session service for interactive labelling by a human oracle.
//
// Routes:
//   POST /sessions                 create a session, returns id and first query
//   GET  /sessions/:id/query       pending query with its neighbourhood
//   POST /sessions/:id/labels      {"node", "label", "voluntary"?}
//   GET  /sessions/:id/state       full state document
//   GET  /sessions/:id/curve.csv   answered queries as a learning curve

#include <atomic>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "maxbm/active.hpp"
#include "maxbm/engine.hpp"
#include "maxbm/experiments.hpp"

namespace maxbm {

struct ServiceOptions {
  std::filesystem::path data_dir;                 // empty: no persistence
  std::filesystem::path static_dir;               // empty: no static files
  std::size_t background_refit_nodes = 5000;      // refit asynchronously above this size
  std::size_t max_interactions = 1000000;         // larger uploads get 413
  std::size_t max_body_bytes = 512u * 1024 * 1024;
};

struct Reply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

class SessionService {
 public:
  explicit SessionService(ServiceOptions opt = {}) : opt_(std::move(opt)), rng_(std::random_device{}()) {
    if (!opt_.data_dir.empty()) {
      std::filesystem::create_directories(opt_.data_dir);
      recover();
    }
  }

  ~SessionService() {
    std::unique_lock lock(sessions_mutex_);
    for (auto& [id, s] : sessions_)
      if (s->worker.joinable()) s->worker.join();
  }

  SessionService(const SessionService&) = delete;
  SessionService& operator=(const SessionService&) = delete;

  std::size_t num_sessions() const {
    std::shared_lock lock(sessions_mutex_);
    return sessions_.size();
  }

  Reply create(const std::string& body) {
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      return error(400, std::string("malformed JSON: ") + e.what());
    }
    if (!req.is_object()) return error(400, "request body must be a JSON object");

    auto s = std::make_shared<Session>();
    try {
      std::shared_ptr<const Network> net;
      std::optional<LabelStore> truth_store;
      std::vector<std::string> classes;
      if (req.contains("dataset")) {
        if (req["dataset"] != "karate") return error(400, "only the bundled dataset 'karate' can be named");
        auto d = karate_dataset();
        s->dataset = d.name;
        net = d.network;
        truth_store = d.labels;
      } else {
        if (!req.contains("edges") || !req["edges"].is_string()) return error(400, "'edges' text is required");
        s->dataset = req.value("name", std::string("upload"));
        net = std::make_shared<const Network>(
            load_network(req["edges"].get<std::string>(), req.value("directed", false)));
        if (net->num_interactions() > opt_.max_interactions)
          return error(413, "network has " + std::to_string(net->num_interactions()) + " interactions, limit is " +
                                std::to_string(opt_.max_interactions));
        if (req.contains("labels") && !req["labels"].is_null()) {
          truth_store = load_labels(req["labels"].get<std::string>(), *net);
        }
      }

      LabelStore labels = truth_store ? LabelStore(truth_store->class_names())
                                      : LabelStore(req.at("classes").get<std::vector<std::string>>());
      if (truth_store) {
        s->truth = truth_store->truth();
        const auto seeded = seed_labels(*truth_store, req.value("seed", std::uint64_t{0}));
        for (const auto& [v, c] : seeded.acquired()) labels.acquire(v, c);
      }
      if (req.contains("initial_labels")) {
        for (const auto& [node, label] : req["initial_labels"].items()) {
          const auto v = net->find(node);
          const auto c = labels.find_class(label.get<std::string>());
          if (!v || !c) return error(422, "unknown node or label in initial_labels");
          if (!labels.is_acquired(*v)) labels.acquire(*v, *c);
        }
      }

      FitConfig cfg;
      cfg.hp.K = req.value("k", default_roles(labels));
      cfg.hp.alpha = req.value("alpha", cfg.hp.alpha);
      cfg.hp.beta = req.value("beta", cfg.hp.beta);
      cfg.seed = req.value("seed", cfg.seed);
      const auto strategy = parse_strategy(req.value("strategy", std::string("margin")));
      cfg.validate();
      s->active = std::make_unique<ActiveSession>(std::move(net), std::move(labels), std::move(cfg), strategy);
    } catch (const nlohmann::json::exception& e) {
      return error(400, std::string("malformed request: ") + e.what());
    } catch (const Error& e) {
      return error(400, e.what());
    }

    {
      std::unique_lock lock(sessions_mutex_);
      do s->id = new_id();
      while (sessions_.count(s->id));
      sessions_[s->id] = s;
    }
    std::lock_guard w(s->writer);
    commit(*s);
    return ok(query_json(*s));
  }

  Reply query(const std::string& id) const {
    auto s = find(id);
    if (!s) return error(404, "unknown session '" + id + "'");
    return ok(query_json(*s));
  }

  Reply state(const std::string& id) const {
    auto s = find(id);
    if (!s) return error(404, "unknown session '" + id + "'");
    return ok(s->committed()->state);
  }

  Reply curve_csv(const std::string& id) const {
    auto s = find(id);
    if (!s) return error(404, "unknown session '" + id + "'");
    return {200, s->committed()->curve_csv, "text/csv"};
  }

  Reply submit(const std::string& id, const std::string& body) {
    auto s = find(id);
    if (!s) return error(404, "unknown session '" + id + "'");
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      return error(400, std::string("malformed JSON: ") + e.what());
    }
    if (!req.is_object() || !req.contains("node") || !req.contains("label") || !req["node"].is_string() ||
        !req["label"].is_string())
      return error(400, "expected {\"node\": string, \"label\": string}");
    const bool voluntary = req.value("voluntary", false);

    std::unique_lock w(s->writer);
    if (s->refitting) return error(409, "session is refitting");
    const auto& net = s->active->network();
    const auto& labels = s->active->labels();
    const auto v = net.find(req["node"].get<std::string>());
    if (!v) return error(422, "unknown node '" + req["node"].get<std::string>() + "'");
    const auto c = labels.find_class(req["label"].get<std::string>());
    if (!c) return error(422, "unknown label '" + req["label"].get<std::string>() + "'");
    if (labels.is_acquired(*v)) return error(409, "node '" + net.node_id(*v) + "' is already labelled");
    if (!voluntary && s->active->pending() != v) return error(409, "node '" + net.node_id(*v) + "' is not the pending query");

    s->curve.push_back({s->active->num_queried(), net.node_id(*v), accuracy(*s), s->active->margin_of(*v)});
    s->active->record(*v, *c);
    if (net.num_nodes() <= opt_.background_refit_nodes) {
      s->active->refresh();
      commit(*s);
      return ok(s->committed()->state);
    }

    s->refitting = true;
    commit(*s);
    if (s->worker.joinable()) s->worker.join();
    s->worker = std::thread([this, s] {
      std::lock_guard lock(s->writer);
      try {
        s->active->refresh();
      } catch (const std::exception& e) {
        std::cerr << "maxbm: background refit of session " << s->id << " failed: " << e.what() << '\n';
      }
      s->refitting = false;
      commit(*s);
    });
    return ok(s->committed()->state);
  }

  /// Registers the routes (and the optional static mount) on `svr`.
  void install(httplib::Server& svr) {
    auto send = [](httplib::Response& res, const Reply& r) {
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
    svr.set_payload_max_length(opt_.max_body_bytes);
    svr.Post("/sessions", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, create(req.body));
    });
    svr.Get("/sessions/:id/query", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, query(req.path_params.at("id")));
    });
    svr.Get("/sessions/:id/state", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, state(req.path_params.at("id")));
    });
    svr.Get("/sessions/:id/curve.csv", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, curve_csv(req.path_params.at("id")));
    });
    svr.Post("/sessions/:id/labels", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, submit(req.path_params.at("id"), req.body));
    });
    svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      res.status = 500;
      res.set_content(nlohmann::json{{"error", what}}.dump(), "application/json");
    });
    if (!opt_.static_dir.empty() && !svr.set_mount_point("/", opt_.static_dir.string()))
      throw Error("static directory '" + opt_.static_dir.string() + "' does not exist");
  }

 private:
  struct Step {
    std::size_t n_acquired;
    std::string node;
    std::optional<double> accuracy;
    double margin;
  };

  struct Committed {
    nlohmann::json state;
    std::string curve_csv;
  };

  struct Session {
    std::string id;
    std::string dataset;
    std::optional<std::map<NodeIndex, ClassIndex>> truth;
    std::unique_ptr<ActiveSession> active;
    std::vector<Step> curve;
    std::mutex writer;
    std::atomic<bool> refitting{false};
    std::thread worker;

    std::shared_ptr<const Committed> committed() const {
      std::lock_guard lock(published_mutex);
      return published;
    }
    void publish(std::shared_ptr<const Committed> c) {
      std::lock_guard lock(published_mutex);
      published = std::move(c);
    }

   private:
    mutable std::mutex published_mutex;
    std::shared_ptr<const Committed> published;
  };

  static Reply ok(const nlohmann::json& j) { return {200, j.dump()}; }
  static Reply error(int status, const std::string& msg) { return {status, nlohmann::json{{"error", msg}}.dump()}; }

  std::string new_id() {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << rng_();
    return os.str();
  }

  std::shared_ptr<Session> find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  static std::optional<double> accuracy(const Session& s) {
    if (!s.truth) return std::nullopt;
    const auto& a = *s.active;
    std::size_t correct = 0, total = 0;
    for (const auto& [v, p] : predict_unlabeled(a.model(), a.labels())) {
      auto it = s.truth->find(v);
      if (it == s.truth->end()) continue;
      ++total;
      correct += it->second == p.label ? 1 : 0;
    }
    if (total == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(total);
  }

  static nlohmann::json pending_json(const Session& s) {
    const auto& a = *s.active;
    if (s.refitting || !a.pending()) return nullptr;
    const auto& net = a.network();
    const NodeIndex v = *a.pending();
    const auto x = a.model().mixtures.row(v);
    const auto y = classify(a.model().classifier.eta, x).first;

    std::map<NodeIndex, std::pair<bool, bool>> adj;  // (out, in)
    for (auto i : net.outgoing(v)) adj[net.interaction(i).receiver].first = true;
    for (auto i : net.incoming(v)) adj[net.interaction(i).sender].second = true;
    nlohmann::json neighbors = nlohmann::json::array();
    for (const auto& [w, dir] : adj) {
      nlohmann::json n{{"node", net.node_id(w)},
                       {"direction", dir.first && dir.second ? "both" : dir.first ? "out" : "in"}};
      auto it = a.labels().acquired().find(w);
      n["label"] = it == a.labels().acquired().end() ? nlohmann::json(nullptr)
                                                      : nlohmann::json(a.labels().class_names()[it->second]);
      neighbors.push_back(std::move(n));
    }
    return {{"node", net.node_id(v)},
            {"predicted_label", a.labels().class_names()[y]},
            {"margin", a.margin_of(v)},
            {"degree", net.degree(v)},
            {"neighbors", std::move(neighbors)}};
  }

  nlohmann::json query_json(const Session& s) const {
    const auto c = s.committed();
    return {{"session_id", s.id}, {"pending_query", c->state.at("pending_query")}, {"refitting", c->state.at("refitting")}};
  }

  static nlohmann::json state_json(const Session& s) {
    const auto& a = *s.active;
    const auto& net = a.network();
    const auto& labels = a.labels();
    const auto& model = a.model();
    const auto& names = labels.class_names();

    nlohmann::json acquired = nlohmann::json::array();
    for (const auto& [v, c] : labels.acquired()) acquired.push_back({{"node", net.node_id(v)}, {"label", names[c]}});

    nlohmann::json predictions = nlohmann::json::array();
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& n : names) counts[n] = 0;
    for (const auto& [v, p] : predict_unlabeled(model, labels)) {
      predictions.push_back({{"node", net.node_id(v)}, {"label", names[p.label]}, {"margin", p.margin}});
      counts[names[p.label]] = counts[names[p.label]].get<std::size_t>() + 1;
    }

    nlohmann::json mixtures = nlohmann::json::array();
    for (std::size_t v = 0; v < model.mixtures.rows(); ++v) {
      const auto r = model.mixtures.row(v);
      mixtures.push_back(std::vector<double>(r.begin(), r.end()));
    }
    const auto roles = role_interaction_matrix(model.counts, model.hp);
    nlohmann::json role_matrix = nlohmann::json::array();
    for (std::size_t k = 0; k < roles.rows(); ++k) {
      const auto r = roles.row(k);
      role_matrix.push_back(std::vector<double>(r.begin(), r.end()));
    }

    const auto acc = accuracy(s);
    return {{"session_id", s.id},
            {"dataset", s.dataset},
            {"strategy", strategy_name(a.strategy())},
            {"seed", a.config().seed},
            {"k", model.hp.K},
            {"class_names", names},
            {"node_ids", net.node_ids()},
            {"num_nodes", net.num_nodes()},
            {"num_interactions", net.num_interactions()},
            {"num_queried", a.num_queried()},
            {"num_acquired", labels.acquired().size()},
            {"acquired", std::move(acquired)},
            {"pending_query", pending_json(s)},
            {"refitting", s.refitting.load()},
            {"predictions", std::move(predictions)},
            {"prediction_counts", std::move(counts)},
            {"role_matrix", std::move(role_matrix)},
            {"mixtures", std::move(mixtures)},
            {"objective_trace", model.objective_trace},
            {"regularization", model.classifier.D},
            {"accuracy", acc ? nlohmann::json(*acc) : nlohmann::json(nullptr)}};
  }

  static std::string curve_text(const Session& s) {
    std::ostringstream os;
    os << kCurveCsvHeader << '\n';
    const auto name = strategy_name(s.active->strategy());
    const auto seed = s.active->config().seed;
    auto acc = [](const std::optional<double>& a) { return a ? format_double(*a) : std::string(); };
    for (const auto& st : s.curve)
      os << name << ',' << seed << ',' << st.n_acquired << ',' << st.node << ',' << acc(st.accuracy) << ','
         << format_double(st.margin) << '\n';
    if (!s.refitting) os << name << ',' << seed << ',' << s.active->num_queried() << ",," << acc(accuracy(s)) << ",\n";
    return os.str();
  }

  /// Publishes the current state and persists it. Caller holds the writer lock.
  void commit(Session& s) {
    s.publish(std::make_shared<const Committed>(Committed{state_json(s), curve_text(s)}));
    if (!opt_.data_dir.empty()) persist(s);
  }

  void persist(const Session& s) {
    const auto& a = *s.active;
    const auto& net = a.network();
    nlohmann::json j;
    j["format"] = "maxbm-session";
    j["version"] = 1;
    j["session_id"] = s.id;
    j["dataset"] = s.dataset;
    j["strategy"] = strategy_name(a.strategy());
    j["num_queried"] = a.num_queried();
    j["pending"] = a.pending() ? nlohmann::json(net.node_id(*a.pending())) : nlohmann::json(nullptr);
    j["refit_needed"] = s.refitting.load();
    if (s.truth) {
      nlohmann::json truth = nlohmann::json::object();
      for (const auto& [v, c] : *s.truth) truth[net.node_id(v)] = a.labels().class_names()[c];
      j["truth"] = std::move(truth);
    }
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& st : s.curve)
      curve.push_back({{"n_acquired", st.n_acquired},
                       {"node", st.node},
                       {"accuracy", st.accuracy ? nlohmann::json(*st.accuracy) : nlohmann::json(nullptr)},
                       {"margin", st.margin}});
    j["curve"] = std::move(curve);
    j["snapshot"] = snapshot_to_json(net, a.labels(), a.config(), a.model());

    const auto path = opt_.data_dir / (s.id + ".json");
    auto tmp = path;
    tmp += ".tmp";
    write_file(tmp, j.dump());
    std::filesystem::rename(tmp, path);
  }

  void recover() {
    for (const auto& entry : std::filesystem::directory_iterator(opt_.data_dir)) {
      if (entry.path().extension() != ".json") continue;
      try {
        const auto j = nlohmann::json::parse(read_file(entry.path()));
        if (j.value("format", "") != "maxbm-session") continue;
        auto snap = snapshot_from_json(j.at("snapshot"));
        auto net = std::make_shared<const Network>(std::move(snap.network));
        auto s = std::make_shared<Session>();
        s->id = j.at("session_id").get<std::string>();
        if (s->id.empty() || s->id.find_first_not_of("0123456789abcdef") != std::string::npos)
          throw ParseError("invalid session id");
        s->dataset = j.value("dataset", std::string());
        if (j.contains("truth")) {
          std::map<NodeIndex, ClassIndex> truth;
          for (const auto& [node, label] : j["truth"].items()) {
            const auto v = net->find(node);
            const auto c = snap.labels.find_class(label.get<std::string>());
            if (!v || !c) throw ParseError("truth references an unknown node or label");
            truth[*v] = *c;
          }
          s->truth = std::move(truth);
        }
        for (const auto& st : j.at("curve"))
          s->curve.push_back({st.at("n_acquired").get<std::size_t>(), st.at("node").get<std::string>(),
                              st.at("accuracy").is_null() ? std::nullopt
                                                          : std::optional<double>(st["accuracy"].get<double>()),
                              st.at("margin").get<double>()});
        std::optional<NodeIndex> pending;
        if (!j.at("pending").is_null()) {
          pending = net->find(j["pending"].get<std::string>());
          if (!pending) throw ParseError("pending query references an unknown node");
        }
        s->active = std::make_unique<ActiveSession>(std::move(net), std::move(snap.labels), std::move(snap.config),
                                                    parse_strategy(j.at("strategy").get<std::string>()),
                                                    std::move(snap.model), j.at("num_queried").get<std::size_t>(),
                                                    pending);
        std::lock_guard w(s->writer);
        if (j.value("refit_needed", false)) s->active->refresh();
        commit(*s);
        sessions_[s->id] = std::move(s);
      } catch (const std::exception& e) {
        std::cerr << "maxbm: skipping unreadable session file " << entry.path() << ": " << e.what() << '\n';
      }
    }
  }

  ServiceOptions opt_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mt19937_64 rng_;
};

}  // namespace maxbm
