#pragma once

/**
 * Collapsed mixed-membership blockmodel.
 *
 * Generative process (pi and phi are integrated out):
 *
 *   pi    ~ Dirichlet(alpha)          over the K*K role pairs
 *   phi_k ~ Dirichlet(beta)           over the N nodes, one per role
 *   for each interaction i:
 *     z_i = (k1, k2) ~ Categorical(pi)
 *     s_i ~ Categorical(phi_k1),  r_i ~ Categorical(phi_k2)
 *
 * The variational posterior is q(z) = prod_i Categorical(z_i | lambda_i) with
 * lambda_i a K x K table. Updates are zero-order collapsed VB (CVB0):
 *
 *   lambda_i(k1,k2) ∝ (d(k1,k2) + alpha)
 *                     (n(s_i,k1) + beta) (n(r_i,k2) + beta)
 *                   / ((n(.,k1) + N beta) (n(.,k2) + N beta + [k1 == k2]))
 *                   * exp(tilt_s(k1) + tilt_r(k2))
 *
 * with every count taken excluding interaction i. The tilt terms come from
 * the max-margin classifier (see engine.hpp) and are zero without labels.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "maxbm/error.hpp"
#include "maxbm/graph.hpp"
#include "maxbm/matrix.hpp"

namespace maxbm {

struct HyperParams {
  std::size_t K = 4;
  double alpha = 0.1;
  double beta = 0.1;

  void validate() const {
    if (K < 1) throw Error("K must be at least 1");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw Error("alpha must be positive");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw Error("beta must be positive");
  }
};

/// M x K x K tensor; slice i is the role-pair distribution of interaction i.
class EdgeRolePosterior {
 public:
  EdgeRolePosterior() = default;
  EdgeRolePosterior(std::size_t M, std::size_t K) : M_(M), K_(K), data_(M * K * K, 0.0) {}

  std::size_t num_interactions() const { return M_; }
  std::size_t num_roles() const { return K_; }

  double& operator()(std::size_t i, std::size_t k1, std::size_t k2) { return data_[(i * K_ + k1) * K_ + k2]; }
  double operator()(std::size_t i, std::size_t k1, std::size_t k2) const {
    return data_[(i * K_ + k1) * K_ + k2];
  }

  std::span<double> slice(std::size_t i) { return {data_.data() + i * K_ * K_, K_ * K_}; }
  std::span<const double> slice(std::size_t i) const { return {data_.data() + i * K_ * K_, K_ * K_}; }

  /// Row sums of lambda_i: marginal role of the sender.
  void sender_marginal(std::size_t i, std::span<double> out) const {
    for (std::size_t a = 0; a < K_; ++a) {
      double s = 0.0;
      for (std::size_t b = 0; b < K_; ++b) s += (*this)(i, a, b);
      out[a] = s;
    }
  }
  /// Column sums of lambda_i: marginal role of the receiver.
  void receiver_marginal(std::size_t i, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t a = 0; a < K_; ++a)
      for (std::size_t b = 0; b < K_; ++b) out[b] += (*this)(i, a, b);
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  friend bool operator==(const EdgeRolePosterior&, const EdgeRolePosterior&) = default;

 private:
  std::size_t M_ = 0;
  std::size_t K_ = 0;
  std::vector<double> data_;
};

/// Expected sufficient statistics under q.
struct ExpectedCounts {
  Matrix d;                 // K x K expected role-pair link counts
  Matrix n_vk;              // N x K expected role participation per node
  std::vector<double> n_k;  // K role totals (sender + receiver positions)

  ExpectedCounts() = default;
  ExpectedCounts(std::size_t N, std::size_t K) : d(K, K), n_vk(N, K), n_k(K, 0.0) {}

  std::size_t num_roles() const { return n_k.size(); }
};

namespace detail {

/// Adds sign * lambda_i into the counts.
inline void accumulate_edge(ExpectedCounts& c, const EdgeRolePosterior& post, const Interaction& e, std::size_t i,
                            double sign) {
  const std::size_t K = post.num_roles();
  for (std::size_t a = 0; a < K; ++a) {
    for (std::size_t b = 0; b < K; ++b) {
      const double x = sign * post(i, a, b);
      c.d(a, b) += x;
      c.n_vk(e.sender, a) += x;
      c.n_vk(e.receiver, b) += x;
      c.n_k[a] += x;
      c.n_k[b] += x;
    }
  }
}

inline void check_shape(const EdgeRolePosterior& post, const Network& net) {
  if (post.num_interactions() != net.num_interactions()) {
    throw Error("posterior has " + std::to_string(post.num_interactions()) + " slices but network has " +
                std::to_string(net.num_interactions()) + " interactions");
  }
}

}  // namespace detail

/// Each lambda_i ~ symmetric Dirichlet(1) over the K*K cells.
inline EdgeRolePosterior init_posterior(const Network& net, const HyperParams& hp, std::uint64_t seed) {
  hp.validate();
  const std::size_t K = hp.K;
  EdgeRolePosterior post(net.num_interactions(), K);
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);
  for (std::size_t i = 0; i < post.num_interactions(); ++i) {
    auto cell = post.slice(i);
    double total = 0.0;
    for (auto& x : cell) {
      x = expo(rng);
      total += x;
    }
    for (auto& x : cell) x /= total;
  }
  return post;
}

inline ExpectedCounts expected_counts(const EdgeRolePosterior& post, const Network& net) {
  detail::check_shape(post, net);
  ExpectedCounts c(net.num_nodes(), post.num_roles());
  for (std::size_t i = 0; i < post.num_interactions(); ++i) {
    detail::accumulate_edge(c, post, net.interaction(i), i, 1.0);
  }
  return c;
}

/// Largest absolute difference between two count tables.
inline double count_drift(const ExpectedCounts& a, const ExpectedCounts& b) {
  double m = 0.0;
  for (std::size_t j = 0; j < a.d.size(); ++j) m = std::max(m, std::abs(a.d.data()[j] - b.d.data()[j]));
  for (std::size_t j = 0; j < a.n_vk.size(); ++j) m = std::max(m, std::abs(a.n_vk.data()[j] - b.n_vk.data()[j]));
  for (std::size_t j = 0; j < a.n_k.size(); ++j) m = std::max(m, std::abs(a.n_k[j] - b.n_k[j]));
  return m;
}

/// Bound on |tilt_s(k1) + tilt_r(k2)| inside the exponent.
inline constexpr double kMaxTiltExponent = 30.0;

/// One CVB0 update of lambda_i. `counts` must include interaction i on
/// entry and include its new value on exit. Empty tilt spans mean zero tilt.
/// Returns the L-infinity change of lambda_i.
inline double update_edge(EdgeRolePosterior& post, ExpectedCounts& counts, const Network& net, std::size_t i,
                          const HyperParams& hp, std::span<const double> sender_tilt = {},
                          std::span<const double> receiver_tilt = {}) {
  const std::size_t K = post.num_roles();
  const auto& e = net.interaction(i);
  for (double t : sender_tilt)
    if (!std::isfinite(t)) throw Error("non-finite sender tilt");
  for (double t : receiver_tilt)
    if (!std::isfinite(t)) throw Error("non-finite receiver tilt");
  if (K == 1) return 0.0;

  detail::accumulate_edge(counts, post, e, i, -1.0);

  const double Nbeta = static_cast<double>(net.num_nodes()) * hp.beta;
  auto nonneg = [](double x) { return x > 0.0 ? x : 0.0; };

  thread_local std::vector<double> logw;
  logw.assign(K * K, 0.0);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < K; ++a) {
    const double ls = std::log(nonneg(counts.n_vk(e.sender, a)) + hp.beta) - std::log(nonneg(counts.n_k[a]) + Nbeta);
    for (std::size_t b = 0; b < K; ++b) {
      const double delta = a == b ? 1.0 : 0.0;
      double lw = std::log(nonneg(counts.d(a, b)) + hp.alpha) + ls + std::log(nonneg(counts.n_vk(e.receiver, b)) + hp.beta) -
                  std::log(nonneg(counts.n_k[b]) + Nbeta + delta);
      double tilt = 0.0;
      if (!sender_tilt.empty()) tilt += sender_tilt[a];
      if (!receiver_tilt.empty()) tilt += receiver_tilt[b];
      lw += std::clamp(tilt, -kMaxTiltExponent, kMaxTiltExponent);
      logw[a * K + b] = lw;
      top = std::max(top, lw);
    }
  }

  double total = 0.0;
  for (auto& lw : logw) {
    lw = std::exp(lw - top);
    total += lw;
  }
  auto cell = post.slice(i);
  double change = 0.0;
  for (std::size_t j = 0; j < K * K; ++j) {
    const double nv = logw[j] / total;
    change = std::max(change, std::abs(nv - cell[j]));
    cell[j] = nv;
  }

  detail::accumulate_edge(counts, post, e, i, 1.0);
  return change;
}

/// Per-node log-tilts (N x K); rows of unlabelled nodes are zero. A node's
/// row applies to its sender marginal when it sends and to its receiver
/// marginal when it receives.
using NodeTilts = Matrix;

/// Updates every interaction once in ascending index order. `counts` is
/// rebuilt from the posterior before the sweep and is current afterwards.
/// Returns the largest L-infinity change of any lambda_i.
inline double vb_sweep(EdgeRolePosterior& post, ExpectedCounts& counts, const Network& net, const HyperParams& hp,
                       const NodeTilts* tilts = nullptr) {
  detail::check_shape(post, net);
  if (tilts && (tilts->rows() != net.num_nodes() || tilts->cols() != post.num_roles())) {
    throw Error("tilt matrix shape does not match network and role count");
  }
  counts = expected_counts(post, net);
  double max_change = 0.0;
  for (std::size_t i = 0; i < post.num_interactions(); ++i) {
    const auto& e = net.interaction(i);
    std::span<const double> ts, tr;
    if (tilts) {
      ts = tilts->row(e.sender);
      tr = tilts->row(e.receiver);
    }
    max_change = std::max(max_change, update_edge(post, counts, net, i, hp, ts, tr));
  }
  return max_change;
}

/// Expected role mixture z̄_v of every node (N x K). Nodes without
/// interactions get the uniform mixture.
inline Matrix node_role_mixtures(const EdgeRolePosterior& post, const Network& net) {
  detail::check_shape(post, net);
  const std::size_t K = post.num_roles();
  Matrix z(net.num_nodes(), K);
  std::vector<double> marg(K);
  for (std::size_t i = 0; i < post.num_interactions(); ++i) {
    const auto& e = net.interaction(i);
    post.sender_marginal(i, marg);
    for (std::size_t k = 0; k < K; ++k) z(e.sender, k) += marg[k];
    post.receiver_marginal(i, marg);
    for (std::size_t k = 0; k < K; ++k) z(e.receiver, k) += marg[k];
  }
  for (std::size_t v = 0; v < net.num_nodes(); ++v) {
    const auto n = net.degree(v);
    for (std::size_t k = 0; k < K; ++k) {
      z(v, k) = n == 0 ? 1.0 / static_cast<double>(K) : z(v, k) / static_cast<double>(n);
    }
  }
  return z;
}

/// -sum_i sum_{k1,k2} lambda log lambda, with 0 log 0 = 0.
inline double posterior_entropy(const EdgeRolePosterior& post) {
  double h = 0.0;
  for (double x : post.data())
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

/// Dirichlet-multinomial collapsed log-evidence evaluated at the expected
/// counts, without the entropy term.
inline double collapsed_log_joint(const ExpectedCounts& counts, std::size_t N, const HyperParams& hp) {
  const std::size_t K = counts.num_roles();
  const double K2a = static_cast<double>(K * K) * hp.alpha;
  const double Nb = static_cast<double>(N) * hp.beta;
  const double M = counts.d.sum();
  double L = std::lgamma(K2a) - std::lgamma(K2a + M);
  const double lga = std::lgamma(hp.alpha);
  for (double x : counts.d.data()) L += std::lgamma(hp.alpha + x) - lga;
  const double lgb = std::lgamma(hp.beta);
  for (std::size_t k = 0; k < K; ++k) {
    L += std::lgamma(Nb) - std::lgamma(Nb + counts.n_k[k]);
    for (std::size_t v = 0; v < N; ++v) L += std::lgamma(hp.beta + counts.n_vk(v, k)) - lgb;
  }
  return L;
}

/// CVB0 surrogate of the collapsed lower bound: collapsed log-evidence at
/// expected counts plus the factorized entropy of q.
inline double collapsed_bound(const EdgeRolePosterior& post, const ExpectedCounts& counts, const Network& net,
                              const HyperParams& hp) {
  detail::check_shape(post, net);
  return collapsed_log_joint(counts, net.num_nodes(), hp) + posterior_entropy(post);
}

/// Posterior mean of pi: (d + alpha) normalized to sum to 1.
inline Matrix role_interaction_matrix(const ExpectedCounts& counts, const HyperParams& hp) {
  Matrix m = counts.d;
  double total = 0.0;
  for (auto& x : m.data()) {
    x += hp.alpha;
    total += x;
  }
  for (auto& x : m.data()) x /= total;
  return m;
}

// ---------------------------------------------------------------------------
// JSON snapshots

inline nlohmann::json to_json(const HyperParams& hp) {
  return {{"k", hp.K}, {"alpha", hp.alpha}, {"beta", hp.beta}};
}

inline HyperParams hyper_params_from_json(const nlohmann::json& j) {
  try {
    HyperParams hp;
    hp.K = j.at("k").get<std::size_t>();
    hp.alpha = j.at("alpha").get<double>();
    hp.beta = j.at("beta").get<double>();
    hp.validate();
    return hp;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
}

inline nlohmann::json to_json(const EdgeRolePosterior& post) {
  return {{"shape", {post.num_interactions(), post.num_roles(), post.num_roles()}}, {"data", post.data()}};
}

inline EdgeRolePosterior posterior_from_json(const nlohmann::json& j) {
  try {
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3 || shape[1] != shape[2]) throw ParseError("posterior shape must be [M, K, K]");
    EdgeRolePosterior post(shape[0], shape[1]);
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != post.data().size()) throw ParseError("posterior data length does not match shape");
    post.data() = std::move(data);
    return post;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
}

inline nlohmann::json to_json(const Matrix& m) {
  return {{"shape", {m.rows(), m.cols()}}, {"data", m.data()}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  try {
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw ParseError("matrix shape must have 2 entries");
    Matrix m(shape[0], shape[1]);
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != m.size()) throw ParseError("matrix data length does not match shape");
    m.data() = std::move(data);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
}

inline nlohmann::json to_json(const ExpectedCounts& c) {
  return {{"d", to_json(c.d)}, {"n_vk", to_json(c.n_vk)}, {"n_k", c.n_k}};
}

inline ExpectedCounts counts_from_json(const nlohmann::json& j) {
  try {
    ExpectedCounts c;
    c.d = matrix_from_json(j.at("d"));
    c.n_vk = matrix_from_json(j.at("n_vk"));
    c.n_k = j.at("n_k").get<std::vector<double>>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace maxbm
