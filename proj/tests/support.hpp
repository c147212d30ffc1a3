#pragma once

// Test fixtures and independent reference computations.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "maxbm/blockmodel.hpp"
#include "maxbm/datasets.hpp"
#include "maxbm/graph.hpp"
#include "maxbm/max_margin.hpp"

namespace maxbm::fixtures {

inline Network karate() { return load_network(datasets::kKarateEdges, false); }

/// Two planted groups of `per_group` nodes; dense inside, one bridge.
inline std::string planted_edges(std::size_t per_group, double p_in, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution in(p_in);
  std::string text;
  const std::size_t n = 2 * per_group;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      if ((a < per_group) == (b < per_group) && (b == a + 1 || in(rng)))
        text += "n" + std::to_string(a) + " n" + std::to_string(b) + "\n";
  text += "n0 n" + std::to_string(per_group) + "\n";
  return text;
}

inline std::string planted_labels(std::size_t per_group) {
  std::string text = "node,label\n";
  for (std::size_t v = 0; v < 2 * per_group; ++v)
    text += "n" + std::to_string(v) + "," + (v < per_group ? "left" : "right") + "\n";
  return text;
}

/// Log collapsed joint of a hard assignment via the sequential Polya-urn
/// predictive rule (no Gamma functions involved).
inline double polya_log_joint(const Network& net, const std::vector<std::pair<std::size_t, std::size_t>>& z,
                              std::size_t K, double alpha, double beta) {
  const std::size_t N = net.num_nodes();
  std::vector<double> pair(K * K, 0.0), role_total(K, 0.0), role_node(K * N, 0.0);
  double lp = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const auto [k1, k2] = z[i];
    const auto& e = net.interaction(i);
    lp += std::log((alpha + pair[k1 * K + k2]) / (K * K * alpha + static_cast<double>(i)));
    pair[k1 * K + k2] += 1.0;
    lp += std::log((beta + role_node[k1 * N + e.sender]) / (N * beta + role_total[k1]));
    role_node[k1 * N + e.sender] += 1.0;
    role_total[k1] += 1.0;
    lp += std::log((beta + role_node[k2 * N + e.receiver]) / (N * beta + role_total[k2]));
    role_node[k2 * N + e.receiver] += 1.0;
    role_total[k2] += 1.0;
  }
  return lp;
}

/// Calls f(z) for every one of the K^(2M) hard assignments.
inline void for_each_assignment(std::size_t M, std::size_t K,
                                const std::function<void(const std::vector<std::pair<std::size_t, std::size_t>>&)>& f) {
  std::vector<std::size_t> digits(2 * M, 0);
  std::vector<std::pair<std::size_t, std::size_t>> z(M);
  while (true) {
    for (std::size_t i = 0; i < M; ++i) z[i] = {digits[2 * i], digits[2 * i + 1]};
    f(z);
    std::size_t d = 0;
    while (d < digits.size() && ++digits[d] == K) digits[d++] = 0;
    if (d == digits.size()) break;
  }
}

/// Exact posterior marginals P(z_i = (k1, k2)) by exhaustive enumeration.
inline std::vector<double> exact_marginals(const Network& net, std::size_t K, double alpha, double beta) {
  const std::size_t M = net.num_interactions();
  std::vector<double> logp;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> all;
  for_each_assignment(M, K, [&](const auto& z) {
    logp.push_back(polya_log_joint(net, z, K, alpha, beta));
    all.push_back(z);
  });
  double mx = logp[0];
  for (double x : logp) mx = std::max(mx, x);
  std::vector<double> marg(M * K * K, 0.0);
  double total = 0.0;
  for (std::size_t a = 0; a < all.size(); ++a) {
    const double w = std::exp(logp[a] - mx);
    total += w;
    for (std::size_t i = 0; i < M; ++i) marg[(i * K + all[a][i].first) * K + all[a][i].second] += w;
  }
  for (auto& m : marg) m /= total;
  return marg;
}

/// Runs untilted sweeps until the largest change falls below `tol`.
inline void converge(EdgeRolePosterior& post, ExpectedCounts& counts, const Network& net, const HyperParams& hp,
                     double tol = 1e-12, std::size_t max_sweeps = 100000) {
  for (std::size_t s = 0; s < max_sweeps; ++s)
    if (vb_sweep(post, counts, net, hp) < tol) return;
}

struct Kkt {
  double stationarity = 0.0;   // |eta - sum_v tau_v x_v|
  double row_sum = 0.0;        // |sum_c mu_v^c - D/n|
  double dual_sign = 0.0;      // most negative mu
  double slackness = 0.0;      // mu_v^c * (constraint surplus)
  double feasibility = 0.0;    // constraint violation given xi
};

// Residuals of the optimality conditions, computed from scratch.
inline Kkt kkt(const ClassifierState& st, const Matrix& x, const std::vector<ClassIndex>& y) {
  const std::size_t n = x.rows(), K = x.cols(), C = st.eta.cols();
  const double cap = st.D / static_cast<double>(n);
  Kkt r;
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t v = 0; v < n; ++v) s += ((c == y[v] ? cap : 0.0) - st.mu(v, c)) * x(v, k);
      r.stationarity = std::max(r.stationarity, std::abs(st.eta(k, c) - s));
    }
  for (std::size_t v = 0; v < n; ++v) {
    double sum = 0.0;
    std::vector<double> score(C, 0.0);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < K; ++k) score[c] += st.eta(k, c) * x(v, k);
    for (std::size_t c = 0; c < C; ++c) {
      sum += st.mu(v, c);
      r.dual_sign = std::min(r.dual_sign, st.mu(v, c));
      const double surplus = score[y[v]] - score[c] - (c == y[v] ? 0.0 : 1.0) + st.xi[v];
      r.feasibility = std::max(r.feasibility, -surplus);
      r.slackness = std::max(r.slackness, st.mu(v, c) * std::abs(surplus));
    }
    r.row_sum = std::max(r.row_sum, std::abs(sum - cap));
  }
  return r;
}

// Random separable set: labels from a hidden linear rule with a margin gap.
inline void separable(std::uint64_t seed, std::size_t n, std::size_t K, std::size_t C, Matrix& x, std::vector<ClassIndex>& y) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix w(K, C);
  for (auto& v : w.data()) v = g(rng);
  x = Matrix(n, K);
  y.assign(n, 0);
  for (std::size_t v = 0; v < n;) {
    for (std::size_t k = 0; k < K; ++k) x(v, k) = g(rng);
    const auto [best, s] = classify(w, x.row(v));
    if (multiclass_margin(w, x.row(v), best) < 0.3) continue;
    y[v] = best;
    ++v;
  }
}

}  // namespace maxbm::fixtures
