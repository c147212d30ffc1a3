#pragma once

// Multiclass maximum-margin classifier over role-mixture features.
//
//   min_{eta, xi}  1/2 ||eta||^2 + (D/n) sum_v xi_v
//   s.t. (eta_{y_v} - eta_y)^T x_v >= 1 - [y == y_v] - xi_v   for all v, y
//
// Solved in the dual by exact block coordinate ascent, one training row at a
// time. With Lagrange multipliers mu_v^y >= 0 (sum_y mu_v^y = D/n), the
// stationarity condition reads
//
//   eta_c = sum_v tau_v^c x_v,   tau_v = (D/n) e_{y_v} - mu_v.
//
// `mu` is reported in exactly this scale so the engine can plug it into the
// role-update tilt; `dual` holds the same multipliers normalized to rows that
// sum to one.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "maxbm/error.hpp"
#include "maxbm/graph.hpp"
#include "maxbm/matrix.hpp"

namespace maxbm {

struct SolverOptions {
  double kkt_tol = 1e-6;
  std::size_t max_iterations = 100000;
};

struct ClassifierState {
  Matrix eta;                           // K x C, column c is eta_c
  Matrix mu;                            // n x C Lagrange multipliers, rows sum to D/n
  Matrix dual;                          // n x C, mu normalized to unit row sums
  std::vector<double> xi;               // slack per training row
  std::vector<NodeIndex> nodes;         // training row -> node (filled by the engine)
  double D = 1.0;
  double objective = 0.0;               // primal value
  double dual_objective = 0.0;
  std::vector<double> objective_trace;  // best primal value after each pass
  std::size_t iterations = 0;
  bool converged = true;

  std::size_t num_roles() const { return eta.rows(); }
  std::size_t num_classes() const { return eta.cols(); }
};

/// Scores eta_c^T x for every class.
inline std::vector<double> class_scores(const Matrix& eta, std::span<const double> x) {
  std::vector<double> s(eta.cols(), 0.0);
  for (std::size_t k = 0; k < eta.rows(); ++k)
    for (std::size_t c = 0; c < eta.cols(); ++c) s[c] += eta(k, c) * x[k];
  return s;
}

/// argmax_c eta_c^T x, ties to the lowest class index.
inline std::pair<ClassIndex, std::vector<double>> classify(const Matrix& eta, std::span<const double> x) {
  auto s = class_scores(eta, x);
  ClassIndex best = 0;
  for (std::size_t c = 1; c < s.size(); ++c)
    if (s[c] > s[best]) best = c;
  return {best, std::move(s)};
}

/// eta_{y_ref}^T x - max_{y != y_ref} eta_y^T x.
inline double multiclass_margin(const Matrix& eta, std::span<const double> x, ClassIndex y_ref) {
  if (eta.cols() < 2) throw Error("multiclass margin needs at least 2 classes");
  if (y_ref >= eta.cols()) throw Error("reference class out of range");
  const auto s = class_scores(eta, x);
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < s.size(); ++c)
    if (c != y_ref) other = std::max(other, s[c]);
  return s[y_ref] - other;
}

namespace detail {

/// min 1/2 A ||t||^2 + b^T t  s.t.  t <= cap * e_y,  sum t = 0.
/// Closed form: t_c = u_c - max(0, phi - w_c) with w_c = -b_c/A - u_c and
/// phi chosen so that the entries sum to zero.
inline void solve_row_subproblem(double A, std::span<const double> b, std::size_t y, double cap,
                                 std::span<double> t) {
  const std::size_t C = b.size();
  thread_local std::vector<double> w, sorted;
  w.resize(C);
  for (std::size_t c = 0; c < C; ++c) w[c] = -b[c] / A - (c == y ? cap : 0.0);
  sorted = w;
  std::sort(sorted.begin(), sorted.end());
  double acc = 0.0;
  double phi = 0.0;
  for (std::size_t j = 0; j < C; ++j) {
    acc += sorted[j];
    phi = (cap + acc) / static_cast<double>(j + 1);
    if (j + 1 == C || phi <= sorted[j + 1]) break;
  }
  for (std::size_t c = 0; c < C; ++c) t[c] = (c == y ? cap : 0.0) - std::max(0.0, phi - w[c]);
}

inline double frob2(const Matrix& m) {
  double s = 0.0;
  for (double x : m.data()) s += x * x;
  return s;
}

}  // namespace detail

/// Slack of each row: max(0, max_y [1 - [y == y_v] - (eta_{y_v} - eta_y)^T x_v]).
inline std::vector<double> compute_slacks(const Matrix& eta, const Matrix& features,
                                          std::span<const ClassIndex> labels) {
  std::vector<double> xi(features.rows(), 0.0);
  for (std::size_t v = 0; v < features.rows(); ++v) {
    const auto s = class_scores(eta, features.row(v));
    double worst = 0.0;
    for (std::size_t c = 0; c < s.size(); ++c)
      if (c != labels[v]) worst = std::max(worst, 1.0 - (s[labels[v]] - s[c]));
    xi[v] = worst;
  }
  return xi;
}

/// Solves the multiclass max-margin problem over `features` (n x K).
/// `num_classes` is the global C, which may exceed the classes present.
inline ClassifierState solve_multiclass(const Matrix& features, std::span<const ClassIndex> labels,
                                        std::size_t num_classes, double D, const SolverOptions& opt = {}) {
  const std::size_t n = features.rows();
  const std::size_t K = features.cols();
  const std::size_t C = num_classes;
  if (n == 0) throw Error("solve_multiclass needs at least one labelled row");
  if (labels.size() != n) throw Error("label count does not match feature rows");
  if (C < 2) throw Error("at least 2 classes are required");
  if (!(D >= 0.0) || !std::isfinite(D)) throw Error("regularization D must be finite and non-negative");
  for (double x : features.data())
    if (!std::isfinite(x)) throw Error("non-finite feature value");
  for (auto y : labels)
    if (y >= C) throw Error("label out of range");

  ClassifierState st;
  st.D = D;
  st.eta = Matrix(K, C);
  st.mu = Matrix(n, C);
  st.dual = Matrix(n, C);
  st.nodes.resize(n);
  std::iota(st.nodes.begin(), st.nodes.end(), NodeIndex{0});

  const double cap = D / static_cast<double>(n);
  Matrix tau(n, C);

  std::vector<double> sqnorm(n);
  for (std::size_t v = 0; v < n; ++v) {
    double a = 0.0;
    for (double x : features.row(v)) a += x * x;
    sqnorm[v] = a;
  }

  // Rows with x = 0 never move eta; their optimal multipliers put all mass
  // on one competing class so that the slack constraint is tight.
  for (std::size_t v = 0; v < n; ++v) {
    if (sqnorm[v] > 0.0) continue;
    const std::size_t other = labels[v] == 0 ? 1 : 0;
    tau(v, labels[v]) = cap;
    tau(v, other) = -cap;
  }

  auto evaluate = [&]() {
    const double half_norm = 0.5 * detail::frob2(st.eta);
    st.xi = compute_slacks(st.eta, features, labels);
    double xs = 0.0;
    for (double x : st.xi) xs += x;
    st.objective = half_norm + cap * xs;
    double lin = 0.0;
    for (std::size_t v = 0; v < n; ++v) lin += tau(v, labels[v]);
    st.dual_objective = lin - half_norm;
  };

  // Dual ascent does not make the primal monotone, so the best primal
  // iterate is kept alongside the latest dual bound.
  evaluate();
  Matrix best_eta = st.eta, best_tau = tau;
  std::vector<double> best_xi = st.xi;
  double best = st.objective;
  auto keep_best = [&]() {
    if (st.objective <= best) {
      best = st.objective;
      best_eta = st.eta;
      best_tau = tau;
      best_xi = st.xi;
    }
    st.objective_trace.push_back(best);
  };
  st.objective_trace.push_back(best);
  st.converged = cap == 0.0;
  std::vector<double> b(C), t(C);

  for (std::size_t it = 0; it < opt.max_iterations && cap > 0.0; ++it) {
    for (std::size_t v = 0; v < n; ++v) {
      const double A = sqnorm[v];
      if (A <= 0.0) continue;
      const auto x = features.row(v);
      const auto s = class_scores(st.eta, x);
      for (std::size_t c = 0; c < C; ++c) b[c] = s[c] - A * tau(v, c) - (c == labels[v] ? 1.0 : 0.0);
      detail::solve_row_subproblem(A, b, labels[v], cap, t);
      for (std::size_t c = 0; c < C; ++c) {
        const double step = t[c] - tau(v, c);
        if (step == 0.0) continue;
        for (std::size_t k = 0; k < K; ++k) st.eta(k, c) += step * x[k];
        tau(v, c) = t[c];
      }
    }
    st.iterations = it + 1;
    evaluate();
    keep_best();
    if (best - st.dual_objective <= opt.kkt_tol * std::max(1.0, std::abs(best))) {
      st.converged = true;
      break;
    }
  }
  st.eta = std::move(best_eta);
  tau = std::move(best_tau);
  st.xi = std::move(best_xi);
  st.objective = best;

  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t c = 0; c < C; ++c) {
      const double m = (c == labels[v] ? cap : 0.0) - tau(v, c);
      st.mu(v, c) = std::max(0.0, m);
      st.dual(v, c) = cap > 0.0 ? st.mu(v, c) / cap : (c == labels[v] ? 1.0 : 0.0);
    }
  }
  return st;
}

/// Stratified fold assignment: members of each class are shuffled and dealt
/// round-robin into `folds` folds.
inline std::vector<std::size_t> stratified_folds(std::span<const ClassIndex> labels, std::size_t num_classes,
                                                 std::size_t folds, std::uint64_t seed) {
  std::vector<std::size_t> fold(labels.size(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t v = 0; v < labels.size(); ++v)
      if (labels[v] == c) members.push_back(v);
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t j = 0; j < members.size(); ++j) fold[members[j]] = j % folds;
  }
  return fold;
}

inline const std::vector<double>& default_regularization_grid() {
  static const std::vector<double> grid{0.01, 0.1, 1.0, 10.0, 100.0};
  return grid;
}

inline constexpr double kDefaultRegularization = 1.0;

/// Cross-validated accuracy of the classifier trained with each D in `grid`.
inline std::vector<double> cross_validated_accuracy(const Matrix& features, std::span<const ClassIndex> labels,
                                                    std::size_t num_classes, std::span<const double> grid,
                                                    std::span<const std::size_t> fold, std::size_t folds,
                                                    const SolverOptions& opt = {}) {
  std::vector<double> acc(grid.size(), 0.0);
  const std::size_t K = features.cols();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    std::size_t correct = 0, total = 0;
    for (std::size_t f = 0; f < folds; ++f) {
      std::vector<std::size_t> train, test;
      for (std::size_t v = 0; v < labels.size(); ++v) (fold[v] == f ? test : train).push_back(v);
      if (train.empty() || test.empty()) continue;
      Matrix x(train.size(), K);
      std::vector<ClassIndex> y(train.size());
      for (std::size_t j = 0; j < train.size(); ++j) {
        std::copy_n(features.row(train[j]).begin(), K, x.row(j).begin());
        y[j] = labels[train[j]];
      }
      const auto st = solve_multiclass(x, y, num_classes, grid[g], opt);
      for (auto v : test) {
        correct += classify(st.eta, features.row(v)).first == labels[v] ? 1 : 0;
        ++total;
      }
    }
    acc[g] = total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  }
  return acc;
}

/// Picks D by stratified k-fold cross-validation; the smallest D wins ties.
/// `folds == 0` means min(5, smallest class count). Falls back to D = 1 when
/// some class has fewer than 2 labelled rows.
inline double select_regularization(const Matrix& features, std::span<const ClassIndex> labels,
                                    std::size_t num_classes, std::span<const double> grid, std::size_t folds,
                                    std::uint64_t seed, const SolverOptions& opt = {}) {
  if (grid.empty()) throw Error("regularization grid is empty");
  std::vector<std::size_t> per_class(num_classes, 0);
  for (auto y : labels) {
    if (y >= num_classes) throw Error("label out of range");
    ++per_class[y];
  }
  const auto smallest = *std::min_element(per_class.begin(), per_class.end());
  if (smallest < 2) return kDefaultRegularization;
  if (folds == 0) folds = std::min<std::size_t>(5, smallest);
  if (folds < 2) return kDefaultRegularization;

  std::vector<double> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());
  const auto fold = stratified_folds(labels, num_classes, folds, seed);
  const auto acc = cross_validated_accuracy(features, labels, num_classes, sorted, fold, folds, opt);
  std::size_t best = 0;
  for (std::size_t g = 1; g < sorted.size(); ++g)
    if (acc[g] > acc[best]) best = g;
  return sorted[best];
}

}  // namespace maxbm
