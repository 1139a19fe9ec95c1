#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the code paths it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "drought/gbt.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// Shapley values by subset enumeration

/// Cover-weighted expectation of one tree given the features in `mask` are known.
inline double conditional_expectation(const drought::gbt::Tree& tree, std::span<const double> x, std::uint32_t mask,
                                      int node_id = 0) {
  const auto& n = tree.nodes[static_cast<std::size_t>(node_id)];
  if (n.left < 0) return n.weight;
  if (mask & (1u << n.feature)) {
    const double v = x[static_cast<std::size_t>(n.feature)];
    int child;
    if (std::isnan(v))
      child = n.default_left ? n.left : n.right;
    else
      child = v < n.threshold ? n.left : n.right;
    return conditional_expectation(tree, x, mask, child);
  }
  const auto& l = tree.nodes[static_cast<std::size_t>(n.left)];
  const auto& r = tree.nodes[static_cast<std::size_t>(n.right)];
  return (l.cover * conditional_expectation(tree, x, mask, n.left) +
          r.cover * conditional_expectation(tree, x, mask, n.right)) /
         (l.cover + r.cover);
}

inline double coalition_value(const drought::gbt::Ensemble& e, std::span<const double> x, std::uint32_t mask) {
  double sum = 0.0;
  for (const auto& t : e.trees) sum += conditional_expectation(t, x, mask);
  return std::log(e.base_score / (1.0 - e.base_score)) + e.eta * sum;
}

inline double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

inline std::vector<double> brute_shapley(const drought::gbt::Ensemble& e, std::span<const double> x) {
  const int m = static_cast<int>(x.size());
  std::vector<double> phi(x.size(), 0.0);
  for (int i = 0; i < m; ++i) {
    for (std::uint32_t s = 0; s < (1u << m); ++s) {
      if (s & (1u << i)) continue;
      const int size = __builtin_popcount(s);
      const double w = factorial(size) * factorial(m - size - 1) / factorial(m);
      phi[static_cast<std::size_t>(i)] += w * (coalition_value(e, x, s | (1u << i)) - coalition_value(e, x, s));
    }
  }
  return phi;
}

/// Shapley interaction index phi_ij (i != j), with the 1/2 factor so that a
/// row of the interaction matrix sums to phi_i.
inline double brute_interaction(const drought::gbt::Ensemble& e, std::span<const double> x, int i, int j) {
  const int m = static_cast<int>(x.size());
  double total = 0.0;
  for (std::uint32_t s = 0; s < (1u << m); ++s) {
    if (s & ((1u << i) | (1u << j))) continue;
    const int size = __builtin_popcount(s);
    const double w = factorial(size) * factorial(m - size - 2) / (2.0 * factorial(m - 1));
    const double delta = coalition_value(e, x, s | (1u << i) | (1u << j)) - coalition_value(e, x, s | (1u << i)) -
                         coalition_value(e, x, s | (1u << j)) + coalition_value(e, x, s);
    total += w * delta;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Random tree ensembles

/// A random ensemble over `features` columns with the given maximum depth;
/// every node carries a positive cover and covers add up exactly.
inline drought::gbt::Ensemble random_ensemble(std::mt19937_64& rng, int features, int trees, int max_depth) {
  std::uniform_int_distribution<int> pick_feature(0, features - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  drought::gbt::Ensemble e{0.2 + 0.6 * unit(rng), 0.1 + 0.9 * unit(rng), {}};
  for (int t = 0; t < trees; ++t) {
    drought::gbt::Tree tree;
    std::function<int(int, int)> grow = [&](int parent, int depth) -> int {
      const int id = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      tree.nodes.back().parent = parent;
      const bool split = depth < max_depth && (depth == 0 || unit(rng) < 0.75);
      if (!split) {
        tree.nodes[static_cast<std::size_t>(id)].weight = 4.0 * unit(rng) - 2.0;
        tree.nodes[static_cast<std::size_t>(id)].cover = 0.5 + 10.0 * unit(rng);
        return id;
      }
      const int f = pick_feature(rng);
      const double thr = 2.0 * unit(rng) - 1.0;
      const bool default_left = unit(rng) < 0.5;
      const int l = grow(id, depth + 1);
      const int r = grow(id, depth + 1);
      auto& n = tree.nodes[static_cast<std::size_t>(id)];
      n.feature = f;
      n.threshold = thr;
      n.default_left = default_left;
      n.left = l;
      n.right = r;
      n.cover = tree.nodes[static_cast<std::size_t>(l)].cover + tree.nodes[static_cast<std::size_t>(r)].cover;
      return id;
    };
    grow(-1, 0);
    e.trees.push_back(std::move(tree));
  }
  return e;
}

// ---------------------------------------------------------------------------
// Metrics by recount

struct Counts {
  long tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Counts recount(std::span<const double> p, std::span<const int> y, double threshold) {
  Counts c;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 1 && p[i] >= threshold) ++c.tp;
    if (y[i] == 0 && p[i] >= threshold) ++c.fp;
    if (y[i] == 0 && p[i] < threshold) ++c.tn;
    if (y[i] == 1 && p[i] < threshold) ++c.fn;
  }
  return c;
}

/// Average precision by enumerating every distinct score as a threshold and
/// recounting precision and recall from scratch at each.
inline double curve_average_precision(std::span<const double> scores, std::span<const int> y) {
  std::vector<double> thresholds(scores.begin(), scores.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  long positives = 0;
  for (int v : y) positives += v;
  double ap = 0.0, previous_recall = 0.0;
  for (double t : thresholds) {
    const auto c = recount(scores, y, t);
    const double r = static_cast<double>(c.tp) / static_cast<double>(positives);
    const double p = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 1.0;
    ap += (r - previous_recall) * p;
    previous_recall = r;
  }
  return ap;
}

// ---------------------------------------------------------------------------
// Gamma distribution by quadrature

/// CDF of gamma(shape, scale) by composite Simpson integration of the density.
inline double gamma_cdf(double x, double shape, double scale) {
  if (x <= 0.0) return 0.0;
  const int n = 20000;
  const double h = x / n;
  auto pdf = [&](double t) {
    if (t <= 0.0) return shape == 1.0 ? 1.0 / scale : 0.0;
    return std::exp((shape - 1.0) * std::log(t / scale) - t / scale - std::lgamma(shape)) / scale;
  };
  double s = pdf(0.0) + pdf(x);
  for (int i = 1; i < n; ++i) s += pdf(i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

inline double gamma_quantile(double p, double shape, double scale) {
  double lo = 0.0, hi = shape * scale * 20.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (gamma_cdf(mid, shape, scale) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Smallest x with f(x) >= p for a nondecreasing f, by bisection on [lo, hi].
template <typename F>
double invert_monotone(F f, double p, double lo, double hi) {
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace oracle
