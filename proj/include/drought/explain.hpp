#pragma once

// Path-dependent TreeSHAP attributions on the margin (log-odds) scale.
//
// The value of a feature subset S for one row is the cover-weighted
// expectation of the tree output: at a split on a feature in S the row's own
// branch is followed, otherwise both branches are averaged by their covers.
// Exact Shapley values of that game are computed in polynomial time by
// tracking, along each root-to-leaf path, the proportion of subsets of every
// size that flow down the path (Lundberg, Erion & Lee's path algorithm).
//
// Pairwise interaction values come from conditioning: phi_ij is half the
// difference between feature j's attribution with i forced present and with i
// forced absent. The main effect is phi_ii = phi_i - sum_{j != i} phi_ij.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "drought/common.hpp"
#include "drought/gbt.hpp"

namespace drought::explain {

struct ShapMatrix {
  double base_value = 0.0;  ///< cover-weighted expected margin
  Matrix values;            ///< rows x features
};

struct MainEffectSeries {
  std::size_t feature = 0;
  std::vector<double> feature_values;
  std::vector<double> main_effects;
};

struct FeatureRanking {
  std::vector<std::size_t> order;   ///< feature indices, most important first
  std::vector<double> mean_abs;     ///< indexed by feature
};

namespace detail {

struct PathElement {
  int feature = -1;
  double zero_fraction = 0.0;
  double one_fraction = 0.0;
  double weight = 0.0;
};

inline void extend_path(std::vector<PathElement>& path, int depth, double zero_fraction, double one_fraction,
                        int feature) {
  const auto d = static_cast<std::size_t>(depth);
  path[d] = {feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
  for (int i = depth - 1; i >= 0; --i) {
    const auto u = static_cast<std::size_t>(i);
    path[u + 1].weight += one_fraction * path[u].weight * (i + 1) / static_cast<double>(depth + 1);
    path[u].weight = zero_fraction * path[u].weight * (depth - i) / static_cast<double>(depth + 1);
  }
}

inline void unwind_path(std::vector<PathElement>& path, int depth, int index) {
  const double one_fraction = path[static_cast<std::size_t>(index)].one_fraction;
  const double zero_fraction = path[static_cast<std::size_t>(index)].zero_fraction;
  double next_one_portion = path[static_cast<std::size_t>(depth)].weight;
  for (int i = depth - 1; i >= 0; --i) {
    auto& el = path[static_cast<std::size_t>(i)];
    if (one_fraction != 0.0) {
      const double tmp = el.weight;
      el.weight = next_one_portion * (depth + 1) / ((i + 1) * one_fraction);
      next_one_portion = tmp - el.weight * zero_fraction * (depth - i) / static_cast<double>(depth + 1);
    } else {
      el.weight = el.weight * (depth + 1) / (zero_fraction * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    auto& to = path[static_cast<std::size_t>(i)];
    const auto& from = path[static_cast<std::size_t>(i + 1)];
    to.feature = from.feature;
    to.zero_fraction = from.zero_fraction;
    to.one_fraction = from.one_fraction;
  }
}

/// Total permutation weight of the path with element `index` removed.
[[nodiscard]] inline double unwound_path_sum(const std::vector<PathElement>& path, int depth, int index) {
  const double one_fraction = path[static_cast<std::size_t>(index)].one_fraction;
  const double zero_fraction = path[static_cast<std::size_t>(index)].zero_fraction;
  double next_one_portion = path[static_cast<std::size_t>(depth)].weight;
  double total = 0.0;
  for (int i = depth - 1; i >= 0; --i) {
    const auto& el = path[static_cast<std::size_t>(i)];
    if (one_fraction != 0.0) {
      const double tmp = next_one_portion * (depth + 1) / ((i + 1) * one_fraction);
      total += tmp;
      next_one_portion = el.weight - tmp * zero_fraction * ((depth - i) / static_cast<double>(depth + 1));
    } else if (zero_fraction != 0.0) {
      total += (el.weight / zero_fraction) / ((depth - i) / static_cast<double>(depth + 1));
    }
  }
  return total;
}

/// Conditioning mode for interaction values: 0 none, +1 feature forced
/// present, -1 feature forced absent.
struct Condition {
  int sign = 0;
  int feature = -1;
};

class TreeShap {
public:
  TreeShap(const gbt::Tree& tree, std::span<const double> x, std::span<double> phi, double scale, Condition cond)
      : tree_(tree), x_(x), phi_(phi), scale_(scale), cond_(cond) {}

  void run() {
    const auto max_depth = static_cast<std::size_t>(tree_.depth()) + 2;
    std::vector<PathElement> path(max_depth);
    recurse(0, 0, path, 1.0, 1.0, -1, 1.0);
  }

private:
  void recurse(int node_id, int depth, std::vector<PathElement> path, double zero_fraction, double one_fraction,
               int feature, double condition_fraction) {
    if (condition_fraction == 0.0) return;
    if (cond_.sign == 0 || cond_.feature != feature) extend_path(path, depth, zero_fraction, one_fraction, feature);

    const auto& node = tree_.nodes[static_cast<std::size_t>(node_id)];
    if (node.is_leaf()) {
      for (int i = 1; i <= depth; ++i) {
        const auto& el = path[static_cast<std::size_t>(i)];
        const double w = unwound_path_sum(path, depth, i);
        phi_[static_cast<std::size_t>(el.feature)] +=
            w * (el.one_fraction - el.zero_fraction) * node.weight * condition_fraction * scale_;
      }
      return;
    }

    const int hot = gbt::Tree::next(node, x_);
    const int cold = hot == node.left ? node.right : node.left;
    const double cover = node.cover;
    const double hot_zero = tree_.nodes[static_cast<std::size_t>(hot)].cover / cover;
    const double cold_zero = tree_.nodes[static_cast<std::size_t>(cold)].cover / cover;
    double incoming_zero = 1.0;
    double incoming_one = 1.0;

    // A feature already on the path is undone so it is counted once.
    int path_index = 0;
    for (; path_index <= depth; ++path_index)
      if (path[static_cast<std::size_t>(path_index)].feature == node.feature) break;
    if (path_index != depth + 1) {
      incoming_zero = path[static_cast<std::size_t>(path_index)].zero_fraction;
      incoming_one = path[static_cast<std::size_t>(path_index)].one_fraction;
      unwind_path(path, depth, path_index);
      --depth;
    }

    double hot_condition = condition_fraction;
    double cold_condition = condition_fraction;
    if (cond_.sign > 0 && node.feature == cond_.feature) {
      cold_condition = 0.0;
      --depth;
    } else if (cond_.sign < 0 && node.feature == cond_.feature) {
      hot_condition *= hot_zero;
      cold_condition *= cold_zero;
      --depth;
    }
    recurse(hot, depth + 1, path, hot_zero * incoming_zero, incoming_one, node.feature, hot_condition);
    recurse(cold, depth + 1, std::move(path), cold_zero * incoming_zero, 0.0, node.feature, cold_condition);
  }

  const gbt::Tree& tree_;
  std::span<const double> x_;
  std::span<double> phi_;
  double scale_;
  Condition cond_;
};

inline void check_covers(const gbt::Ensemble& ensemble) {
  for (std::size_t t = 0; t < ensemble.trees.size(); ++t) {
    for (std::size_t i = 0; i < ensemble.trees[t].nodes.size(); ++i) {
      if (!(ensemble.trees[t].nodes[i].cover > 0.0)) {
        throw NumericalError("corrupt model: tree " + std::to_string(t) + " node " + std::to_string(i) +
                             " has non-positive cover");
      }
    }
  }
}

inline void attribute_row(const gbt::Ensemble& ensemble, std::span<const double> x, std::span<double> phi,
                          Condition cond = {}) {
  for (const auto& tree : ensemble.trees) TreeShap(tree, x, phi, ensemble.eta, cond).run();
}

}  // namespace detail

/// Cover-weighted mean output of one tree.
[[nodiscard]] inline double expected_value(const gbt::Tree& tree, int node_id = 0) {
  const auto& n = tree.nodes[static_cast<std::size_t>(node_id)];
  if (n.is_leaf()) return n.weight;
  const auto& l = tree.nodes[static_cast<std::size_t>(n.left)];
  const auto& r = tree.nodes[static_cast<std::size_t>(n.right)];
  return (l.cover * expected_value(tree, n.left) + r.cover * expected_value(tree, n.right)) / n.cover;
}

[[nodiscard]] inline double base_value(const gbt::Ensemble& ensemble) {
  double sum = 0.0;
  for (const auto& t : ensemble.trees) sum += expected_value(t);
  return ensemble.base_margin() + ensemble.eta * sum;
}

[[nodiscard]] inline ShapMatrix shap_values(const gbt::Ensemble& ensemble, const Matrix& rows) {
  detail::check_covers(ensemble);
  ShapMatrix out{base_value(ensemble), Matrix(rows.rows(), rows.cols())};
  for (std::size_t r = 0; r < rows.rows(); ++r) detail::attribute_row(ensemble, rows.row(r), out.values.row(r));
  return out;
}

/// Full interaction matrix (features x features) for one row. Off-diagonal
/// entries are phi_ij; the diagonal holds the main effects.
[[nodiscard]] inline Matrix shap_interactions(const gbt::Ensemble& ensemble, std::span<const double> x) {
  detail::check_covers(ensemble);
  const std::size_t m = x.size();
  Matrix out(m, m);
  std::vector<double> phi(m, 0.0), on(m), off(m);
  detail::attribute_row(ensemble, x, phi);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(on.begin(), on.end(), 0.0);
    std::fill(off.begin(), off.end(), 0.0);
    detail::attribute_row(ensemble, x, on, {+1, static_cast<int>(i)});
    detail::attribute_row(ensemble, x, off, {-1, static_cast<int>(i)});
    double diagonal = phi[i];
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      out(i, j) = 0.5 * (on[j] - off[j]);
      diagonal -= out(i, j);
    }
    out(i, i) = diagonal;
  }
  return out;
}

/// Main effect phi_ii of one feature for every row.
[[nodiscard]] inline MainEffectSeries main_effects(const gbt::Ensemble& ensemble, const Matrix& rows,
                                                   std::size_t feature) {
  detail::check_covers(ensemble);
  if (feature >= rows.cols()) throw ValidationError("main_effects: feature index out of range");
  const std::size_t m = rows.cols();
  MainEffectSeries out{feature, {}, {}};
  std::vector<double> phi(m), on(m), off(m);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    std::fill(phi.begin(), phi.end(), 0.0);
    std::fill(on.begin(), on.end(), 0.0);
    std::fill(off.begin(), off.end(), 0.0);
    const auto x = rows.row(r);
    detail::attribute_row(ensemble, x, phi);
    detail::attribute_row(ensemble, x, on, {+1, static_cast<int>(feature)});
    detail::attribute_row(ensemble, x, off, {-1, static_cast<int>(feature)});
    double value = phi[feature];
    for (std::size_t j = 0; j < m; ++j)
      if (j != feature) value -= 0.5 * (on[j] - off[j]);
    out.feature_values.push_back(x[feature]);
    out.main_effects.push_back(value);
  }
  return out;
}

/// Features ordered by mean |phi|, descending; ties by feature index.
[[nodiscard]] inline FeatureRanking rank_features(const ShapMatrix& shap) {
  const auto& v = shap.values;
  FeatureRanking ranking;
  ranking.mean_abs.assign(v.cols(), 0.0);
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < v.cols(); ++c) ranking.mean_abs[c] += std::abs(v(r, c));
  if (v.rows() > 0)
    for (auto& m : ranking.mean_abs) m /= static_cast<double>(v.rows());
  ranking.order.resize(v.cols());
  std::iota(ranking.order.begin(), ranking.order.end(), 0);
  std::stable_sort(ranking.order.begin(), ranking.order.end(),
                   [&](std::size_t a, std::size_t b) { return ranking.mean_abs[a] > ranking.mean_abs[b]; });
  return ranking;
}

struct ScatterSeries {
  std::size_t feature = 0;
  std::vector<double> feature_values;
  std::vector<double> shap_values;
};

struct ShapSummary {
  FeatureRanking ranking;            ///< over all features
  std::vector<ScatterSeries> scatter;  ///< plotted (numeric) features only, in ranking order
};

/// Ranking over every feature, plus per-row (value, phi) scatter data for the
/// first `plotted` columns only (the SPI columns; indicator columns are left
/// out of plot data but keep their attributions).
[[nodiscard]] inline ShapSummary summarize(const ShapMatrix& shap, const Matrix& rows, std::size_t plotted) {
  if (shap.values.rows() != rows.rows() || shap.values.cols() != rows.cols()) {
    throw ValidationError("summarize: attribution and feature matrices differ in shape");
  }
  ShapSummary out{rank_features(shap), {}};
  for (auto f : out.ranking.order) {
    if (f >= plotted) continue;
    ScatterSeries s{f, {}, {}};
    for (std::size_t r = 0; r < rows.rows(); ++r) {
      s.feature_values.push_back(rows(r, f));
      s.shap_values.push_back(shap.values(r, f));
    }
    out.scatter.push_back(std::move(s));
  }
  return out;
}

}  // namespace drought::explain
