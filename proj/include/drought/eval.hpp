#pragma once

// Classification metrics, stratified k-fold plans, and grid search that
// selects by mean F2, then mean PR-AUC, then grid declaration order.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "drought/common.hpp"
#include "drought/features.hpp"
#include "drought/gbt.hpp"
#include "drought/resample.hpp"

namespace drought::eval {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  [[nodiscard]] std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Hard labels: predicted positive when probability >= threshold.
[[nodiscard]] inline ConfusionCounts confusion(std::span<const double> probabilities, std::span<const int> labels,
                                               double threshold) {
  if (probabilities.size() != labels.size()) throw ValidationError("confusion: size mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool predicted = probabilities[i] >= threshold;
    if (labels[i] == 1)
      (predicted ? c.tp : c.fn)++;
    else
      (predicted ? c.fp : c.tn)++;
  }
  return c;
}

[[nodiscard]] inline double precision(const ConfusionCounts& c) {
  return c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

[[nodiscard]] inline double recall(const ConfusionCounts& c) {
  return c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

[[nodiscard]] inline double accuracy(const ConfusionCounts& c) {
  return c.total() == 0 ? 0.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

[[nodiscard]] inline double fbeta(const ConfusionCounts& c, double beta) {
  if (!(beta > 0.0)) throw ValidationError("fbeta: beta must be positive");
  if (c.tp == 0) return 0.0;
  const double p = precision(c);
  const double r = recall(c);
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (b2 * p + r);
}

/// Average precision: sum over recall steps of (R_i - R_{i-1}) * P_i, walking
/// scores from high to low. Equal scores are consumed as one block.
[[nodiscard]] inline double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("pr_auc: size mismatch");
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) throw ValidationError("pr_auc: no positive labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  double previous_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t block_tp = 0;
    std::size_t j = i;
    for (; j < order.size() && scores[order[j]] == scores[order[i]]; ++j) {
      if (labels[order[j]] == 1)
        ++block_tp;
      else
        ++fp;
    }
    tp += block_tp;
    if (block_tp > 0) {
      const double r = static_cast<double>(tp) / static_cast<double>(positives);
      const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
      ap += (r - previous_recall) * p;
      previous_recall = r;
    }
    i = j;
  }
  return ap;
}

struct MetricsReport {
  Category category = Category::agriculture;
  double ratio = 0.0;  ///< positives / rows over the whole design matrix
  double accuracy = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double f2 = 0.0;
  double pr_auc = 0.0;
  double threshold = 0.5;
  ConfusionCounts counts;
};

[[nodiscard]] inline MetricsReport metrics_from(std::span<const double> probabilities, std::span<const int> labels,
                                                double threshold) {
  MetricsReport m;
  m.threshold = threshold;
  m.counts = confusion(probabilities, labels, threshold);
  m.accuracy = accuracy(m.counts);
  m.recall = recall(m.counts);
  m.precision = precision(m.counts);
  m.f2 = fbeta(m.counts, 2.0);
  m.pr_auc = m.counts.tp + m.counts.fn > 0 ? pr_auc(probabilities, labels) : 0.0;
  return m;
}

[[nodiscard]] inline MetricsReport evaluate(const gbt::Ensemble& ensemble, const Matrix& rows,
                                            std::span<const int> labels, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("evaluate: threshold must lie in (0, 1)");
  const auto probabilities = gbt::predict(ensemble, rows);
  return metrics_from(probabilities, labels, threshold);
}

// ---------------------------------------------------------------------------
// Stratified k-fold

struct FoldPlan {
  std::size_t k = 10;
  std::vector<std::vector<std::size_t>> folds;  ///< sorted row indices per fold
  std::uint64_t seed = 0;
};

/// Positives are dealt round-robin over the folds after a seeded shuffle;
/// negatives continue the rotation so fold sizes stay within one of each other.
[[nodiscard]] inline FoldPlan stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("stratified_kfold: k must be at least 2");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  if (pos.size() < k) {
    throw ValidationError("stratified_kfold: " + std::to_string(pos.size()) + " positives, fewer than " +
                          std::to_string(k) + " folds");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  FoldPlan plan{k, std::vector<std::vector<std::size_t>>(k), seed};
  for (std::size_t i = 0; i < pos.size(); ++i) plan.folds[i % k].push_back(pos[i]);
  for (std::size_t j = 0; j < neg.size(); ++j) plan.folds[(pos.size() + j) % k].push_back(neg[j]);
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

// ---------------------------------------------------------------------------
// Grid search

struct FoldScore {
  std::size_t grid_index = 0;
  std::size_t fold = 0;
  MetricsReport metrics;
};

struct GridSearchResult {
  std::vector<gbt::TrainConfig> grid;
  std::vector<FoldScore> scores;  ///< grid-major, then fold
  std::vector<double> mean_f2;
  std::vector<double> mean_pr_auc;
  std::size_t best = 0;

  [[nodiscard]] const gbt::TrainConfig& best_config() const { return grid.at(best); }
};

/// Index of the best grid point: highest mean F2, then highest mean PR-AUC,
/// then earliest declared.
[[nodiscard]] inline std::size_t select_best(std::span<const double> mean_f2, std::span<const double> mean_pr_auc) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < mean_f2.size(); ++i) {
    if (mean_f2[i] > mean_f2[best] || (mean_f2[i] == mean_f2[best] && mean_pr_auc[i] > mean_pr_auc[best])) best = i;
  }
  return best;
}

/// Cross-validated grid search. When `resampling` is set, each fold's training
/// rows are balanced (with a fold-specific seed) before fitting; held-out fold
/// rows are never resampled.
[[nodiscard]] inline GridSearchResult grid_search(const Matrix& x, std::span<const int> labels,
                                                  const features::ColumnLayout& layout,
                                                  std::span<const gbt::TrainConfig> grid, const FoldPlan& plan,
                                                  const std::optional<resample::ResamplePlan>& resampling,
                                                  double threshold = 0.5) {
  if (grid.empty()) throw ValidationError("grid_search: empty grid");
  for (const auto& c : grid) c.validate();
  GridSearchResult result;
  result.grid.assign(grid.begin(), grid.end());
  std::vector<std::vector<MetricsReport>> table(grid.size(), std::vector<MetricsReport>(plan.folds.size()));

  std::vector<int> fold_of(labels.size(), -1);
  for (std::size_t f = 0; f < plan.folds.size(); ++f)
    for (auto i : plan.folds[f]) fold_of[i] = static_cast<int>(f);

  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    std::vector<std::size_t> train_rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (fold_of[i] != static_cast<int>(f)) train_rows.push_back(i);
    Matrix train_x = x.select_rows(train_rows);
    std::vector<int> train_y = select<int>(labels, train_rows);
    if (resampling) {
      auto fold_plan = *resampling;
      fold_plan.seed = derive_seed(resampling->seed, "fold", f);
      auto balanced = resample::balance(train_x, train_y, layout, fold_plan);
      train_x = std::move(balanced.rows);
      train_y = std::move(balanced.labels);
    }
    const Matrix held_x = x.select_rows(plan.folds[f]);
    const std::vector<int> held_y = select<int>(labels, plan.folds[f]);
    const gbt::ColumnIndex index(train_x);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const auto model = gbt::train(train_x, index, train_y, grid[g]);
      table[g][f] = metrics_from(gbt::predict(model, held_x), held_y, threshold);
    }
  }

  for (std::size_t g = 0; g < grid.size(); ++g) {
    double f2 = 0.0, ap = 0.0;
    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
      result.scores.push_back({g, f, table[g][f]});
      f2 += table[g][f].f2;
      ap += table[g][f].pr_auc;
    }
    result.mean_f2.push_back(f2 / static_cast<double>(plan.folds.size()));
    result.mean_pr_auc.push_back(ap / static_cast<double>(plan.folds.size()));
  }
  result.best = select_best(result.mean_f2, result.mean_pr_auc);
  return result;
}

struct GridAxes {
  std::vector<int> max_depth{3, 5, 7};
  std::vector<double> gamma{0.0, 1.0, 5.0};
  std::vector<double> lambda{1.0, 10.0};
  /// A value <= 0 stands for the negative/positive ratio of the training labels.
  std::vector<double> scale_pos_weight{1.0, 0.0};
};

/// Cartesian grid in declaration order (max_depth slowest, scale_pos_weight fastest).
[[nodiscard]] inline std::vector<gbt::TrainConfig> expand_grid(const GridAxes& axes, const gbt::TrainConfig& base,
                                                               double negative_positive_ratio) {
  std::vector<gbt::TrainConfig> grid;
  for (int depth : axes.max_depth)
    for (double gamma : axes.gamma)
      for (double lambda : axes.lambda)
        for (double spw : axes.scale_pos_weight) {
          auto c = base;
          c.max_depth = depth;
          c.gamma = gamma;
          c.lambda = lambda;
          c.scale_pos_weight = spw > 0.0 ? spw : negative_positive_ratio;
          grid.push_back(c);
        }
  return grid;
}

}  // namespace drought::eval
