#pragma once

// Class balancing for skewed training partitions: SMOTE oversampling of the
// positive (minority) class followed by random undersampling of the negatives.
// Only the training partition is ever passed through `balance`.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "drought/common.hpp"
#include "drought/features.hpp"

namespace drought::resample {

struct ResamplePlan {
  double trigger_threshold = 0.20;
  std::size_t smote_k = 5;
  double oversample_ratio = 0.5;   ///< minority / majority after SMOTE
  double undersample_ratio = 1.0;  ///< minority / majority after undersampling
  std::uint64_t seed = 0;

  void validate() const {
    if (!(trigger_threshold > 0.0 && trigger_threshold < 1.0)) {
      throw ValidationError("resample plan: trigger_threshold must lie in (0, 1)");
    }
    if (smote_k < 1) throw ValidationError("resample plan: smote_k must be at least 1");
    if (!(oversample_ratio > 0.0 && oversample_ratio <= undersample_ratio && undersample_ratio <= 1.0)) {
      throw ValidationError("resample plan: require 0 < oversample_ratio <= undersample_ratio <= 1");
    }
  }
};

[[nodiscard]] inline bool needs_resampling(std::span<const int> labels, double threshold = 0.20) {
  if (labels.empty()) throw ValidationError("needs_resampling: empty label vector");
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  return static_cast<double>(positives) / static_cast<double>(labels.size()) < threshold;
}

/// Provenance of one synthetic row: base + u * (neighbor - base).
struct SmoteOrigin {
  std::size_t base = 0;
  std::size_t neighbor = 0;
  double u = 0.0;
};

struct SmoteResult {
  Matrix rows;
  std::vector<SmoteOrigin> origins;
};

/// Indices of the k nearest rows to `target` by Euclidean distance over the
/// first `numeric` columns, excluding the target itself. Ties go to the lower index.
[[nodiscard]] inline std::vector<std::size_t> nearest_neighbors(const Matrix& rows, std::size_t target,
                                                                std::size_t numeric, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(rows.rows());
  auto t = rows.row(target);
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    if (i == target) continue;
    auto r = rows.row(i);
    double d = 0.0;
    for (std::size_t c = 0; c < numeric; ++c) d += (r[c] - t[c]) * (r[c] - t[c]);
    dist.push_back({d, i});
  }
  k = std::min(k, dist.size());
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(dist[i].second);
  return out;
}

/// Snaps every one-hot group to the indicator of its largest entry (lowest index on ties).
inline void snap_groups(std::span<double> row, const features::ColumnLayout& layout) {
  for (const auto& g : layout.groups) {
    auto block = row.subspan(g.first, g.size);
    auto best = static_cast<std::size_t>(std::max_element(block.begin(), block.end()) - block.begin());
    std::fill(block.begin(), block.end(), 0.0);
    block[best] = 1.0;
  }
}

/// Synthesizes `n_synthetic` rows on segments between minority rows and their
/// k nearest minority neighbours. Numeric columns are interpolated; one-hot
/// groups are interpolated and then snapped to a valid indicator vector.
[[nodiscard]] inline SmoteResult smote(const Matrix& minority, const features::ColumnLayout& layout, std::size_t k,
                                       std::size_t n_synthetic, std::uint64_t seed) {
  if (k < 1) throw ValidationError("smote: k must be at least 1");
  SmoteResult out{Matrix(0, minority.cols()), {}};
  if (n_synthetic == 0) return out;
  if (minority.rows() <= k) {
    throw ValidationError("smote: minority class has " + std::to_string(minority.rows()) +
                          " rows, more than k = " + std::to_string(k) + " required");
  }
  std::vector<std::vector<std::size_t>> neighbors(minority.rows());
  for (std::size_t i = 0; i < minority.rows(); ++i) neighbors[i] = nearest_neighbors(minority, i, layout.numeric, k);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_base(0, minority.rows() - 1);
  std::uniform_int_distribution<std::size_t> pick_neighbor(0, k - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> synthetic(minority.cols());
  for (std::size_t s = 0; s < n_synthetic; ++s) {
    const std::size_t base = pick_base(rng);
    const std::size_t nn = neighbors[base][pick_neighbor(rng)];
    const double u = unit(rng);
    auto x = minority.row(base);
    auto y = minority.row(nn);
    for (std::size_t c = 0; c < synthetic.size(); ++c) synthetic[c] = x[c] + u * (y[c] - x[c]);
    snap_groups(synthetic, layout);
    out.rows.append_row(synthetic);
    out.origins.push_back({base, nn, u});
  }
  return out;
}

/// Uniform sample of `target` distinct indices out of [0, count), in ascending order.
[[nodiscard]] inline std::vector<std::size_t> random_undersample(std::size_t count, std::size_t target,
                                                                 std::uint64_t seed) {
  if (target > count) {
    throw ValidationError("random_undersample: target " + std::to_string(target) + " exceeds the " +
                          std::to_string(count) + " available rows");
  }
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < target; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, count - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(target);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct BalancedSet {
  Matrix rows;
  std::vector<int> labels;
  std::size_t synthetic = 0;
};

/// Target counts (positives, negatives) after balancing.
[[nodiscard]] inline std::pair<std::size_t, std::size_t> balance_targets(std::size_t positives, std::size_t negatives,
                                                                         const ResamplePlan& plan) {
  const auto over = static_cast<std::size_t>(std::llround(plan.oversample_ratio * static_cast<double>(negatives)));
  const std::size_t pos_target = std::max(positives, over);
  const auto under = static_cast<std::size_t>(std::llround(static_cast<double>(pos_target) / plan.undersample_ratio));
  return {pos_target, std::min(negatives, under)};
}

/// Balances a training partition when its positive proportion is below the
/// plan's trigger; otherwise returns it unchanged. Output rows are shuffled.
[[nodiscard]] inline BalancedSet balance(const Matrix& train, std::span<const int> labels,
                                         const features::ColumnLayout& layout, const ResamplePlan& plan) {
  plan.validate();
  if (train.rows() != labels.size()) throw ValidationError("balance: matrix and labels differ in row count");
  if (!needs_resampling(labels, plan.trigger_threshold)) {
    return {train, std::vector<int>(labels.begin(), labels.end()), 0};
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  const auto [pos_target, neg_target] = balance_targets(pos.size(), neg.size(), plan);

  const Matrix minority = train.select_rows(pos);
  const auto synthetic =
      smote(minority, layout, plan.smote_k, pos_target - pos.size(), derive_seed(plan.seed, "smote"));
  const auto kept = random_undersample(neg.size(), neg_target, derive_seed(plan.seed, "undersample"));

  BalancedSet out{Matrix(0, train.cols()), {}, synthetic.rows.rows()};
  for (auto i : pos) {
    out.rows.append_row(train.row(i));
    out.labels.push_back(1);
  }
  for (std::size_t i = 0; i < synthetic.rows.rows(); ++i) {
    out.rows.append_row(synthetic.rows.row(i));
    out.labels.push_back(1);
  }
  for (auto i : kept) {
    out.rows.append_row(train.row(neg[i]));
    out.labels.push_back(0);
  }

  std::vector<std::size_t> order(out.labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(plan.seed, "shuffle"));
  std::shuffle(order.begin(), order.end(), rng);
  BalancedSet shuffled{out.rows.select_rows(order), {}, out.synthetic};
  for (auto i : order) shuffled.labels.push_back(out.labels[i]);
  return shuffled;
}

}  // namespace drought::resample
