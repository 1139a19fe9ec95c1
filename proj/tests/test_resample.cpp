#include <gtest/gtest.h>

#include <random>
#include <set>

#include "drought/resample.hpp"

using namespace drought;
using namespace drought::resample;

namespace {

std::vector<int> labels_with(std::size_t positives, std::size_t total) {
  std::vector<int> y(total, 0);
  std::fill(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(positives), 1);
  return y;
}

/// Two numeric columns plus one indicator group of three classes.
features::ColumnLayout mixed_layout() { return {2, {{"lc", 2, 3}}}; }

Matrix mixed_rows(std::size_t n, std::uint64_t seed, double shift = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::uniform_int_distribution<std::size_t> cls(0, 2);
  Matrix x(n, 5);
  for (std::size_t r = 0; r < n; ++r) {
    x(r, 0) = z(rng) + shift;
    x(r, 1) = z(rng) - shift;
    x(r, 2 + cls(rng)) = 1.0;
  }
  return x;
}

}  // namespace

TEST(NeedsResampling, Boundaries) {
  EXPECT_TRUE(needs_resampling(labels_with(110, 1000)));
  EXPECT_FALSE(needs_resampling(labels_with(500, 1000)));
  EXPECT_FALSE(needs_resampling(labels_with(200, 1000)));
  EXPECT_TRUE(needs_resampling(labels_with(199, 1000)));
  EXPECT_THROW((void)needs_resampling(std::vector<int>{}), ValidationError);
}

TEST(ResamplePlan, Validation) {
  ResamplePlan p;
  EXPECT_NO_THROW(p.validate());
  p.oversample_ratio = 0.8;
  p.undersample_ratio = 0.6;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.smote_k = 0;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.undersample_ratio = 1.5;
  EXPECT_THROW(p.validate(), ValidationError);
}

TEST(Smote, TwoPointSegment) {
  Matrix m(2, 2);
  m(1, 0) = 1.0;
  m(1, 1) = 1.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto out = smote(m, {2, {}}, 1, 1, seed);
    ASSERT_EQ(out.rows.rows(), 1u);
    const double t = out.rows(0, 0);
    EXPECT_EQ(out.rows(0, 1), t);
    EXPECT_GE(t, 0.0);
    EXPECT_LE(t, 1.0);
  }
}

TEST(Smote, ZeroSyntheticRowsIsEmpty) {
  Matrix m(2, 2);
  auto out = smote(m, {2, {}}, 5, 0, 1);
  EXPECT_EQ(out.rows.rows(), 0u);
  EXPECT_TRUE(out.origins.empty());
}

TEST(Smote, TooFewMinorityRows) {
  Matrix m(5, 2);
  EXPECT_THROW((void)smote(m, {2, {}}, 5, 3, 1), ValidationError);
}

TEST(Smote, RowsAreConvexCombinationsOfNeighbours) {
  const auto layout = mixed_layout();
  const auto m = mixed_rows(40, 3);
  const std::size_t k = 5;
  auto out = smote(m, layout, k, 500, 11);
  ASSERT_EQ(out.rows.rows(), 500u);
  double lo[2] = {1e9, 1e9}, hi[2] = {-1e9, -1e9};
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      lo[c] = std::min(lo[c], m(r, c));
      hi[c] = std::max(hi[c], m(r, c));
    }
  for (std::size_t s = 0; s < out.rows.rows(); ++s) {
    const auto& o = out.origins[s];
    EXPECT_GE(o.u, 0.0);
    EXPECT_LE(o.u, 1.0);
    // Neighbour is among the k nearest by brute-force distance rank.
    std::size_t closer = 0;
    auto d = [&](std::size_t i) {
      return std::hypot(m(i, 0) - m(o.base, 0), m(i, 1) - m(o.base, 1));
    };
    for (std::size_t i = 0; i < m.rows(); ++i)
      if (i != o.base && d(i) < d(o.neighbor)) ++closer;
    EXPECT_LT(closer, k);
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_NEAR(out.rows(s, c), m(o.base, c) + o.u * (m(o.neighbor, c) - m(o.base, c)), 1e-12);
      EXPECT_GE(out.rows(s, c), lo[c] - 1e-12);
      EXPECT_LE(out.rows(s, c), hi[c] + 1e-12);
    }
    double group_sum = 0.0;
    for (std::size_t c = 2; c < 5; ++c) {
      EXPECT_TRUE(out.rows(s, c) == 0.0 || out.rows(s, c) == 1.0);
      group_sum += out.rows(s, c);
    }
    EXPECT_EQ(group_sum, 1.0);
  }
  EXPECT_EQ(smote(m, layout, k, 50, 11).rows, smote(m, layout, k, 50, 11).rows);
}

TEST(Smote, IndicatorColumnsDoNotAffectNeighbours) {
  Matrix m(3, 4);
  // Row 1 is numerically nearest to row 0 but differs in class.
  m(0, 0) = 0.0; m(0, 2) = 1.0;
  m(1, 0) = 0.1; m(1, 3) = 1.0;
  m(2, 0) = 5.0; m(2, 2) = 1.0;
  EXPECT_EQ(nearest_neighbors(m, 0, 1, 1), std::vector<std::size_t>{1});
}

TEST(RandomUndersample, CountsAndDeterminism) {
  auto kept = random_undersample(800, 400, 5);
  EXPECT_EQ(kept.size(), 400u);
  EXPECT_EQ(std::set<std::size_t>(kept.begin(), kept.end()).size(), 400u);
  EXPECT_LT(kept.back(), 800u);
  EXPECT_EQ(kept, random_undersample(800, 400, 5));
  EXPECT_NE(kept, random_undersample(800, 400, 6));
  auto all = random_undersample(50, 50, 9);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
  EXPECT_THROW((void)random_undersample(10, 11, 1), ValidationError);
}

TEST(RandomUndersample, RoughlyUniform) {
  std::vector<int> hits(20, 0);
  for (std::uint64_t seed = 0; seed < 4000; ++seed)
    for (auto i : random_undersample(20, 5, seed)) ++hits[i];
  // Expected 1000 hits each; binomial sd about 27.
  for (int h : hits) EXPECT_NEAR(h, 1000, 150);
}

TEST(Balance, SkewedPartitionReachesTargetCounts) {
  const auto layout = mixed_layout();
  Matrix x = mixed_rows(1000, 7);
  auto y = labels_with(100, 1000);
  ResamplePlan plan;
  plan.seed = 42;
  auto out = balance(x, y, layout, plan);
  const auto pos = static_cast<std::size_t>(std::count(out.labels.begin(), out.labels.end(), 1));
  EXPECT_EQ(pos, 450u);
  EXPECT_EQ(out.labels.size() - pos, 450u);
  EXPECT_EQ(out.synthetic, 350u);
  EXPECT_EQ(out.rows.rows(), out.labels.size());

  // Every original positive row survives, and the negatives are originals.
  std::multiset<std::vector<double>> positives_out, negatives_out;
  for (std::size_t r = 0; r < out.rows.rows(); ++r) {
    std::vector<double> row(out.rows.row(r).begin(), out.rows.row(r).end());
    (out.labels[r] == 1 ? positives_out : negatives_out).insert(row);
  }
  std::multiset<std::vector<double>> negatives_in;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::vector<double> row(x.row(r).begin(), x.row(r).end());
    if (y[r] == 1)
      EXPECT_TRUE(positives_out.count(row) > 0);
    else
      negatives_in.insert(row);
  }
  for (const auto& row : negatives_out) EXPECT_TRUE(negatives_in.count(row) > 0);

  auto again = balance(x, y, layout, plan);
  EXPECT_EQ(again.rows, out.rows);
  EXPECT_EQ(again.labels, out.labels);
}

TEST(Balance, UntriggeredIsIdentity) {
  const auto layout = mixed_layout();
  Matrix x = mixed_rows(1000, 8);
  auto y = labels_with(400, 1000);
  auto out = balance(x, y, layout, ResamplePlan{});
  EXPECT_EQ(out.rows, x);
  EXPECT_EQ(out.labels, y);
  EXPECT_EQ(out.synthetic, 0u);
}

TEST(Balance, ClassRatioMatchesPlan) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<std::size_t> pos_count(10, 150);
  std::uniform_real_distribution<double> ratio(0.1, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1000, p = pos_count(rng);
    ResamplePlan plan;
    plan.undersample_ratio = ratio(rng);
    plan.oversample_ratio = plan.undersample_ratio * ratio(rng);
    plan.seed = static_cast<std::uint64_t>(trial);
    auto out = balance(mixed_rows(n, 100 + static_cast<std::uint64_t>(trial)), labels_with(p, n), mixed_layout(), plan);
    const auto pos = static_cast<double>(std::count(out.labels.begin(), out.labels.end(), 1));
    const double neg = static_cast<double>(out.labels.size()) - pos;
    if (neg < static_cast<double>(n - p)) {
      EXPECT_NEAR(pos / neg, plan.undersample_ratio, 1.0 / neg + 1e-12);
    }
    EXPECT_GE(pos, static_cast<double>(p));
  }
}
