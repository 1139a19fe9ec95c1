#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <sstream>

#include "drought/gbt.hpp"

using namespace drought;
using namespace drought::gbt;

namespace {

Matrix column(std::initializer_list<double> values) {
  Matrix m(values.size(), 1);
  std::size_t i = 0;
  for (double v : values) m(i++, 0) = v;
  return m;
}

struct Toy {
  Matrix x;
  std::vector<int> y;
};

/// Two informative features and one noise feature; label is a deterministic
/// function of the first two.
Toy separable_toy(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Toy t{Matrix(n, 3), {}};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) t.x(i, c) = unit(rng);
    t.y.push_back(t.x(i, 0) + 0.5 * t.x(i, 1) > 0.1 ? 1 : 0);
  }
  return t;
}

void route_sums(const Tree& tree, const Matrix& x, std::span<const double> g, std::span<const double> h,
                std::vector<double>& node_g, std::vector<double>& node_h) {
  node_g.assign(tree.nodes.size(), 0.0);
  node_h.assign(tree.nodes.size(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    int id = 0;
    while (true) {
      node_g[static_cast<std::size_t>(id)] += g[r];
      node_h[static_cast<std::size_t>(id)] += h[r];
      const auto& n = tree.nodes[static_cast<std::size_t>(id)];
      if (n.is_leaf()) break;
      id = Tree::next(n, x.row(r));
    }
  }
}

}  // namespace

TEST(GradHess, UnweightedPositive) {
  const std::vector<int> y{1};
  const std::vector<double> m{0.0};
  auto gh = grad_hess(y, m, 1.0);
  EXPECT_EQ(gh.grad[0], -0.5);
  EXPECT_EQ(gh.hess[0], 0.25);
}

TEST(GradHess, UnweightedNegative) {
  const std::vector<int> y{0};
  const std::vector<double> m{0.0};
  auto gh = grad_hess(y, m, 1.0);
  EXPECT_EQ(gh.grad[0], 0.5);
  EXPECT_EQ(gh.hess[0], 0.25);
}

TEST(GradHess, PositiveWeightScalesLinearly) {
  const std::vector<int> y{1, 0, 1};
  const std::vector<double> m{0.0, 0.3, -1.7};
  auto base = grad_hess(y, m, 1.0);
  auto weighted = grad_hess(y, m, 3.0);
  EXPECT_EQ(weighted.grad[0], -1.5);
  EXPECT_EQ(weighted.hess[0], 0.75);
  EXPECT_EQ(weighted.grad[1], base.grad[1]);
  EXPECT_EQ(weighted.hess[1], base.hess[1]);
  EXPECT_DOUBLE_EQ(weighted.grad[2], 3.0 * base.grad[2]);
  EXPECT_DOUBLE_EQ(weighted.hess[2], 3.0 * base.hess[2]);
}

TEST(LeafWeight, HandValues) {
  EXPECT_EQ(leaf_weight(0.0, 1.0, 1.0), 0.0);
  EXPECT_NEAR(leaf_weight(-1.0, 1.0, 1.0), 0.5, 1e-12);
  double previous = std::abs(leaf_weight(-3.0, 2.0, 0.0));
  for (double lambda = 0.5; lambda < 1e6; lambda *= 2.0) {
    const double w = std::abs(leaf_weight(-3.0, 2.0, lambda));
    EXPECT_LT(w, previous);
    previous = w;
  }
  EXPECT_LT(previous, 1e-5);
}

TEST(SplitGain, HandValues) {
  EXPECT_NEAR(split_gain(-2.0, 1.0, 2.0, 1.0, 1.0, 0.0), 2.0, 1e-12);
  // Identical children: the split only pays for extra regularization.
  EXPECT_NEAR(split_gain(0.7, 1.3, 0.7, 1.3, 1.0, 0.0), 0.5 * (2.0 * 0.7 * 0.7 / 2.3 - 1.4 * 1.4 / 3.6), 1e-12);
  EXPECT_NEAR(split_gain(0.0, 1.3, 0.0, 1.3, 1.0, 0.4), -0.4, 1e-12);
}

TEST(TrainConfig, RejectsInvalidValues) {
  TrainConfig c;
  c.max_depth = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.eta = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.scale_pos_weight = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.base_score = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(BuildTree, UniformLabelsGiveSingleLeaf) {
  const Matrix x = column({1, 2, 3, 4});
  const std::vector<int> y{1, 1, 1, 1};
  const std::vector<double> m(4, 0.0);
  auto gh = grad_hess(y, m, 1.0);
  TrainConfig c;
  c.min_child_weight = 0.0;
  auto tree = build_tree(x, gh.grad, gh.hess, c);
  ASSERT_EQ(tree.nodes.size(), 1u);
  // G = -2, H = 1, lambda = 1.
  EXPECT_NEAR(tree.nodes[0].weight, 1.0, 1e-12);
  EXPECT_EQ(tree.nodes[0].cover, 1.0);
}

TEST(BuildTree, FourPointExampleSplitsAtTwoAndAHalf) {
  // Candidates 1.5, 2.5, 3.5 have gains 0.1714, 0.6667, 0.1714 by hand.
  const Matrix x = column({1, 2, 3, 4});
  const std::vector<int> y{0, 0, 1, 1};
  const std::vector<double> m(4, 0.0);
  auto gh = grad_hess(y, m, 1.0);
  TrainConfig c;
  c.max_depth = 1;
  c.lambda = 1.0;
  c.gamma = 0.0;
  c.min_child_weight = 0.0;
  auto tree = build_tree(x, gh.grad, gh.hess, c);
  ASSERT_EQ(tree.nodes.size(), 3u);
  EXPECT_EQ(tree.nodes[0].feature, 0);
  EXPECT_NEAR(tree.nodes[0].threshold, 2.5, 1e-12);
  EXPECT_NEAR(tree.nodes[0].gain, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(tree.nodes[1].weight, -1.0 / 1.5, 1e-12);
  EXPECT_NEAR(tree.nodes[2].weight, 1.0 / 1.5, 1e-12);
}

TEST(BuildTree, MinChildWeightBlocksLightChildren) {
  const Matrix x = column({1, 2, 3, 4});
  const std::vector<int> y{0, 0, 1, 1};
  const std::vector<double> m(4, 0.0);
  auto gh = grad_hess(y, m, 1.0);
  TrainConfig c;  // min_child_weight 1.0 > 0.5 available per child
  auto tree = build_tree(x, gh.grad, gh.hess, c);
  EXPECT_EQ(tree.nodes.size(), 1u);
}

TEST(BuildTree, GammaPrunesWeakSplits) {
  const Matrix x = column({1, 2, 3, 4});
  const std::vector<int> y{0, 0, 1, 1};
  const std::vector<double> m(4, 0.0);
  auto gh = grad_hess(y, m, 1.0);
  TrainConfig c;
  c.min_child_weight = 0.0;
  c.gamma = 0.7;  // exceeds the best gain of 2/3
  EXPECT_EQ(build_tree(x, gh.grad, gh.hess, c).nodes.size(), 1u);
}

TEST(BuildTree, TiesGoToLowestFeatureThenThreshold) {
  // Two identical columns: the first must win.
  Matrix x(4, 2);
  for (std::size_t i = 0; i < 4; ++i) x(i, 0) = x(i, 1) = static_cast<double>(i + 1);
  const std::vector<int> y{0, 0, 1, 1};
  auto gh = grad_hess(y, std::vector<double>(4, 0.0), 1.0);
  TrainConfig c;
  c.min_child_weight = 0.0;
  c.max_depth = 1;
  auto tree = build_tree(x, gh.grad, gh.hess, c);
  EXPECT_EQ(tree.nodes[0].feature, 0);
  // Symmetric gains at 1.5 and 3.5 for labels {1,0,0,1}: lowest threshold wins.
  const std::vector<int> y2{1, 0, 0, 1};
  auto gh2 = grad_hess(y2, std::vector<double>(4, 0.0), 1.0);
  auto tree2 = build_tree(column({1, 2, 3, 4}), gh2.grad, gh2.hess, c);
  ASSERT_EQ(tree2.nodes.size(), 3u);
  EXPECT_EQ(tree2.nodes[0].threshold, 1.5);
}

TEST(BuildTree, LearnsDefaultDirectionForMissing) {
  // Missing values co-occur with positives; they should be routed with the
  // high-valued (positive) side.
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const Matrix x = column({1, 2, 3, 4, 5, 6, nan, nan, nan});
  const std::vector<int> y{0, 0, 0, 1, 1, 1, 1, 1, 1};
  auto gh = grad_hess(y, std::vector<double>(9, 0.0), 1.0);
  TrainConfig c;
  c.min_child_weight = 0.0;
  c.max_depth = 1;
  auto tree = build_tree(x, gh.grad, gh.hess, c);
  ASSERT_EQ(tree.nodes.size(), 3u);
  EXPECT_EQ(tree.nodes[0].threshold, 3.5);
  EXPECT_FALSE(tree.nodes[0].default_left);
  const std::vector<double> missing{nan};
  EXPECT_GT(tree.value(missing), 0.0);

  // Mirror image: missing rows are negatives and sit with the low side.
  const std::vector<int> y2{0, 0, 0, 1, 1, 1, 0, 0, 0};
  auto gh2 = grad_hess(y2, std::vector<double>(9, 0.0), 1.0);
  auto tree2 = build_tree(x, gh2.grad, gh2.hess, c);
  EXPECT_TRUE(tree2.nodes[0].default_left);
  EXPECT_LT(tree2.value(missing), 0.0);
}

TEST(BuildTree, CoversAddUpAndGainsArePositive) {
  auto toy = separable_toy(400, 5);
  TrainConfig c;
  c.max_depth = 5;
  c.lambda = 1.0;
  std::vector<double> m(toy.y.size(), 0.3);
  auto gh = grad_hess(toy.y, m, 2.0);
  auto tree = build_tree(toy.x, gh.grad, gh.hess, c);
  ASSERT_GT(tree.nodes.size(), 3u);
  std::vector<double> node_g, node_h;
  route_sums(tree, toy.x, gh.grad, gh.hess, node_g, node_h);
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const auto& n = tree.nodes[i];
    if (n.is_leaf()) {
      EXPECT_NEAR(n.cover, node_h[i], 1e-12);
      EXPECT_NEAR(n.weight, leaf_weight(node_g[i], node_h[i], c.lambda), 1e-12);
      continue;
    }
    const auto l = static_cast<std::size_t>(n.left);
    const auto r = static_cast<std::size_t>(n.right);
    EXPECT_EQ(n.cover, tree.nodes[l].cover + tree.nodes[r].cover);
    const double gain = split_gain(node_g[l], node_h[l], node_g[r], node_h[r], c.lambda, c.gamma);
    EXPECT_GT(gain, 0.0);
    EXPECT_NEAR(gain, n.gain, 1e-9);
    EXPECT_GE(node_h[l], c.min_child_weight);
    EXPECT_GE(node_h[r], c.min_child_weight);
  }
  EXPECT_LE(tree.depth(), c.max_depth);
}

TEST(BuildTree, LargerLambdaShrinksLeavesOfSameStructure) {
  // A single split with fixed structure: refit leaves under increasing lambda.
  const Matrix x = column({1, 2, 3, 4, 5, 6, 7, 8});
  const std::vector<int> y{0, 0, 0, 0, 1, 1, 1, 1};
  auto gh = grad_hess(y, std::vector<double>(8, 0.0), 1.0);
  TrainConfig c;
  c.max_depth = 1;
  c.min_child_weight = 0.0;
  double previous = std::numeric_limits<double>::infinity();
  for (double lambda : {0.0, 0.5, 1.0, 4.0, 16.0}) {
    c.lambda = lambda;
    auto tree = build_tree(x, gh.grad, gh.hess, c);
    ASSERT_EQ(tree.nodes.size(), 3u);
    EXPECT_EQ(tree.nodes[0].threshold, 4.5);
    const double w = std::max(std::abs(tree.nodes[1].weight), std::abs(tree.nodes[2].weight));
    EXPECT_LE(w, previous);
    previous = w;
  }
}

TEST(Train, ZeroRoundsPredictsBaseScore) {
  auto toy = separable_toy(50, 1);
  TrainConfig c;
  c.n_rounds = 0;
  c.base_score = 0.3;
  auto e = train(toy.x, toy.y, c);
  EXPECT_TRUE(e.trees.empty());
  for (double p : predict(e, toy.x)) EXPECT_NEAR(p, 0.3, 1e-15);
}

TEST(Train, SingleRoundSingleLeafMatchesHandComputation) {
  // Three positives and one negative at margin 0: G = -1, H = 1, w* = 0.5.
  const Matrix x = column({1, 1, 1, 1});
  const std::vector<int> y{1, 1, 1, 0};
  TrainConfig c;
  c.n_rounds = 1;
  c.eta = 0.3;
  auto e = train(x, y, c);
  ASSERT_EQ(e.trees.size(), 1u);
  ASSERT_EQ(e.trees[0].nodes.size(), 1u);
  EXPECT_NEAR(e.margin(x.row(0)), 0.0 + 0.3 * 0.5, 1e-12);
}

TEST(Train, LoglossNonIncreasingOnSeparableToy) {
  auto toy = separable_toy(300, 7);
  TrainConfig c;
  c.n_rounds = 50;
  c.eta = 0.3;
  c.gamma = 0.0;
  c.lambda = 1.0;
  c.max_depth = 3;
  std::vector<double> losses;
  losses.push_back(logloss(toy.y, predict(Ensemble{c.base_score, c.eta, {}}, toy.x)));
  (void)train(toy.x, toy.y, c, [&](int, const Ensemble& e) { losses.push_back(logloss(toy.y, predict(e, toy.x))); });
  ASSERT_EQ(losses.size(), 51u);
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LE(losses[i], losses[i - 1]) << "round " << i;
  EXPECT_LT(losses.back(), 0.1);
}

TEST(Train, DeterministicAndRoundTrips) {
  auto toy = separable_toy(200, 9);
  TrainConfig c;
  c.n_rounds = 10;
  auto a = train(toy.x, toy.y, c);
  auto b = train(toy.x, toy.y, c);
  std::ostringstream sa, sb;
  save(sa, a);
  save(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  std::istringstream in(sa.str());
  auto loaded = load(in);
  std::ostringstream again;
  save(again, loaded);
  EXPECT_EQ(again.str(), sa.str());
  for (std::size_t r = 0; r < toy.x.rows(); ++r) {
    const double p1 = a.probability(toy.x.row(r));
    const double p2 = loaded.probability(toy.x.row(r));
    EXPECT_EQ(std::memcmp(&p1, &p2, sizeof(double)), 0);
  }
}

TEST(Predict, HandBuiltTwoTreeEnsemble) {
  Ensemble e;
  e.base_score = 0.4;
  e.eta = 0.5;
  Tree t1;
  t1.nodes = {TreeNode{-1, 1, 2, 0, 0.5, false, 0, 2, 0}, TreeNode{0, -1, -1, -1, 0, false, -0.8, 1, 0},
              TreeNode{0, -1, -1, -1, 0, false, 1.2, 1, 0}};
  Tree t2;
  t2.nodes = {TreeNode{-1, 1, 2, 1, -0.25, true, 0, 2, 0}, TreeNode{0, -1, -1, -1, 0, false, 0.3, 1, 0},
              TreeNode{0, -1, -1, -1, 0, false, -0.6, 1, 0}};
  e.trees = {t1, t2};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  struct Case {
    std::vector<double> x;
    double w1, w2;
  };
  const std::vector<Case> cases{{{0.1, 0.0}, -0.8, -0.6}, {{0.9, -1.0}, 1.2, 0.3}, {{nan, nan}, 1.2, 0.3}};
  for (const auto& cs : cases) {
    const double margin = std::log(0.4 / 0.6) + 0.5 * (cs.w1 + cs.w2);
    EXPECT_NEAR(e.margin(cs.x), margin, 1e-12);
    EXPECT_NEAR(e.probability(cs.x), 1.0 / (1.0 + std::exp(-margin)), 1e-12);
  }
}

TEST(Predict, ProbabilitiesStayInsideUnitInterval) {
  auto toy = separable_toy(200, 11);
  TrainConfig c;
  c.n_rounds = 30;
  c.eta = 1.0;
  auto e = train(toy.x, toy.y, c);
  for (double p : predict(e, toy.x)) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(ModelFormat, RejectsCorruptFiles) {
  std::istringstream bad1("not-a-model 1\n");
  EXPECT_THROW((void)load(bad1), ValidationError);
  std::istringstream bad2("drought-gbt 1\nbase_score 0.5\neta 0.3\ntrees 1\ntree 0 2\n0,-1,split,0,1,left,0,2\n");
  EXPECT_THROW((void)load(bad2), ValidationError);
}
