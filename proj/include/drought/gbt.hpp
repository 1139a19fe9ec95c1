#pragma once

// Gradient-boosted regression trees for binary classification.
//
// Each round fits a tree to the second-order expansion of the weighted
// logistic loss. With g, h the per-row gradient and hessian, a leaf holding
// sums G, H takes weight -G / (H + lambda), and a split is worth
//
//   1/2 [ G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - (G_L+G_R)^2/(H_L+H_R+lambda) ] - gamma.
//
// Splits are found by exact greedy search over presorted columns. Missing
// values (NaN) are routed by a learned default direction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "drought/common.hpp"

namespace drought::gbt {

struct TrainConfig {
  double eta = 0.3;
  int n_rounds = 50;
  int max_depth = 6;
  double gamma = 0.0;
  double lambda = 1.0;
  double scale_pos_weight = 1.0;
  double base_score = 0.5;
  double min_child_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(eta > 0.0 && eta <= 1.0)) throw ValidationError("train config: eta must lie in (0, 1]");
    if (n_rounds < 0) throw ValidationError("train config: n_rounds must be nonnegative");
    if (max_depth < 1) throw ValidationError("train config: max_depth must be at least 1");
    if (!(gamma >= 0.0)) throw ValidationError("train config: gamma must be >= 0");
    if (!(lambda >= 0.0)) throw ValidationError("train config: lambda must be >= 0");
    if (!(scale_pos_weight > 0.0)) throw ValidationError("train config: scale_pos_weight must be > 0");
    if (!(base_score > 0.0 && base_score < 1.0)) throw ValidationError("train config: base_score must lie in (0, 1)");
    if (!(min_child_weight >= 0.0)) throw ValidationError("train config: min_child_weight must be >= 0");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// ---------------------------------------------------------------------------
// Objective

struct GradHess {
  std::vector<double> grad;
  std::vector<double> hess;
};

/// Weighted logistic loss derivatives: g = w (p - y), h = w p (1 - p), with
/// w = scale_pos_weight on positive rows and 1 otherwise.
[[nodiscard]] inline GradHess grad_hess(std::span<const int> labels, std::span<const double> margins,
                                        double scale_pos_weight) {
  GradHess out;
  out.grad.resize(labels.size());
  out.hess.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = sigmoid(margins[i]);
    const double w = labels[i] == 1 ? scale_pos_weight : 1.0;
    out.grad[i] = w * (p - static_cast<double>(labels[i]));
    out.hess[i] = w * p * (1.0 - p);
  }
  return out;
}

[[nodiscard]] inline double leaf_weight(double sum_grad, double sum_hess, double lambda) {
  const double denom = sum_hess + lambda;
  return denom > 0.0 ? -sum_grad / denom : 0.0;
}

[[nodiscard]] inline double split_gain(double grad_left, double hess_left, double grad_right, double hess_right,
                                       double lambda, double gamma) {
  auto score = [lambda](double g, double h) { return g * g / (h + lambda); };
  return 0.5 * (score(grad_left, hess_left) + score(grad_right, hess_right) -
                score(grad_left + grad_right, hess_left + hess_right)) -
         gamma;
}

/// Mean logistic loss of probabilities against 0/1 labels.
[[nodiscard]] inline double logloss(std::span<const int> labels, std::span<const double> probabilities) {
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(probabilities[i], 1e-15, 1.0 - 1e-15);
    total -= labels[i] == 1 ? std::log(p) : std::log1p(-p);
  }
  return labels.empty() ? 0.0 : total / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Trees

struct TreeNode {
  int parent = -1;
  int left = -1;
  int right = -1;
  int feature = -1;
  double threshold = 0.0;  ///< rows with value < threshold go left
  bool default_left = false;
  double weight = 0.0;  ///< leaf value (unscaled by eta)
  double cover = 0.0;   ///< sum of training hessians routed here
  double gain = std::numeric_limits<double>::quiet_NaN();  ///< split gain; not persisted

  [[nodiscard]] bool is_leaf() const { return left < 0; }
};

class Tree {
public:
  std::vector<TreeNode> nodes;

  [[nodiscard]] int leaf_index(std::span<const double> x) const {
    int id = 0;
    while (!nodes[static_cast<std::size_t>(id)].is_leaf()) id = next(nodes[static_cast<std::size_t>(id)], x);
    return id;
  }

  [[nodiscard]] double value(std::span<const double> x) const {
    return nodes[static_cast<std::size_t>(leaf_index(x))].weight;
  }

  /// Child taken by `x` at an internal node.
  [[nodiscard]] static int next(const TreeNode& n, std::span<const double> x) {
    const double v = x[static_cast<std::size_t>(n.feature)];
    if (std::isnan(v)) return n.default_left ? n.left : n.right;
    return v < n.threshold ? n.left : n.right;
  }

  [[nodiscard]] int depth(int id = 0) const {
    const auto& n = nodes[static_cast<std::size_t>(id)];
    return n.is_leaf() ? 0 : 1 + std::max(depth(n.left), depth(n.right));
  }
};

/// Additive tree ensemble: margin(x) = logit(base_score) + eta * sum_t w_t(x).
struct Ensemble {
  double base_score = 0.5;
  double eta = 0.3;
  std::vector<Tree> trees;

  [[nodiscard]] double base_margin() const { return logit(base_score); }

  [[nodiscard]] double margin(std::span<const double> x) const {
    double sum = 0.0;
    for (const auto& t : trees) sum += t.value(x);
    return base_margin() + eta * sum;
  }

  [[nodiscard]] double probability(std::span<const double> x) const { return sigmoid(margin(x)); }

  [[nodiscard]] std::vector<double> margins(const Matrix& rows) const {
    std::vector<double> out(rows.rows());
    for (std::size_t i = 0; i < rows.rows(); ++i) out[i] = margin(rows.row(i));
    return out;
  }
};

[[nodiscard]] inline std::vector<double> predict(const Ensemble& ensemble, const Matrix& rows) {
  std::vector<double> out(rows.rows());
  for (std::size_t i = 0; i < rows.rows(); ++i) out[i] = ensemble.probability(rows.row(i));
  return out;
}

// ---------------------------------------------------------------------------
// Exact greedy tree construction

/// Per-feature row order by ascending value; missing (NaN) entries are left out.
struct ColumnIndex {
  struct Entry {
    double value;
    std::uint32_t row;
  };
  std::vector<std::vector<Entry>> columns;
  std::vector<bool> has_missing;

  explicit ColumnIndex(const Matrix& x) : columns(x.cols()), has_missing(x.cols(), false) {
    for (std::size_t f = 0; f < x.cols(); ++f) {
      auto& col = columns[f];
      col.reserve(x.rows());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const double v = x(r, f);
        if (std::isnan(v))
          has_missing[f] = true;
        else
          col.push_back({v, static_cast<std::uint32_t>(r)});
      }
      std::stable_sort(col.begin(), col.end(), [](const Entry& a, const Entry& b) { return a.value < b.value; });
    }
  }
};

namespace detail {

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool default_left = false;
};

struct ScanState {
  double grad_left = 0.0;
  double hess_left = 0.0;
  double last = 0.0;
  bool seen = false;
  double grad_present = 0.0;  ///< sums over rows with a value for the scanned feature
  double hess_present = 0.0;
};

}  // namespace detail

/// Grows one tree level by level. `index` must be built from `x`.
[[nodiscard]] inline Tree build_tree(const Matrix& x, const ColumnIndex& index, std::span<const double> grad,
                                     std::span<const double> hess, const TrainConfig& config) {
  const std::size_t n = x.rows();
  if (n == 0) throw ValidationError("build_tree: no rows");
  Tree tree;
  std::vector<double> node_grad{0.0}, node_hess{0.0};
  for (std::size_t r = 0; r < n; ++r) {
    node_grad[0] += grad[r];
    node_hess[0] += hess[r];
  }
  tree.nodes.push_back({});
  std::vector<int> position(n, 0);
  std::vector<int> frontier{0};

  auto make_leaf = [&](int id) {
    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.weight = leaf_weight(node_grad[static_cast<std::size_t>(id)], node_hess[static_cast<std::size_t>(id)],
                              config.lambda);
    node.cover = node_hess[static_cast<std::size_t>(id)];
  };

  for (int depth = 0; !frontier.empty(); ++depth) {
    if (depth >= config.max_depth) {
      for (int id : frontier) make_leaf(id);
      break;
    }
    std::vector<int> slot(tree.nodes.size(), -1);
    for (std::size_t s = 0; s < frontier.size(); ++s) slot[static_cast<std::size_t>(frontier[s])] = static_cast<int>(s);
    std::vector<detail::SplitCandidate> best(frontier.size());
    std::vector<detail::ScanState> state(frontier.size());

    for (std::size_t f = 0; f < x.cols(); ++f) {
      for (std::size_t s = 0; s < frontier.size(); ++s) {
        state[s] = {};
        state[s].grad_present = node_grad[static_cast<std::size_t>(frontier[s])];
        state[s].hess_present = node_hess[static_cast<std::size_t>(frontier[s])];
      }
      if (index.has_missing[f]) {
        for (auto& st : state) st.grad_present = st.hess_present = 0.0;
        for (const auto& e : index.columns[f]) {
          const int node = position[e.row];
          if (node < 0 || slot[static_cast<std::size_t>(node)] < 0) continue;
          auto& st = state[static_cast<std::size_t>(slot[static_cast<std::size_t>(node)])];
          st.grad_present += grad[e.row];
          st.hess_present += hess[e.row];
        }
      }
      for (const auto& e : index.columns[f]) {
        const int node = position[e.row];
        if (node < 0) continue;
        const int s = slot[static_cast<std::size_t>(node)];
        if (s < 0) continue;
        auto& st = state[static_cast<std::size_t>(s)];
        if (st.seen && e.value != st.last) {
          double threshold = 0.5 * (st.last + e.value);
          if (!(st.last < threshold)) threshold = e.value;
          const double g_total = node_grad[static_cast<std::size_t>(node)];
          const double h_total = node_hess[static_cast<std::size_t>(node)];
          const double g_missing = g_total - st.grad_present;
          const double h_missing = h_total - st.hess_present;
          const double g_right = st.grad_present - st.grad_left;
          const double h_right = st.hess_present - st.hess_left;
          auto consider = [&](double gl, double hl, double gr, double hr, bool default_left) {
            if (!(hl > 0.0 && hr > 0.0)) return;
            if (hl < config.min_child_weight || hr < config.min_child_weight) return;
            const double gain = split_gain(gl, hl, gr, hr, config.lambda, config.gamma);
            auto& b = best[static_cast<std::size_t>(s)];
            if (gain > b.gain) b = {gain, static_cast<int>(f), threshold, default_left};
          };
          consider(st.grad_left, st.hess_left, g_right + g_missing, h_right + h_missing, false);
          if (index.has_missing[f]) consider(st.grad_left + g_missing, st.hess_left + h_missing, g_right, h_right, true);
        }
        st.grad_left += grad[e.row];
        st.hess_left += hess[e.row];
        st.last = e.value;
        st.seen = true;
      }
    }

    std::vector<int> next_frontier;
    for (std::size_t s = 0; s < frontier.size(); ++s) {
      const int id = frontier[s];
      const auto& b = best[s];
      if (b.feature < 0) {
        make_leaf(id);
        continue;
      }
      const int left = static_cast<int>(tree.nodes.size());
      const int right = left + 1;
      tree.nodes.push_back({});
      tree.nodes.push_back({});
      auto& node = tree.nodes[static_cast<std::size_t>(id)];
      node.left = left;
      node.right = right;
      node.feature = b.feature;
      node.threshold = b.threshold;
      node.default_left = b.default_left;
      node.gain = b.gain;
      tree.nodes[static_cast<std::size_t>(left)].parent = id;
      tree.nodes[static_cast<std::size_t>(right)].parent = id;
      next_frontier.push_back(left);
      next_frontier.push_back(right);
    }
    node_grad.resize(tree.nodes.size(), 0.0);
    node_hess.resize(tree.nodes.size(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const int id = position[r];
      if (id < 0) continue;
      const auto& node = tree.nodes[static_cast<std::size_t>(id)];
      if (node.is_leaf()) {
        position[r] = -1;
        continue;
      }
      const int child = Tree::next(node, x.row(r));
      position[r] = child;
      node_grad[static_cast<std::size_t>(child)] += grad[r];
      node_hess[static_cast<std::size_t>(child)] += hess[r];
    }
    frontier = std::move(next_frontier);
  }

  // Internal covers are the exact sum of their children's covers.
  for (std::size_t i = tree.nodes.size(); i-- > 0;) {
    auto& node = tree.nodes[i];
    if (!node.is_leaf()) {
      node.cover = tree.nodes[static_cast<std::size_t>(node.left)].cover +
                   tree.nodes[static_cast<std::size_t>(node.right)].cover;
    }
  }
  return tree;
}

[[nodiscard]] inline Tree build_tree(const Matrix& x, std::span<const double> grad, std::span<const double> hess,
                                     const TrainConfig& config) {
  config.validate();
  return build_tree(x, ColumnIndex(x), grad, hess, config);
}

/// Optional per-round observer, called with (round, ensemble so far).
using RoundObserver = std::function<void(int, const Ensemble&)>;

/// Trains on `x` using a column index already built from it, so repeated
/// fits on the same rows (grid search) sort each column once.
[[nodiscard]] inline Ensemble train(const Matrix& x, const ColumnIndex& index, std::span<const int> labels,
                                    const TrainConfig& config, const RoundObserver& observer = {}) {
  config.validate();
  if (x.rows() != labels.size()) throw ValidationError("train: matrix and labels differ in row count");
  for (int y : labels)
    if (y != 0 && y != 1) throw ValidationError("train: labels must be 0 or 1");

  Ensemble ensemble{config.base_score, config.eta, {}};
  if (config.n_rounds == 0 || x.rows() == 0) return ensemble;
  std::vector<double> margins(x.rows(), ensemble.base_margin());
  for (int round = 0; round < config.n_rounds; ++round) {
    const auto gh = grad_hess(labels, margins, config.scale_pos_weight);
    ensemble.trees.push_back(build_tree(x, index, gh.grad, gh.hess, config));
    const auto& tree = ensemble.trees.back();
    for (std::size_t r = 0; r < x.rows(); ++r) margins[r] += config.eta * tree.value(x.row(r));
    if (observer) observer(round, ensemble);
  }
  return ensemble;
}

[[nodiscard]] inline Ensemble train(const Matrix& x, std::span<const int> labels, const TrainConfig& config,
                                    const RoundObserver& observer = {}) {
  return train(x, ColumnIndex(x), labels, config, observer);
}

// ---------------------------------------------------------------------------
// Text model format
//
//   drought-gbt 1
//   base_score <double>
//   eta <double>
//   trees <count>
//   tree <index> <node count>
//   id,parent,type,feature,threshold,default,weight,cover     (one line per node)
//
// Doubles are written in shortest round-trip form. Nodes are listed parents
// first; of two siblings the left child is listed first.

inline void save(std::ostream& out, const Ensemble& ensemble) {
  out << "drought-gbt 1\n";
  out << "base_score " << format_double(ensemble.base_score) << '\n';
  out << "eta " << format_double(ensemble.eta) << '\n';
  out << "trees " << ensemble.trees.size() << '\n';
  for (std::size_t t = 0; t < ensemble.trees.size(); ++t) {
    const auto& nodes = ensemble.trees[t].nodes;
    out << "tree " << t << ' ' << nodes.size() << '\n';
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& n = nodes[i];
      out << i << ',' << n.parent << ',' << (n.is_leaf() ? "leaf" : "split") << ',' << n.feature << ','
          << format_double(n.is_leaf() ? 0.0 : n.threshold) << ','
          << (n.is_leaf() ? "-" : (n.default_left ? "left" : "right")) << ',' << format_double(n.weight) << ','
          << format_double(n.cover) << '\n';
    }
  }
}

[[nodiscard]] inline Ensemble load(std::istream& in) {
  auto fail = [](const std::string& what) -> Ensemble { throw ValidationError("model file: " + what); };
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "drought-gbt" || version != 1) return fail("bad magic line");
  auto read_double = [&](const char* key) {
    std::string k, v;
    if (!(in >> k >> v) || k != key) fail(std::string("expected ") + key);
    auto d = parse_double(v);
    if (!d) fail(std::string("bad value for ") + key);
    return *d;
  };
  Ensemble e;
  e.base_score = read_double("base_score");
  e.eta = read_double("eta");
  std::size_t count = 0;
  if (!(in >> word >> count) || word != "trees") return fail("expected tree count");
  for (std::size_t t = 0; t < count; ++t) {
    std::size_t index = 0, n_nodes = 0;
    if (!(in >> word >> index >> n_nodes) || word != "tree" || index != t) return fail("bad tree header");
    Tree tree;
    tree.nodes.resize(n_nodes);
    std::vector<bool> is_split(n_nodes, false);
    for (std::size_t i = 0; i < n_nodes; ++i) {
      std::string line;
      if (!(in >> line)) return fail("truncated tree");
      std::vector<std::string> f;
      std::size_t begin = 0;
      for (std::size_t pos; (pos = line.find(',', begin)) != std::string::npos; begin = pos + 1)
        f.push_back(line.substr(begin, pos - begin));
      f.push_back(line.substr(begin));
      if (f.size() != 8) return fail("bad node line '" + line + "'");
      auto id = parse_int(f[0]);
      auto parent = parse_int(f[1]);
      auto feature = parse_int(f[3]);
      auto threshold = parse_double(f[4]);
      auto weight = parse_double(f[6]);
      auto cover = parse_double(f[7]);
      if (!id || *id != static_cast<long long>(i) || !parent || !feature || !threshold || !weight || !cover)
        return fail("bad node line '" + line + "'");
      auto& node = tree.nodes[i];
      node.parent = static_cast<int>(*parent);
      node.feature = static_cast<int>(*feature);
      node.threshold = *threshold;
      node.weight = *weight;
      node.cover = *cover;
      if (f[2] == "split") {
        if (f[5] != "left" && f[5] != "right") return fail("bad default direction");
        node.default_left = f[5] == "left";
        is_split[i] = true;
      } else if (f[2] != "leaf") {
        return fail("bad node type");
      }
      if (node.parent >= 0) {
        if (static_cast<std::size_t>(node.parent) >= i) return fail("parent listed after child");
        auto& p = tree.nodes[static_cast<std::size_t>(node.parent)];
        if (p.left < 0)
          p.left = static_cast<int>(i);
        else if (p.right < 0)
          p.right = static_cast<int>(i);
        else
          return fail("node with more than two children");
      } else if (i != 0) {
        return fail("multiple roots");
      }
    }
    if (n_nodes == 0) return fail("empty tree");
    for (std::size_t i = 0; i < n_nodes; ++i) {
      const auto& node = tree.nodes[i];
      if (is_split[i] != (node.right >= 0)) return fail("node " + std::to_string(i) + " type disagrees with children");
    }
    e.trees.push_back(std::move(tree));
  }
  return e;
}

}  // namespace drought::gbt
