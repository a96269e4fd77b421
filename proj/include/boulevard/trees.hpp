#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "boulevard/dataset.hpp"
#include "boulevard/rng.hpp"

namespace boulevard {

// An axis-aligned hyper-rectangle inside [0,1]^d. Cells are left-closed,
// right-open on every axis, except that an upper bound of 1 is closed, so
// the leaves of a structure tile the cube exactly.
struct Cell {
  std::vector<double> lower;
  std::vector<double> upper;

  int dim() const { return static_cast<int>(lower.size()); }

  static Cell unit(int d) {
    Cell c;
    c.lower.assign(d, 0.0);
    c.upper.assign(d, 1.0);
    return c;
  }

  // Euclidean length of the diagonal, the diam(A) proxy.
  double diameter() const {
    double s = 0.0;
    for (int j = 0; j < dim(); ++j) s += (upper[j] - lower[j]) * (upper[j] - lower[j]);
    return std::sqrt(s);
  }

  double volume() const {
    double v = 1.0;
    for (int j = 0; j < dim(); ++j) v *= upper[j] - lower[j];
    return v;
  }

  bool contains(std::span<const double> x) const {
    for (int j = 0; j < dim(); ++j) {
      if (x[j] < lower[j]) return false;
      const bool closed_right = upper[j] >= 1.0;
      if (closed_right ? x[j] > upper[j] : x[j] >= upper[j]) return false;
    }
    return true;
  }
};

struct StructureConstraints {
  double max_leaf_diameter = 1e-6;  // keep splitting until at or below; d_n proxy
  int min_leaf_samples = 1;         // k, the in-leaf point floor
  int max_depth = 30;

  void validate(int d) const {
    if (min_leaf_samples < 1) throw std::invalid_argument("min_leaf_samples must be >= 1");
    if (max_depth < 0) throw std::invalid_argument("max_depth must be >= 0");
    const double diag = std::sqrt(static_cast<double>(d));
    if (!(max_leaf_diameter > 0.0 && max_leaf_diameter <= diag + 1e-12))
      throw std::invalid_argument("max_leaf_diameter must lie in (0, sqrt(d)]");
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int leaf_id = -1;  // valid when feature == -1
};

class TreeStructure {
 public:
  TreeStructure() = default;
  TreeStructure(int dim, std::vector<TreeNode> nodes, std::vector<Cell> leaf_cells)
      : dim_(dim), nodes_(std::move(nodes)), leaf_cells_(std::move(leaf_cells)) {}

  int dimension() const { return dim_; }
  int leaf_count() const { return static_cast<int>(leaf_cells_.size()); }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const Cell& leaf_cell(int leaf) const { return leaf_cells_[leaf]; }

  // Index of the unique leaf containing x. Descent uses x[f] < t -> left,
  // which realizes the left-closed/right-open boundary convention.
  int leaf_of(std::span<const double> x) const {
    check_unit_cube(x);
    int node = 0;
    while (nodes_[node].feature >= 0) {
      const TreeNode& nd = nodes_[node];
      node = x[nd.feature] < nd.threshold ? nd.left : nd.right;
    }
    return nodes_[node].leaf_id;
  }

  int depth() const {
    int best = 0;
    walk_depth(0, 0, best);
    return best;
  }

 private:
  void walk_depth(int node, int d, int& best) const {
    if (nodes_[node].feature < 0) {
      best = std::max(best, d);
      return;
    }
    walk_depth(nodes_[node].left, d + 1, best);
    walk_depth(nodes_[node].right, d + 1, best);
  }

  int dim_ = 0;
  std::vector<TreeNode> nodes_;
  std::vector<Cell> leaf_cells_;
};

// Declarative description of a structure, for hand-built trees in tests and
// enumeration oracles. feature == -1 is a leaf; otherwise children has
// exactly two entries (left, right).
struct SplitSpec {
  int feature = -1;
  double threshold = 0.0;
  std::vector<SplitSpec> children;
};

inline SplitSpec leaf_spec() { return SplitSpec{}; }
inline SplitSpec split_spec(int feature, double threshold, SplitSpec left, SplitSpec right) {
  SplitSpec s;
  s.feature = feature;
  s.threshold = threshold;
  s.children = {std::move(left), std::move(right)};
  return s;
}

namespace detail {
inline int emit_spec(const SplitSpec& spec, Cell cell, std::vector<TreeNode>& nodes,
                     std::vector<Cell>& leaf_cells) {
  const int self = static_cast<int>(nodes.size());
  nodes.emplace_back();
  if (spec.feature < 0) {
    nodes[self].leaf_id = static_cast<int>(leaf_cells.size());
    leaf_cells.push_back(std::move(cell));
    return self;
  }
  if (spec.children.size() != 2) throw std::invalid_argument("split_spec requires two children");
  Cell lcell = cell, rcell = cell;
  lcell.upper[spec.feature] = spec.threshold;
  rcell.lower[spec.feature] = spec.threshold;
  const int l = emit_spec(spec.children[0], std::move(lcell), nodes, leaf_cells);
  const int r = emit_spec(spec.children[1], std::move(rcell), nodes, leaf_cells);
  nodes[self].feature = spec.feature;
  nodes[self].threshold = spec.threshold;
  nodes[self].left = l;
  nodes[self].right = r;
  return self;
}
}  // namespace detail

inline TreeStructure make_structure(int dim, const SplitSpec& spec) {
  std::vector<TreeNode> nodes;
  std::vector<Cell> leaf_cells;
  detail::emit_spec(spec, Cell::unit(dim), nodes, leaf_cells);
  return TreeStructure(dim, std::move(nodes), std::move(leaf_cells));
}

inline TreeStructure single_leaf_structure(int dim) { return make_structure(dim, leaf_spec()); }

struct Subsample {
  std::vector<int> indices;  // ascending, no duplicates
  double rate = 1.0;

  int size() const { return static_cast<int>(indices.size()); }
};

inline Subsample full_subsample(int n) {
  Subsample w;
  w.indices.resize(n);
  std::iota(w.indices.begin(), w.indices.end(), 0);
  w.rate = 1.0;
  return w;
}

// Uniform subsample of size round(theta*n) without replacement.
inline Subsample draw_subsample(int n, double theta, std::mt19937_64& rng) {
  if (!(theta > 0.0 && theta <= 1.0)) throw std::invalid_argument("theta must lie in (0,1]");
  const int m = static_cast<int>(std::lround(theta * n));
  if (m < 1) throw std::invalid_argument("subsample size round(theta*n) must be >= 1");
  Subsample w;
  w.indices = sample_without_replacement(rng, n, m);
  w.rate = theta;
  return w;
}

// --------------------------------------------------------------------------
// Structure builders
// --------------------------------------------------------------------------

namespace detail {

struct StructureBuilder {
  const Matrix& x;
  const StructureConstraints& cons;
  std::vector<TreeNode> nodes;
  std::vector<Cell> leaf_cells;

  int make_leaf(Cell cell) {
    const int self = static_cast<int>(nodes.size());
    nodes.emplace_back();
    nodes[self].leaf_id = static_cast<int>(leaf_cells.size());
    leaf_cells.push_back(std::move(cell));
    return self;
  }

  TreeStructure finish() {
    return TreeStructure(x.cols, std::move(nodes), std::move(leaf_cells));
  }
};

}  // namespace detail

// Completely randomized structure: feature uniform over {1..d}, threshold
// uniform over the cell's extent, resampled up to 32 times until both sides
// keep at least min_leaf_samples sample points. Never reads responses.
inline TreeStructure build_randomized_structure(const Matrix& x, const StructureConstraints& cons,
                                                std::mt19937_64& rng) {
  cons.validate(x.cols);
  if (x.rows < cons.min_leaf_samples)
    throw std::invalid_argument("fewer sample points than min_leaf_samples");

  detail::StructureBuilder b{x, cons, {}, {}};
  std::vector<int> all(x.rows);
  std::iota(all.begin(), all.end(), 0);

  constexpr int kSplitAttempts = 32;

  auto grow = [&](auto&& self, Cell cell, std::vector<int> pts, int depth) -> int {
    if (cell.diameter() <= cons.max_leaf_diameter || depth >= cons.max_depth ||
        static_cast<int>(pts.size()) < 2 * cons.min_leaf_samples)
      return b.make_leaf(std::move(cell));

    int feature = -1;
    double threshold = 0.0;
    for (int attempt = 0; attempt < kSplitAttempts; ++attempt) {
      const int f = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(x.cols)));
      const double t = uniform_real(rng, cell.lower[f], cell.upper[f]);
      int n_left = 0;
      for (int i : pts) n_left += x.at(i, f) < t ? 1 : 0;
      const int n_right = static_cast<int>(pts.size()) - n_left;
      if (n_left >= cons.min_leaf_samples && n_right >= cons.min_leaf_samples) {
        feature = f;
        threshold = t;
        break;
      }
    }
    if (feature < 0) return b.make_leaf(std::move(cell));

    std::vector<int> lpts, rpts;
    for (int i : pts) (x.at(i, feature) < threshold ? lpts : rpts).push_back(i);
    pts.clear();
    pts.shrink_to_fit();

    Cell lcell = cell, rcell = cell;
    lcell.upper[feature] = threshold;
    rcell.lower[feature] = threshold;

    const int selfIdx = static_cast<int>(b.nodes.size());
    b.nodes.emplace_back();
    const int l = self(self, std::move(lcell), std::move(lpts), depth + 1);
    const int r = self(self, std::move(rcell), std::move(rpts), depth + 1);
    b.nodes[selfIdx].feature = feature;
    b.nodes[selfIdx].threshold = threshold;
    b.nodes[selfIdx].left = l;
    b.nodes[selfIdx].right = r;
    return selfIdx;
  };

  grow(grow, Cell::unit(x.cols), std::move(all), 0);
  return b.finish();
}

// CART structure on the subsample: each split minimizes the within-children
// sum of squared deviations of z, thresholds at midpoints of consecutive
// distinct covariate values. Ties resolve to the lowest feature index, then
// the lowest threshold, so builds are reproducible. A node with constant z
// (or no impurity-reducing split) becomes a leaf.
inline TreeStructure build_greedy_structure(const Matrix& x, std::span<const double> z,
                                            const StructureConstraints& cons,
                                            const Subsample& subsample) {
  cons.validate(x.cols);
  if (static_cast<int>(z.size()) != x.rows) throw std::invalid_argument("z size mismatch");
  for (double v : z)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite gradient value");
  if (subsample.size() < 1) throw std::invalid_argument("empty subsample");

  detail::StructureBuilder b{x, cons, {}, {}};

  auto grow = [&](auto&& self, Cell cell, std::vector<int> pts, int depth) -> int {
    const int m = static_cast<int>(pts.size());
    if (cell.diameter() <= cons.max_leaf_diameter || depth >= cons.max_depth ||
        m < 2 * cons.min_leaf_samples)
      return b.make_leaf(std::move(cell));

    double zmin = z[pts[0]], zmax = z[pts[0]], zsum = 0.0, zsq = 0.0;
    for (int i : pts) {
      zmin = std::min(zmin, z[i]);
      zmax = std::max(zmax, z[i]);
      zsum += z[i];
      zsq += z[i] * z[i];
    }
    if (zmin == zmax) return b.make_leaf(std::move(cell));  // no informative split
    const double node_impurity = std::max(0.0, zsq - zsum * zsum / m);

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_impurity = node_impurity;
    std::vector<int> order(pts);
    for (int f = 0; f < x.cols; ++f) {
      std::sort(order.begin(), order.end(), [&](int a, int c) {
        return x.at(a, f) != x.at(c, f) ? x.at(a, f) < x.at(c, f) : a < c;
      });
      double ls = 0.0, lq = 0.0;
      for (int pos = 1; pos < m; ++pos) {
        const double zi = z[order[pos - 1]];
        ls += zi;
        lq += zi * zi;
        const double xl = x.at(order[pos - 1], f), xr = x.at(order[pos], f);
        if (xl == xr) continue;
        if (pos < cons.min_leaf_samples || m - pos < cons.min_leaf_samples) continue;
        const double imp_left = std::max(0.0, lq - ls * ls / pos);
        const double rs = zsum - ls, rq = zsq - lq;
        const double imp_right = std::max(0.0, rq - rs * rs / (m - pos));
        const double imp = imp_left + imp_right;
        if (imp < best_impurity) {
          best_impurity = imp;
          best_feature = f;
          best_threshold = xl + 0.5 * (xr - xl);
        }
      }
    }
    if (best_feature < 0) return b.make_leaf(std::move(cell));

    std::vector<int> lpts, rpts;
    for (int i : pts) (x.at(i, best_feature) < best_threshold ? lpts : rpts).push_back(i);
    Cell lcell = cell, rcell = cell;
    lcell.upper[best_feature] = best_threshold;
    rcell.lower[best_feature] = best_threshold;

    const int selfIdx = static_cast<int>(b.nodes.size());
    b.nodes.emplace_back();
    const int l = self(self, std::move(lcell), std::move(lpts), depth + 1);
    const int r = self(self, std::move(rcell), std::move(rpts), depth + 1);
    b.nodes[selfIdx].feature = best_feature;
    b.nodes[selfIdx].threshold = best_threshold;
    b.nodes[selfIdx].left = l;
    b.nodes[selfIdx].right = r;
    return selfIdx;
  };

  grow(grow, Cell::unit(x.cols), std::vector<int>(subsample.indices), 0);
  return b.finish();
}

// --------------------------------------------------------------------------
// Honest leaf valuation and prediction
// --------------------------------------------------------------------------

struct FittedTree {
  TreeStructure structure;
  Subsample subsample;
  std::vector<double> leaf_values;  // indexed by leaf id; 0 for empty leaves
};

// Leaf value = mean of z over subsample members in the leaf, with 0/0 = 0.
inline FittedTree assign_leaf_values(TreeStructure structure, std::span<const double> z,
                                     const Matrix& x, Subsample subsample) {
  const int m = structure.leaf_count();
  std::vector<double> sums(m, 0.0);
  std::vector<int> counts(m, 0);
  for (int i : subsample.indices) {
    const int leaf = structure.leaf_of(x.row(i));
    sums[leaf] += z[i];
    counts[leaf] += 1;
  }
  std::vector<double> values(m, 0.0);
  for (int l = 0; l < m; ++l)
    if (counts[l] > 0) values[l] = sums[l] / counts[l];
  return FittedTree{std::move(structure), std::move(subsample), std::move(values)};
}

inline double predict_tree(const FittedTree& tree, std::span<const double> x) {
  return tree.leaf_values[tree.structure.leaf_of(x)];
}

// Sparse view of s_n(x; w): equal weight 1/|members| on the subsample members
// sharing x's leaf. Its weights sum to exactly 1 (or 0 for an empty leaf) by
// construction.
struct StructureVector {
  std::vector<int> indices;
  double weight = 0.0;

  double sum() const { return indices.empty() ? 0.0 : 1.0; }

  double dot(std::span<const double> v) const {
    double s = 0.0;
    for (int i : indices) s += v[i];
    return s * weight;
  }

  std::vector<double> to_dense(int n) const {
    std::vector<double> dense(n, 0.0);
    for (int i : indices) dense[i] = weight;
    return dense;
  }
};

inline StructureVector structure_vector(const TreeStructure& structure, const Matrix& x,
                                        const Subsample& subsample, std::span<const double> query) {
  const int leaf = structure.leaf_of(query);
  StructureVector sv;
  for (int i : subsample.indices)
    if (structure.leaf_of(x.row(i)) == leaf) sv.indices.push_back(i);
  if (!sv.indices.empty()) sv.weight = 1.0 / static_cast<double>(sv.indices.size());
  return sv;
}

// --------------------------------------------------------------------------
// Diagnostics used by constraint tests
// --------------------------------------------------------------------------

inline std::vector<int> leaf_assignments(const TreeStructure& structure, const Matrix& x) {
  std::vector<int> leaf(x.rows);
  for (int i = 0; i < x.rows; ++i) leaf[i] = structure.leaf_of(x.row(i));
  return leaf;
}

inline int min_leaf_sample_count(const TreeStructure& structure, const Matrix& x) {
  std::vector<int> counts(structure.leaf_count(), 0);
  for (int i = 0; i < x.rows; ++i) counts[structure.leaf_of(x.row(i))] += 1;
  return *std::min_element(counts.begin(), counts.end());
}

inline double max_structure_diameter(const TreeStructure& structure) {
  double best = 0.0;
  for (int l = 0; l < structure.leaf_count(); ++l)
    best = std::max(best, structure.leaf_cell(l).diameter());
  return best;
}

inline double total_leaf_volume(const TreeStructure& structure) {
  double v = 0.0;
  for (int l = 0; l < structure.leaf_count(); ++l) v += structure.leaf_cell(l).volume();
  return v;
}

inline std::vector<int> leaf_depths(const TreeStructure& structure) {
  std::vector<int> depths(structure.leaf_count(), 0);
  auto walk = [&](auto&& self, int node, int d) -> void {
    const TreeNode& nd = structure.nodes()[node];
    if (nd.feature < 0) {
      depths[nd.leaf_id] = d;
      return;
    }
    self(self, nd.left, d + 1);
    self(self, nd.right, d + 1);
  };
  walk(walk, 0, 0);
  return depths;
}

}  // namespace boulevard
