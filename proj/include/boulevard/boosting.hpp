#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "boulevard/dataset.hpp"
#include "boulevard/kernel.hpp"
#include "boulevard/rng.hpp"
#include "boulevard/trees.hpp"

namespace boulevard {

enum class StructureMode { randomized, gradient_adaptive };

struct BoulevardConfig {
  double lambda = 0.8;
  double theta = 0.8;
  int n_trees = 100;
  double truncation_m = 0.0;  // <= 0 requests the default 10 * max|y|
  StructureMode structure_mode = StructureMode::randomized;
  StructureConstraints constraints;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("lambda must lie in (0,1)");
    if (!(theta > 0.0 && theta <= 1.0)) throw std::invalid_argument("theta must lie in (0,1]");
    if (n_trees < 1) throw std::invalid_argument("n_trees must be >= 1");
  }
};

struct IterationStat {
  double train_mse = 0.0;   // rescaled prediction vs observed y
  double step_norm = 0.0;   // ||Y_hat_b - Y_hat_{b-1}||_2
  int clipped = 0;          // residuals truncated this iteration
};

struct SnapshotState {
  std::optional<int> b_star;
  double loss_threshold = 0.0;
  std::vector<double> frozen_residuals;  // gradient vector that induced Q_{b*}
  bool reached() const { return b_star.has_value(); }
};

struct BoulevardModel {
  BoulevardConfig config;  // truncation_m holds the resolved value
  std::vector<FittedTree> trees;
  std::vector<double> fitted;  // Y_hat_B on the training sample
  std::vector<IterationStat> trace;
  long clip_events = 0;
  std::optional<SnapshotState> snapshot;
  std::optional<FeatureScaling> scaling;

  double rescale() const { return (1.0 + config.lambda) / config.lambda; }
};

enum class PredictionScale { raw, rescaled };

inline double truncate_to(double v, double m) {
  return v > m ? m : (v < -m ? -m : v);
}

namespace detail {

inline double resolve_truncation(std::span<const double> y, double requested) {
  double max_abs = 0.0;
  for (double v : y) max_abs = std::max(max_abs, std::abs(v));
  if (requested > 0.0) {
    if (requested <= max_abs)
      throw std::invalid_argument("truncation_m must exceed max|y|");
    return requested;
  }
  return max_abs > 0.0 ? 10.0 * max_abs : 1.0;
}

inline BoulevardModel boulevard_fit_impl(const Matrix& x, std::span<const double> y,
                                         const BoulevardConfig& config, std::mt19937_64& rng,
                                         std::optional<double> snapshot_l_star) {
  config.validate();
  config.constraints.validate(x.cols);
  if (static_cast<int>(y.size()) != x.rows) throw std::invalid_argument("response size mismatch");
  for (double v : y)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite response");
  const int n = x.rows;
  if (std::lround(config.theta * n) < 1)
    throw std::invalid_argument("round(theta*n) must be >= 1");

  BoulevardModel model;
  model.config = config;
  model.config.truncation_m = resolve_truncation(y, config.truncation_m);
  const double m_cap = model.config.truncation_m;
  const double lambda = config.lambda;
  const double shrink = lambda / (1.0 + lambda);

  if (snapshot_l_star) {
    model.snapshot = SnapshotState{};
    model.snapshot->loss_threshold = *snapshot_l_star;
    if (*snapshot_l_star < 0.0) throw std::invalid_argument("L* must be nonnegative");
  }

  model.trees.reserve(config.n_trees);
  model.trace.reserve(config.n_trees);
  model.fitted.assign(n, 0.0);
  std::vector<double> z(n), tree_out(n);

  for (int b = 1; b <= config.n_trees; ++b) {
    int clipped = 0;
    for (int i = 0; i < n; ++i) {
      const double g = truncate_to(model.fitted[i], m_cap);
      clipped += g != model.fitted[i] ? 1 : 0;
      z[i] = y[i] - g;
    }
    model.clip_events += clipped;

    Subsample w = draw_subsample(n, config.theta, rng);
    TreeStructure structure;
    const bool frozen = model.snapshot && model.snapshot->reached();
    if (frozen) {
      structure = build_greedy_structure(x, model.snapshot->frozen_residuals, config.constraints, w);
    } else if (config.structure_mode == StructureMode::gradient_adaptive || snapshot_l_star) {
      structure = build_greedy_structure(x, z, config.constraints, w);
    } else {
      structure = build_randomized_structure(x, config.constraints, rng);
    }
    FittedTree tree = assign_leaf_values(std::move(structure), z, x, std::move(w));

    double step_sq = 0.0;
    for (int i = 0; i < n; ++i) {
      tree_out[i] = predict_tree(tree, x.row(i));
      const double next = (b - 1.0) / b * model.fitted[i] + lambda / b * tree_out[i];
      const double step = next - model.fitted[i];
      step_sq += step * step;
      model.fitted[i] = next;
    }

    IterationStat stat;
    stat.step_norm = std::sqrt(step_sq);
    stat.clipped = clipped;
    double mse = 0.0;
    const double rescale = (1.0 + lambda) / lambda;
    for (int i = 0; i < n; ++i) {
      const double e = y[i] - rescale * model.fitted[i];
      mse += e * e;
    }
    stat.train_mse = mse / n;
    model.trace.push_back(stat);
    model.trees.push_back(std::move(tree));

    if (model.snapshot && !model.snapshot->reached()) {
      double loss = 0.0;
      for (int i = 0; i < n; ++i) {
        const double e = shrink * y[i] - model.fitted[i];
        loss += e * e;
      }
      loss /= 2.0 * n;
      if (loss < model.snapshot->loss_threshold) {
        model.snapshot->b_star = b;
        model.snapshot->frozen_residuals.resize(n);
        for (int i = 0; i < n; ++i)
          model.snapshot->frozen_residuals[i] = y[i] - truncate_to(model.fitted[i], m_cap);
      }
    }
  }
  return model;
}

}  // namespace detail

// Boulevard training loop: residuals against the truncated fit, honest leaf
// values from a fresh subsample, averaged update
// Y_hat_b = ((b-1)/b) Y_hat_{b-1} + (lambda/b) t_b(X).
inline BoulevardModel boulevard_fit(const Matrix& x, std::span<const double> y,
                                    const BoulevardConfig& config, std::mt19937_64& rng) {
  return detail::boulevard_fit_impl(x, y, config, rng, std::nullopt);
}

inline BoulevardModel boulevard_fit(const Matrix& x, std::span<const double> y,
                                    const BoulevardConfig& config) {
  auto rng = make_rng(config.seed);
  return boulevard_fit(x, y, config, rng);
}

// Adaptive Boulevard with the structure distribution frozen once the
// lambda/(1+lambda)-scaled training loss first drops below l_star. Later
// trees draw fresh subsamples but build greedy structures from the residual
// vector recorded at b*. If l_star is never reached the model comes back
// with b_star unset.
inline BoulevardModel tail_snapshot_fit(const Matrix& x, std::span<const double> y,
                                        const BoulevardConfig& config, double l_star,
                                        std::mt19937_64& rng) {
  return detail::boulevard_fit_impl(x, y, config, rng, l_star);
}

inline double boulevard_predict(const BoulevardModel& model, std::span<const double> x,
                                PredictionScale scale) {
  double s = 0.0;
  for (const auto& tree : model.trees) s += predict_tree(tree, x);
  const double raw = model.config.lambda * s / static_cast<double>(model.trees.size());
  return scale == PredictionScale::raw ? raw : model.rescale() * raw;
}

// --------------------------------------------------------------------------
// Baseline ensembles
// --------------------------------------------------------------------------

enum class EnsembleKind { boulevard, random_forest, gbt };

struct BaselineModel {
  EnsembleKind kind = EnsembleKind::gbt;
  double learning_rate = 0.1;
  double theta = 1.0;
  bool subsampled = false;  // distinguishes SGBT from GBT
  StructureConstraints constraints;
  std::uint64_t seed = 1;
  std::vector<FittedTree> trees;
  std::vector<IterationStat> trace;
  std::optional<FeatureScaling> scaling;
};

// Classic additive boosting, f_{b+1} = f_b + lr * t_b on residuals; greedy
// structures with non-honest leaf values (structure and values share the
// same point set). A subsample_rate turns it into SGBT.
inline BaselineModel gbt_fit(const Matrix& x, std::span<const double> y, double learning_rate,
                             int n_trees, const StructureConstraints& cons,
                             std::optional<double> subsample_rate, std::mt19937_64& rng) {
  cons.validate(x.cols);
  if (n_trees < 1) throw std::invalid_argument("n_trees must be >= 1");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0))
    throw std::invalid_argument("learning_rate must lie in (0,1]");
  for (double v : y)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite response");
  const int n = x.rows;

  BaselineModel model;
  model.kind = EnsembleKind::gbt;
  model.learning_rate = learning_rate;
  model.subsampled = subsample_rate.has_value();
  model.theta = subsample_rate.value_or(1.0);
  model.constraints = cons;

  std::vector<double> fitted(n, 0.0), z(n);
  for (int b = 1; b <= n_trees; ++b) {
    for (int i = 0; i < n; ++i) z[i] = y[i] - fitted[i];
    Subsample w = subsample_rate ? draw_subsample(n, *subsample_rate, rng) : full_subsample(n);
    TreeStructure structure = build_greedy_structure(x, z, cons, w);
    FittedTree tree = assign_leaf_values(std::move(structure), z, x, std::move(w));
    double step_sq = 0.0, mse = 0.0;
    for (int i = 0; i < n; ++i) {
      const double step = learning_rate * predict_tree(tree, x.row(i));
      fitted[i] += step;
      step_sq += step * step;
      const double e = y[i] - fitted[i];
      mse += e * e;
    }
    model.trace.push_back(IterationStat{mse / n, std::sqrt(step_sq), 0});
    model.trees.push_back(std::move(tree));
  }
  return model;
}

// Average of honest randomized trees fit directly to Y on subsamples.
inline BaselineModel rf_fit(const Matrix& x, std::span<const double> y, int n_trees,
                            const StructureConstraints& cons, double theta,
                            std::mt19937_64& rng) {
  cons.validate(x.cols);
  if (n_trees < 1) throw std::invalid_argument("n_trees must be >= 1");
  for (double v : y)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite response");
  const int n = x.rows;

  BaselineModel model;
  model.kind = EnsembleKind::random_forest;
  model.learning_rate = 1.0;
  model.theta = theta;
  model.subsampled = theta < 1.0;
  model.constraints = cons;

  std::vector<double> fitted(n, 0.0);
  for (int b = 1; b <= n_trees; ++b) {
    Subsample w = draw_subsample(n, theta, rng);
    TreeStructure structure = build_randomized_structure(x, cons, rng);
    FittedTree tree = assign_leaf_values(std::move(structure), y, x, std::move(w));
    double step_sq = 0.0, mse = 0.0;
    for (int i = 0; i < n; ++i) {
      const double next = (b - 1.0) / b * fitted[i] + predict_tree(tree, x.row(i)) / b;
      step_sq += (next - fitted[i]) * (next - fitted[i]);
      fitted[i] = next;
      const double e = y[i] - fitted[i];
      mse += e * e;
    }
    model.trace.push_back(IterationStat{mse / n, std::sqrt(step_sq), 0});
    model.trees.push_back(std::move(tree));
  }
  return model;
}

inline double baseline_predict(const BaselineModel& model, std::span<const double> x) {
  double s = 0.0;
  for (const auto& tree : model.trees) s += predict_tree(tree, x);
  if (model.kind == EnsembleKind::random_forest)
    return s / static_cast<double>(model.trees.size());
  return model.learning_rate * s;
}

// --------------------------------------------------------------------------
// Path replay
// --------------------------------------------------------------------------

// f_b = alpha_b * f_{b-1} + beta_b * t_b for each ensemble flavor.
inline std::pair<double, double> path_coefficients(EnsembleKind kind, double lambda, int b) {
  switch (kind) {
    case EnsembleKind::boulevard:
      return {(b - 1.0) / b, lambda / b};
    case EnsembleKind::random_forest:
      return {(b - 1.0) / b, 1.0 / b};
    case EnsembleKind::gbt:
      return {1.0, lambda};
  }
  return {0.0, 0.0};
}

// Replays the per-iteration aggregate prediction on the rows of pts and
// calls visit(b, f_b) for b = 1..B.
template <typename Visit>
void ensemble_path(EnsembleKind kind, double lambda, std::span<const FittedTree> trees,
                   const Matrix& pts, Visit&& visit) {
  std::vector<double> f(pts.rows, 0.0);
  for (int b = 1; b <= static_cast<int>(trees.size()); ++b) {
    const auto [alpha, beta] = path_coefficients(kind, lambda, b);
    for (int i = 0; i < pts.rows; ++i)
      f[i] = alpha * f[i] + beta * predict_tree(trees[b - 1], pts.row(i));
    visit(b, std::span<const double>(f));
  }
}

// Per-iteration distance to a fixed point (infinity norm) when one is given,
// otherwise the recorded update step norms.
inline std::vector<double> convergence_trace(const BoulevardModel& model, const Matrix& x,
                                             const FixedPoint* fp = nullptr) {
  if (fp == nullptr) {
    std::vector<double> steps;
    steps.reserve(model.trace.size());
    for (const auto& s : model.trace) steps.push_back(s.step_norm);
    return steps;
  }
  std::vector<double> dist;
  dist.reserve(model.trees.size());
  ensemble_path(EnsembleKind::boulevard, model.config.lambda, model.trees, x,
                [&](int, std::span<const double> f) {
                  double worst = 0.0;
                  for (int i = 0; i < static_cast<int>(f.size()); ++i)
                    worst = std::max(worst, std::abs(f[i] - fp->y_star[i]));
                  dist.push_back(worst);
                });
  return dist;
}

// --------------------------------------------------------------------------
// Flat text serialization (hexfloat doubles, bit-exact round trip)
// --------------------------------------------------------------------------

namespace detail {

inline std::string hex(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_double(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str()) throw std::runtime_error("model file: bad number '" + tok + "'");
  return v;
}

struct TokenReader {
  std::istream& in;
  std::string next() {
    std::string tok;
    if (!(in >> tok)) throw std::runtime_error("model file: unexpected end of input");
    return tok;
  }
  double next_double() { return parse_double(next()); }
  long next_long() { return std::stol(next()); }
  void expect(const std::string& word) {
    const std::string tok = next();
    if (tok != word)
      throw std::runtime_error("model file: expected '" + word + "', got '" + tok + "'");
  }
};

inline void write_tree(std::ostream& os, const FittedTree& tree) {
  os << "tree\n";
  os << "subsample " << tree.subsample.indices.size() << " " << hex(tree.subsample.rate);
  for (int i : tree.subsample.indices) os << " " << i;
  os << "\n";
  const auto& nodes = tree.structure.nodes();
  os << "nodes " << nodes.size() << "\n";
  for (const auto& nd : nodes) {
    if (nd.feature >= 0)
      os << "s " << nd.feature << " " << hex(nd.threshold) << " " << nd.left << " " << nd.right
         << "\n";
    else
      os << "l " << nd.leaf_id << "\n";
  }
  os << "leaves " << tree.structure.leaf_count() << "\n";
  for (int l = 0; l < tree.structure.leaf_count(); ++l) {
    const Cell& c = tree.structure.leaf_cell(l);
    os << "c " << hex(tree.leaf_values[l]);
    for (double v : c.lower) os << " " << hex(v);
    for (double v : c.upper) os << " " << hex(v);
    os << "\n";
  }
}

inline FittedTree read_tree(TokenReader& r, int dim) {
  r.expect("tree");
  r.expect("subsample");
  const long m = r.next_long();
  FittedTree tree;
  tree.subsample.rate = r.next_double();
  tree.subsample.indices.resize(m);
  for (long i = 0; i < m; ++i) tree.subsample.indices[i] = static_cast<int>(r.next_long());
  r.expect("nodes");
  const long n_nodes = r.next_long();
  std::vector<TreeNode> nodes(n_nodes);
  for (long i = 0; i < n_nodes; ++i) {
    const std::string tag = r.next();
    if (tag == "s") {
      nodes[i].feature = static_cast<int>(r.next_long());
      nodes[i].threshold = r.next_double();
      nodes[i].left = static_cast<int>(r.next_long());
      nodes[i].right = static_cast<int>(r.next_long());
    } else if (tag == "l") {
      nodes[i].leaf_id = static_cast<int>(r.next_long());
    } else {
      throw std::runtime_error("model file: bad node tag '" + tag + "'");
    }
  }
  r.expect("leaves");
  const long n_leaves = r.next_long();
  std::vector<Cell> cells(n_leaves);
  tree.leaf_values.resize(n_leaves);
  for (long l = 0; l < n_leaves; ++l) {
    r.expect("c");
    tree.leaf_values[l] = r.next_double();
    cells[l].lower.resize(dim);
    cells[l].upper.resize(dim);
    for (int j = 0; j < dim; ++j) cells[l].lower[j] = r.next_double();
    for (int j = 0; j < dim; ++j) cells[l].upper[j] = r.next_double();
  }
  tree.structure = TreeStructure(dim, std::move(nodes), std::move(cells));
  return tree;
}

inline void write_scaling(std::ostream& os, const std::optional<FeatureScaling>& scaling) {
  if (!scaling) {
    os << "scaling 0\n";
    return;
  }
  os << "scaling " << scaling->min.size();
  for (std::size_t j = 0; j < scaling->min.size(); ++j)
    os << " " << hex(scaling->min[j]) << " " << hex(scaling->max[j]);
  os << "\n";
}

inline std::optional<FeatureScaling> read_scaling(TokenReader& r) {
  r.expect("scaling");
  const long d = r.next_long();
  if (d == 0) return std::nullopt;
  FeatureScaling s;
  s.min.resize(d);
  s.max.resize(d);
  for (long j = 0; j < d; ++j) {
    s.min[j] = r.next_double();
    s.max[j] = r.next_double();
  }
  return s;
}

}  // namespace detail

inline void save_model(std::ostream& os, const BoulevardModel& model, int dim) {
  os << "blvdmodel 1 "
     << (model.config.structure_mode == StructureMode::randomized ? "rblv" : "blv") << "\n";
  os << "dim " << dim << " trees " << model.trees.size() << "\n";
  os << "lambda " << detail::hex(model.config.lambda) << " theta "
     << detail::hex(model.config.theta) << " truncation " << detail::hex(model.config.truncation_m)
     << " seed " << model.config.seed << "\n";
  os << "constraints " << detail::hex(model.config.constraints.max_leaf_diameter) << " "
     << model.config.constraints.min_leaf_samples << " " << model.config.constraints.max_depth
     << "\n";
  detail::write_scaling(os, model.scaling);
  for (const auto& tree : model.trees) detail::write_tree(os, tree);
  os << "end\n";
}

inline void save_model(std::ostream& os, const BaselineModel& model, int dim) {
  const char* kind = model.kind == EnsembleKind::random_forest ? "rf"
                     : model.subsampled                        ? "sgbt"
                                                               : "gbt";
  os << "blvdmodel 1 " << kind << "\n";
  os << "dim " << dim << " trees " << model.trees.size() << "\n";
  os << "lambda " << detail::hex(model.learning_rate) << " theta " << detail::hex(model.theta)
     << " truncation " << detail::hex(0.0) << " seed " << model.seed << "\n";
  os << "constraints " << detail::hex(model.constraints.max_leaf_diameter) << " "
     << model.constraints.min_leaf_samples << " " << model.constraints.max_depth << "\n";
  detail::write_scaling(os, model.scaling);
  for (const auto& tree : model.trees) detail::write_tree(os, tree);
  os << "end\n";
}

struct LoadedModel {
  std::string kind;  // rblv, blv, rf, gbt, sgbt
  int dim = 0;
  std::variant<BoulevardModel, BaselineModel> model;

  double predict(std::span<const double> x, PredictionScale scale) const {
    if (const auto* blv = std::get_if<BoulevardModel>(&model))
      return boulevard_predict(*blv, x, scale);
    return baseline_predict(std::get<BaselineModel>(model), x);
  }

  const std::optional<FeatureScaling>& feature_scaling() const {
    if (const auto* blv = std::get_if<BoulevardModel>(&model)) return blv->scaling;
    return std::get<BaselineModel>(model).scaling;
  }
};

inline LoadedModel load_model(std::istream& in) {
  detail::TokenReader r{in};
  r.expect("blvdmodel");
  r.expect("1");
  LoadedModel loaded;
  loaded.kind = r.next();
  r.expect("dim");
  loaded.dim = static_cast<int>(r.next_long());
  r.expect("trees");
  const long n_trees = r.next_long();
  r.expect("lambda");
  const double lambda = r.next_double();
  r.expect("theta");
  const double theta = r.next_double();
  r.expect("truncation");
  const double truncation = r.next_double();
  r.expect("seed");
  const std::uint64_t seed = static_cast<std::uint64_t>(r.next_long());
  r.expect("constraints");
  StructureConstraints cons;
  cons.max_leaf_diameter = r.next_double();
  cons.min_leaf_samples = static_cast<int>(r.next_long());
  cons.max_depth = static_cast<int>(r.next_long());
  auto scaling = detail::read_scaling(r);

  std::vector<FittedTree> trees;
  trees.reserve(n_trees);
  for (long t = 0; t < n_trees; ++t) trees.push_back(detail::read_tree(r, loaded.dim));
  r.expect("end");

  if (loaded.kind == "rblv" || loaded.kind == "blv") {
    BoulevardModel m;
    m.config.lambda = lambda;
    m.config.theta = theta;
    m.config.truncation_m = truncation;
    m.config.seed = seed;
    m.config.n_trees = static_cast<int>(n_trees);
    m.config.structure_mode =
        loaded.kind == "rblv" ? StructureMode::randomized : StructureMode::gradient_adaptive;
    m.config.constraints = cons;
    m.trees = std::move(trees);
    m.scaling = std::move(scaling);
    loaded.model = std::move(m);
  } else if (loaded.kind == "rf" || loaded.kind == "gbt" || loaded.kind == "sgbt") {
    BaselineModel m;
    m.kind = loaded.kind == "rf" ? EnsembleKind::random_forest : EnsembleKind::gbt;
    m.learning_rate = lambda;
    m.theta = theta;
    m.subsampled = loaded.kind == "sgbt" || (loaded.kind == "rf" && theta < 1.0);
    m.seed = seed;
    m.constraints = cons;
    m.trees = std::move(trees);
    m.scaling = std::move(scaling);
    loaded.model = std::move(m);
  } else {
    throw std::runtime_error("model file: unknown kind '" + loaded.kind + "'");
  }
  return loaded;
}

inline std::string serialize_model(const BoulevardModel& model, int dim) {
  std::ostringstream os;
  save_model(os, model, dim);
  return os.str();
}

}  // namespace boulevard
