#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "boulevard/boosting.hpp"
#include "boulevard/dataset.hpp"
#include "boulevard/rng.hpp"
#include "boulevard/trees.hpp"

namespace boulevard {

// --------------------------------------------------------------------------
// Synthetic data generators
// --------------------------------------------------------------------------

enum class FunctionId { f1, f2, mean5 };

inline int min_arity(FunctionId f) {
  switch (f) {
    case FunctionId::f1: return 4;
    case FunctionId::f2: return 7;
    case FunctionId::mean5: return 5;
  }
  return 0;
}

inline const char* function_name(FunctionId f) {
  switch (f) {
    case FunctionId::f1: return "f1";
    case FunctionId::f2: return "f2";
    case FunctionId::mean5: return "mean5";
  }
  return "?";
}

inline FunctionId parse_function(const std::string& s) {
  if (s == "f1") return FunctionId::f1;
  if (s == "f2") return FunctionId::f2;
  if (s == "mean5") return FunctionId::mean5;
  throw std::invalid_argument("unknown function '" + s + "'");
}

inline double signal_value(FunctionId f, std::span<const double> x) {
  switch (f) {
    case FunctionId::f1:
      return x[0] + 3.0 * x[1] + x[2] * x[3];
    case FunctionId::f2: {
      const double u3 = 1.0 - x[2], u6 = 1.0 - x[5];
      return x[0] + 3.0 * x[1] + u3 * u3 + x[3] * x[4] + u6 * u6 * u6 * u6 * u6 * u6 + x[6];
    }
    case FunctionId::mean5:
      return x[0] + 3.0 * x[1] + x[2] * x[2] + 2.0 * x[3] * x[4];
  }
  return 0.0;
}

enum class ErrorLaw { none, uniform, rademacher, normal, mixed_neg1_unif02 };

struct ErrorSpec {
  ErrorLaw law = ErrorLaw::none;
  double param = 1.0;  // uniform: half-width a of Unif[-a,a]; normal: sigma

  std::string name() const {
    char buf[48];
    switch (law) {
      case ErrorLaw::none: return "none";
      case ErrorLaw::uniform:
        std::snprintf(buf, sizeof buf, "uniform%g", param);
        return buf;
      case ErrorLaw::rademacher: return "rademacher";
      case ErrorLaw::normal:
        std::snprintf(buf, sizeof buf, "normal%g", param);
        return buf;
      case ErrorLaw::mixed_neg1_unif02: return "mixed";
    }
    return "?";
  }
};

inline ErrorSpec parse_error_spec(const std::string& s) {
  const auto colon = s.find(':');
  const std::string head = s.substr(0, colon);
  const double param = colon == std::string::npos ? 1.0 : std::stod(s.substr(colon + 1));
  if (head == "none") return {ErrorLaw::none, 0.0};
  if (head == "uniform") return {ErrorLaw::uniform, param};
  if (head == "rademacher") return {ErrorLaw::rademacher, 1.0};
  if (head == "normal") return {ErrorLaw::normal, param};
  if (head == "mixed") return {ErrorLaw::mixed_neg1_unif02, 1.0};
  throw std::invalid_argument("unknown error law '" + s + "'");
}

inline double draw_error(const ErrorSpec& spec, std::mt19937_64& rng) {
  switch (spec.law) {
    case ErrorLaw::none:
      return 0.0;
    case ErrorLaw::uniform:
      return uniform_real(rng, -spec.param, spec.param);
    case ErrorLaw::rademacher:
      return uniform01(rng) < 0.5 ? -1.0 : 1.0;
    case ErrorLaw::normal:
      return spec.param * normal01(rng);
    case ErrorLaw::mixed_neg1_unif02:
      return uniform01(rng) < 0.5 ? -1.0 : uniform_real(rng, 0.0, 2.0);
  }
  return 0.0;
}

struct GeneratorSpec {
  FunctionId function_id = FunctionId::mean5;
  int n = 100;
  int d = 5;
  ErrorSpec error;
  std::uint64_t seed = 1;
};

// Covariates i.i.d. Unif[0,1]^d; returns the noiseless signal alongside y.
inline Dataset generate(const GeneratorSpec& spec) {
  if (spec.d < min_arity(spec.function_id))
    throw std::invalid_argument(std::string("function ") + function_name(spec.function_id) +
                                " needs d >= " + std::to_string(min_arity(spec.function_id)));
  if (spec.n < 1) throw std::invalid_argument("n must be >= 1");
  auto rng = make_rng(spec.seed);
  Dataset data;
  data.x = Matrix(spec.n, spec.d);
  for (double& v : data.x.values) v = uniform01(rng);
  data.y.resize(spec.n);
  data.signal.resize(spec.n);
  for (int i = 0; i < spec.n; ++i) {
    data.signal[i] = signal_value(spec.function_id, data.x.row(i));
    data.y[i] = data.signal[i] + draw_error(spec.error, rng);
  }
  return data;
}

// --------------------------------------------------------------------------
// CSV ingestion / emission
// --------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

inline double parse_cell(const std::string& cell, int line_no) {
  if (cell.empty())
    throw std::runtime_error("csv line " + std::to_string(line_no) + ": empty cell");
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size())
    throw std::runtime_error("csv line " + std::to_string(line_no) + ": non-numeric value '" +
                             cell + "'");
  return v;
}

inline std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

struct CsvDataset {
  Dataset data;
  std::vector<std::string> feature_names;
  std::optional<FeatureScaling> scaling;  // present when normalize was requested
};

// Parses a numeric CSV with a header row. The target column is required; a
// column named like signal_column (when present) is carried as the noiseless
// signal and excluded from the features.
inline CsvDataset load_csv(const std::string& path, const std::string& target_column,
                           bool normalize, const std::string& signal_column = "signal") {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("'" + path + "': empty file");
  const auto header = detail::split_csv_line(line);
  int target_idx = -1, signal_idx = -1;
  std::vector<int> feature_idx;
  CsvDataset out;
  for (int j = 0; j < static_cast<int>(header.size()); ++j) {
    if (header[j] == target_column) {
      target_idx = j;
    } else if (header[j] == signal_column) {
      signal_idx = j;
    } else {
      feature_idx.push_back(j);
      out.feature_names.push_back(header[j]);
    }
  }
  if (target_idx < 0)
    throw std::runtime_error("'" + path + "': no column named '" + target_column + "'");
  if (feature_idx.empty()) throw std::runtime_error("'" + path + "': no feature columns");

  std::vector<double> xs, ys, sig;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("csv line " + std::to_string(line_no) + ": expected " +
                               std::to_string(header.size()) + " cells, got " +
                               std::to_string(cells.size()));
    for (int j : feature_idx) xs.push_back(detail::parse_cell(cells[j], line_no));
    ys.push_back(detail::parse_cell(cells[target_idx], line_no));
    if (signal_idx >= 0) sig.push_back(detail::parse_cell(cells[signal_idx], line_no));
  }
  if (ys.empty()) throw std::runtime_error("'" + path + "': no data rows");

  out.data.x.rows = static_cast<int>(ys.size());
  out.data.x.cols = static_cast<int>(feature_idx.size());
  out.data.x.values = std::move(xs);
  out.data.y = std::move(ys);
  out.data.signal = std::move(sig);
  if (normalize) {
    out.scaling = FeatureScaling::fit(out.data.x);
    out.scaling->apply(out.data.x);
  }
  return out;
}

inline void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  for (int j = 0; j < data.d(); ++j) out << "x" << (j + 1) << ",";
  out << "y";
  if (!data.signal.empty()) out << ",signal";
  out << "\n";
  for (int i = 0; i < data.n(); ++i) {
    for (int j = 0; j < data.d(); ++j) out << detail::format_value(data.x.at(i, j)) << ",";
    out << detail::format_value(data.y[i]);
    if (!data.signal.empty()) out << "," << detail::format_value(data.signal[i]);
    out << "\n";
  }
}

// --------------------------------------------------------------------------
// Model recipes and cross validation
// --------------------------------------------------------------------------

// Flag-level description of one ensemble fit; mode is one of
// rblv | blv | gbt | sgbt | rf.
struct ModelRecipe {
  std::string mode = "rblv";
  double lambda = 0.8;
  double theta = 0.8;
  int n_trees = 100;
  StructureConstraints constraints;
};

struct RecipeFit {
  EnsembleKind kind = EnsembleKind::boulevard;
  double lambda = 0.8;
  bool rescale = false;
  std::vector<FittedTree> trees;
};

// The leaf floor k counts the points a builder actually sees: the subsample
// for rblv/blv/sgbt/rf, the full sample for gbt, whose floor is therefore
// scaled up by 1/theta to keep leaf granularity comparable.
inline RecipeFit fit_recipe(const Matrix& x, std::span<const double> y, const ModelRecipe& recipe,
                            std::uint64_t seed) {
  auto rng = make_rng(seed);
  RecipeFit fit;
  fit.lambda = recipe.lambda;
  if (recipe.mode == "rblv" || recipe.mode == "blv") {
    BoulevardConfig cfg;
    cfg.lambda = recipe.lambda;
    cfg.theta = recipe.theta;
    cfg.n_trees = recipe.n_trees;
    cfg.structure_mode =
        recipe.mode == "rblv" ? StructureMode::randomized : StructureMode::gradient_adaptive;
    cfg.constraints = recipe.constraints;
    cfg.seed = seed;
    BoulevardModel m = boulevard_fit(x, y, cfg, rng);
    fit.kind = EnsembleKind::boulevard;
    fit.rescale = true;
    fit.trees = std::move(m.trees);
  } else if (recipe.mode == "gbt") {
    StructureConstraints cons = recipe.constraints;
    cons.min_leaf_samples = std::max(
        1, static_cast<int>(std::lround(recipe.constraints.min_leaf_samples / recipe.theta)));
    BaselineModel m = gbt_fit(x, y, recipe.lambda, recipe.n_trees, cons, std::nullopt, rng);
    fit.kind = EnsembleKind::gbt;
    fit.trees = std::move(m.trees);
  } else if (recipe.mode == "sgbt") {
    BaselineModel m =
        gbt_fit(x, y, recipe.lambda, recipe.n_trees, recipe.constraints, recipe.theta, rng);
    fit.kind = EnsembleKind::gbt;
    fit.trees = std::move(m.trees);
  } else if (recipe.mode == "rf") {
    BaselineModel m = rf_fit(x, y, recipe.n_trees, recipe.constraints, recipe.theta, rng);
    fit.kind = EnsembleKind::random_forest;
    fit.lambda = 1.0;
    fit.trees = std::move(m.trees);
  } else {
    throw std::invalid_argument("unknown mode '" + recipe.mode + "'");
  }
  return fit;
}

// Per-iteration predictions on pts, on the model's reporting scale.
template <typename Visit>
void recipe_path(const RecipeFit& fit, const Matrix& pts, Visit&& visit) {
  const double factor = fit.rescale ? (1.0 + fit.lambda) / fit.lambda : 1.0;
  std::vector<double> scaled(pts.rows);
  ensemble_path(fit.kind, fit.lambda, fit.trees, pts,
                [&](int b, std::span<const double> f) {
                  for (int i = 0; i < pts.rows; ++i) scaled[i] = factor * f[i];
                  visit(b, std::span<const double>(scaled));
                });
}

inline double mse_against(std::span<const double> pred, std::span<const double> truth) {
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

struct FoldCurves {
  std::vector<double> train_mse;
  std::vector<double> test_mse;
};

struct CvResult {
  std::vector<FoldCurves> folds;
  FoldCurves mean;
};

// Deterministic shuffled fold assignment; fold sizes differ by at most one.
inline std::vector<int> fold_assignment(int n, int k, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[i], perm[j]);
  }
  std::vector<int> fold(n);
  for (int i = 0; i < n; ++i) fold[perm[i]] = i % k;
  return fold;
}

inline CvResult kfold_cv(const Dataset& data, int k, const ModelRecipe& recipe,
                         std::uint64_t seed) {
  const int n = data.n();
  if (k < 2) throw std::invalid_argument("k must be >= 2");
  if (k > n) throw std::invalid_argument("k must not exceed n");
  const std::vector<int> fold = fold_assignment(n, k, seed);

  CvResult result;
  result.folds.resize(k);
  for (int f = 0; f < k; ++f) {
    std::vector<int> train_rows, test_rows;
    for (int i = 0; i < n; ++i) (fold[i] == f ? test_rows : train_rows).push_back(i);
    Matrix xtr(static_cast<int>(train_rows.size()), data.d());
    Matrix xte(static_cast<int>(test_rows.size()), data.d());
    std::vector<double> ytr(train_rows.size()), yte(test_rows.size());
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
      for (int j = 0; j < data.d(); ++j) xtr.at(static_cast<int>(i), j) = data.x.at(train_rows[i], j);
      ytr[i] = data.y[train_rows[i]];
    }
    for (std::size_t i = 0; i < test_rows.size(); ++i) {
      for (int j = 0; j < data.d(); ++j) xte.at(static_cast<int>(i), j) = data.x.at(test_rows[i], j);
      yte[i] = data.y[test_rows[i]];
    }
    const RecipeFit fitted = fit_recipe(xtr, ytr, recipe, derive_seed(seed, f));
    FoldCurves& curves = result.folds[f];
    recipe_path(fitted, xtr, [&](int, std::span<const double> p) {
      curves.train_mse.push_back(mse_against(p, ytr));
    });
    recipe_path(fitted, xte, [&](int, std::span<const double> p) {
      curves.test_mse.push_back(mse_against(p, yte));
    });
  }
  result.mean.train_mse.assign(recipe.n_trees, 0.0);
  result.mean.test_mse.assign(recipe.n_trees, 0.0);
  for (const auto& fc : result.folds)
    for (int b = 0; b < recipe.n_trees; ++b) {
      result.mean.train_mse[b] += fc.train_mse[b] / k;
      result.mean.test_mse[b] += fc.test_mse[b] / k;
    }
  return result;
}

}  // namespace boulevard
