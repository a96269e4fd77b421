#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "boulevard/bench.hpp"
#include "boulevard/boosting.hpp"
#include "boulevard/contraction.hpp"
#include "boulevard/inference.hpp"
#include "boulevard/kernel.hpp"
#include "boulevard/parallel.hpp"
#include "boulevard/stats.hpp"

namespace boulevard {

// The 4 query points used by the KRR comparison runs.
inline constexpr std::array<std::array<double, 5>, 4> kKrrTestPoints = {{
    {0.1, 0.1, 0.1, 0.1, 0.1},
    {0.6, 0.9, 0.8, 0.9, 0.7},
    {0.1, 0.1, 0.9, 0.9, 0.9},
    {0.9, 0.1, 0.1, 0.1, 0.9},
}};

// The 10 query points used by the limiting-distribution, interval and
// variance-scaling runs.
inline constexpr std::array<std::array<double, 5>, 10> kInferenceTestPoints = {{
    {0.5, 0.5, 0.5, 0.5, 0.5},
    {0.2, 0.2, 0.2, 0.2, 0.2},
    {0.1, 0.9, 0.1, 0.9, 0.1},
    {0.1, 0.1, 0.9, 0.9, 0.9},
    {0.9, 0.1, 0.1, 0.1, 0.9},
    {0.5, 0.1, 0.9, 0.1, 0.5},
    {0.3, 0.2, 0.7, 0.8, 0.6},
    {0.4, 0.2, 0.3, 0.6, 0.7},
    {0.2, 0.7, 0.8, 0.3, 0.5},
    {0.3, 0.6, 0.4, 0.9, 0.5},
}};

// Tidy long-format sink: experiment,replicate,method,index,metric,value.
class TidyWriter {
 public:
  TidyWriter(const std::string& path, std::string experiment)
      : out_(path), experiment_(std::move(experiment)) {
    if (!out_) throw std::runtime_error("cannot write '" + path + "'");
    out_ << "experiment,replicate,method,index,metric,value\n";
  }

  void row(long replicate, const std::string& method, long index, const std::string& metric,
           double value) {
    out_ << experiment_ << "," << replicate << "," << method << "," << index << "," << metric
         << "," << detail::format_value(value) << "\n";
  }

 private:
  std::ofstream out_;
  std::string experiment_;
};

struct ExperimentConfig {
  std::string name;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  bool full = false;
  std::optional<int> n, trees, leaf_size, depth, replicates;
  std::optional<double> lambda, theta;
  std::optional<std::string> error;      // error-law override, e.g. "uniform:1"
  std::optional<std::string> data_path;  // CSV input for mse-curves
};

// --------------------------------------------------------------------------
// krr-compare: Boulevard paths vs the kernel-ridge fixed point
// --------------------------------------------------------------------------

struct KrrCompareParams {
  int n = 200;
  int d = 5;
  double lambda = 0.8;
  double theta = 0.8;
  int trees = 100;  // ensemble size B; the kernel reuses the same B trees
  int leaf_size = 10;
  int depth = 30;
  int repetitions = 20;
  std::uint64_t seed = 1;
};

struct KrrComparePoint {
  double blv_raw = 0.0;    // Boulevard raw prediction
  double krr = 0.0;        // kernel ridge prediction from the MC kernel
  double se_combined = 0.0;
};

struct KrrCompareRepetition {
  std::vector<KrrComparePoint> points;
  double conv_at_100 = 0.0;  // ||Y_hat_b - Y*||_inf at b = 100
  double conv_final = 0.0;   // same at b = B
  std::vector<double> conv_curve;  // sampled every 10 iterations
};

struct KrrCompareResult {
  KrrCompareParams params;
  std::vector<KrrCompareRepetition> repetitions;
};

inline KrrCompareResult run_krr_compare(const KrrCompareParams& p, TidyWriter* w) {
  KrrCompareResult result;
  result.params = p;
  result.repetitions.resize(p.repetitions);

  parallel_for(static_cast<std::size_t>(p.repetitions), [&](std::size_t rep) {
    const std::uint64_t rep_seed = derive_seed(p.seed, rep);
    GeneratorSpec gen;
    gen.function_id = FunctionId::mean5;
    gen.n = p.n;
    gen.d = p.d;
    gen.error = {ErrorLaw::uniform, 1.0};
    gen.seed = rep_seed;
    const Dataset data = generate(gen);

    BoulevardConfig cfg;
    cfg.lambda = p.lambda;
    cfg.theta = p.theta;
    cfg.n_trees = p.trees;
    cfg.structure_mode = StructureMode::randomized;
    cfg.constraints.min_leaf_samples = p.leaf_size;
    cfg.constraints.max_depth = p.depth;
    cfg.seed = derive_seed(rep_seed, 1);
    const BoulevardModel model = boulevard_fit(data.x, data.y, cfg);

    // Kernel and influence vectors estimated from the same trees the
    // ensemble used, the shared-sampler Monte Carlo estimate. The
    // convergence trace targets the fixed point of the unsymmetrized tree
    // average, the limit of this specific run.
    const KernelEstimate kest = estimate_kernel_from_trees(data.x, model.trees);
    Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(data.y.data(), data.n());
    const KrrSolver solver(kest.matrix, y, p.lambda);
    const FixedPoint fp =
        fixed_point_unsymmetrized(raw_structure_average(data.x, model.trees), y, p.lambda);

    KrrCompareRepetition rr;
    rr.points.resize(kKrrTestPoints.size());

    // Batch-means standard errors: the B trees split into 10 batches, each
    // giving an independent kernel + influence estimate and KRR prediction.
    const int n_batches = 10;
    std::vector<std::vector<double>> batch_preds(kKrrTestPoints.size());
    for (int g = 0; g < n_batches; ++g) {
      const std::size_t lo = static_cast<std::size_t>(g) * model.trees.size() / n_batches;
      const std::size_t hi = static_cast<std::size_t>(g + 1) * model.trees.size() / n_batches;
      const std::span<const FittedTree> chunk(model.trees.data() + lo, hi - lo);
      const KernelEstimate kg = estimate_kernel_from_trees(data.x, chunk);
      const KrrSolver sg(kg.matrix, y, p.lambda);
      for (std::size_t q = 0; q < kKrrTestPoints.size(); ++q) {
        Eigen::VectorXd kx = Eigen::VectorXd::Zero(data.n());
        for (const auto& tree : chunk) {
          const StructureVector sv =
              structure_vector(tree.structure, data.x, tree.subsample, kKrrTestPoints[q]);
          for (int i : sv.indices) kx[i] += sv.weight / static_cast<double>(chunk.size());
        }
        batch_preds[q].push_back(sg.predict(kx));
      }
    }

    for (std::size_t q = 0; q < kKrrTestPoints.size(); ++q) {
      const std::span<const double> query(kKrrTestPoints[q]);
      const EmpiricalInfluence inf = empirical_influence(model, data.x, query);
      Eigen::VectorXd kx = Eigen::Map<const Eigen::VectorXd>(inf.k_hat.data(), data.n());
      KrrComparePoint& pt = rr.points[q];
      pt.blv_raw = boulevard_predict(model, query, PredictionScale::raw);
      pt.krr = solver.predict(kx);
      const double se_krr =
          sample_sd(batch_preds[q]) / std::sqrt(static_cast<double>(n_batches));
      // Boulevard tail fluctuation: per-tree predictions over the second
      // half of the run, nearly stationary after convergence.
      std::vector<double> tail;
      tail.reserve(model.trees.size() / 2);
      for (std::size_t b = model.trees.size() / 2; b < model.trees.size(); ++b)
        tail.push_back(predict_tree(model.trees[b], query));
      const double se_blv = p.lambda * sample_sd(tail) /
                            std::sqrt(static_cast<double>(model.trees.size()));
      pt.se_combined = std::sqrt(se_krr * se_krr + se_blv * se_blv);
    }

    const std::vector<double> conv = convergence_trace(model, data.x, &fp);
    rr.conv_at_100 = conv[std::min<std::size_t>(99, conv.size() - 1)];
    rr.conv_final = conv.back();
    for (std::size_t b = 9; b < conv.size(); b += 10) rr.conv_curve.push_back(conv[b]);
    result.repetitions[rep] = std::move(rr);
  });

  if (w != nullptr) {
    for (int rep = 0; rep < p.repetitions; ++rep) {
      const auto& rr = result.repetitions[rep];
      for (std::size_t q = 0; q < rr.points.size(); ++q) {
        w->row(rep, "rblv", static_cast<long>(q), "prediction_raw", rr.points[q].blv_raw);
        w->row(rep, "krr", static_cast<long>(q), "prediction", rr.points[q].krr);
        w->row(rep, "krr", static_cast<long>(q), "se_combined", rr.points[q].se_combined);
      }
      for (std::size_t i = 0; i < rr.conv_curve.size(); ++i)
        w->row(rep, "rblv", static_cast<long>((i + 1) * 10), "dist_to_fixed_point",
               rr.conv_curve[i]);
    }
  }
  return result;
}

// --------------------------------------------------------------------------
// limiting-dist: KS normality harness over replicated fits
// --------------------------------------------------------------------------

struct LimitingDistParams {
  int n = 1000;
  int d = 5;
  double lambda = 0.5;
  double theta = 0.8;
  int trees = 500;
  int leaf_size = 10;
  int depth = 30;
  int replicates = 200;
  std::vector<ErrorSpec> laws = {{ErrorLaw::normal, 1.0},
                                 {ErrorLaw::uniform, 1.0},
                                 {ErrorLaw::rademacher, 1.0},
                                 {ErrorLaw::mixed_neg1_unif02, 1.0}};
  std::uint64_t seed = 1;
};

struct LimitingPoint {
  double ks_statistic = 0.0;
  double p_value = 0.0;
  double mean = 0.0;
  double sd = 0.0;
};

struct LimitingLaw {
  ErrorSpec law;
  bool ks_skipped = false;  // degenerate when the law is noise-free
  std::vector<LimitingPoint> points;
  int points_passing(double p_threshold) const {
    int c = 0;
    for (const auto& pt : points) c += pt.p_value > p_threshold ? 1 : 0;
    return c;
  }
};

struct LimitingDistResult {
  LimitingDistParams params;
  std::vector<LimitingLaw> laws;
};

inline LimitingDistResult run_limiting_dist(const LimitingDistParams& p, TidyWriter* w) {
  LimitingDistResult result;
  result.params = p;
  const int n_points = static_cast<int>(kInferenceTestPoints.size());

  for (std::size_t li = 0; li < p.laws.size(); ++li) {
    const ErrorSpec law = p.laws[li];
    std::vector<std::vector<double>> preds(p.replicates, std::vector<double>(n_points));
    parallel_for(static_cast<std::size_t>(p.replicates), [&](std::size_t rep) {
      const std::uint64_t rep_seed =
          derive_seed(p.seed, li * static_cast<std::size_t>(p.replicates) + rep);
      GeneratorSpec gen;
      gen.function_id = FunctionId::mean5;
      gen.n = p.n;
      gen.d = p.d;
      gen.error = law;
      gen.seed = rep_seed;
      const Dataset data = generate(gen);
      BoulevardConfig cfg;
      cfg.lambda = p.lambda;
      cfg.theta = p.theta;
      cfg.n_trees = p.trees;
      cfg.structure_mode = StructureMode::randomized;
      cfg.constraints.min_leaf_samples = p.leaf_size;
      cfg.constraints.max_depth = p.depth;
      cfg.seed = derive_seed(rep_seed, 1);
      const BoulevardModel model = boulevard_fit(data.x, data.y, cfg);
      for (int q = 0; q < n_points; ++q)
        preds[rep][q] =
            boulevard_predict(model, kInferenceTestPoints[q], PredictionScale::rescaled);
    });

    LimitingLaw lr;
    lr.law = law;
    lr.ks_skipped = law.law == ErrorLaw::none;
    lr.points.resize(n_points);
    std::vector<double> column(p.replicates);
    for (int q = 0; q < n_points; ++q) {
      for (int rep = 0; rep < p.replicates; ++rep) column[rep] = preds[rep][q];
      LimitingPoint& pt = lr.points[q];
      pt.mean = mean(column);
      pt.sd = sample_sd(column);
      if (!lr.ks_skipped) {
        const KsResult ks = ks_normality(column);
        pt.ks_statistic = ks.statistic;
        pt.p_value = ks.p_value;
      }
    }
    result.laws.push_back(std::move(lr));

    if (w != nullptr) {
      const std::string method = law.name();
      for (int rep = 0; rep < p.replicates; ++rep)
        for (int q = 0; q < n_points; ++q) w->row(rep, method, q, "prediction", preds[rep][q]);
      for (int q = 0; q < n_points; ++q) {
        const auto& pt = result.laws.back().points[q];
        w->row(-1, method, q, "mean", pt.mean);
        w->row(-1, method, q, "sd", pt.sd);
        if (!result.laws.back().ks_skipped) {
          w->row(-1, method, q, "ks_statistic", pt.ks_statistic);
          w->row(-1, method, q, "ks_p_value", pt.p_value);
        }
        w->row(-1, method, q, "ks_skipped", result.laws.back().ks_skipped ? 1.0 : 0.0);
      }
    }
  }
  return result;
}

// --------------------------------------------------------------------------
// reproduction-intervals: coverage against independent refits
// --------------------------------------------------------------------------

struct ReproductionParams {
  int n = 1000;
  int d = 5;
  double lambda = 0.5;
  double theta = 0.8;
  int trees = 2000;
  int leaf_size = 10;
  int depth = 30;
  int refits = 50;
  double level = 0.95;
  ErrorSpec error = {ErrorLaw::uniform, 1.0};
  std::uint64_t seed = 1;
};

struct CoveragePoint {
  ReproductionInterval interval;
  double truth = 0.0;     // noiseless signal at the point
  double coverage = 0.0;  // fraction of refit predictions inside the interval
};

struct ReproductionResult {
  ReproductionParams params;
  std::vector<CoveragePoint> points;
};

inline ReproductionResult run_reproduction_intervals(const ReproductionParams& p, TidyWriter* w) {
  const int n_points = static_cast<int>(kInferenceTestPoints.size());

  auto make_config = [&](std::uint64_t fit_seed) {
    BoulevardConfig cfg;
    cfg.lambda = p.lambda;
    cfg.theta = p.theta;
    cfg.n_trees = p.trees;
    cfg.structure_mode = StructureMode::randomized;
    cfg.constraints.min_leaf_samples = p.leaf_size;
    cfg.constraints.max_depth = p.depth;
    cfg.seed = fit_seed;
    return cfg;
  };
  auto make_data = [&](std::uint64_t data_seed) {
    GeneratorSpec gen;
    gen.function_id = FunctionId::mean5;
    gen.n = p.n;
    gen.d = p.d;
    gen.error = p.error;
    gen.seed = data_seed;
    return generate(gen);
  };

  ReproductionResult result;
  result.params = p;
  result.points.resize(n_points);

  const std::uint64_t base_seed = derive_seed(p.seed, 0);
  const Dataset base = make_data(base_seed);
  const BoulevardModel model =
      boulevard_fit(base.x, base.y, make_config(derive_seed(base_seed, 1)));
  for (int q = 0; q < n_points; ++q) {
    result.points[q].interval =
        reproduction_interval(model, base.x, base.y, kInferenceTestPoints[q], p.level);
    result.points[q].truth = signal_value(FunctionId::mean5, kInferenceTestPoints[q]);
  }

  std::vector<std::vector<double>> refit_preds(p.refits, std::vector<double>(n_points));
  parallel_for(static_cast<std::size_t>(p.refits), [&](std::size_t r) {
    const std::uint64_t rs = derive_seed(p.seed, r + 1);
    const Dataset data = make_data(rs);
    const BoulevardModel refit = boulevard_fit(data.x, data.y, make_config(derive_seed(rs, 1)));
    for (int q = 0; q < n_points; ++q)
      refit_preds[r][q] =
          boulevard_predict(refit, kInferenceTestPoints[q], PredictionScale::rescaled);
  });

  for (int q = 0; q < n_points; ++q) {
    int inside = 0;
    for (int r = 0; r < p.refits; ++r)
      inside += std::abs(refit_preds[r][q] - result.points[q].interval.center) <=
                        result.points[q].interval.half_width
                    ? 1
                    : 0;
    result.points[q].coverage = static_cast<double>(inside) / p.refits;
  }

  if (w != nullptr) {
    for (int q = 0; q < n_points; ++q) {
      const auto& cp = result.points[q];
      w->row(-1, "rblv", q, "center", cp.interval.center);
      w->row(-1, "rblv", q, "half_width", cp.interval.half_width);
      w->row(-1, "rblv", q, "sigma_hat", cp.interval.sigma_hat);
      w->row(-1, "rblv", q, "truth", cp.truth);
      w->row(-1, "rblv", q, "coverage", cp.coverage);
    }
    for (int r = 0; r < p.refits; ++r)
      for (int q = 0; q < n_points; ++q) w->row(r, "rblv", q, "refit_prediction", refit_preds[r][q]);
  }
  return result;
}

// --------------------------------------------------------------------------
// variance-scaling: prediction sd across error amplitudes
// --------------------------------------------------------------------------

struct VarianceScalingParams {
  int n = 1000;
  int d = 5;
  double lambda = 0.5;
  double theta = 0.8;
  int trees = 500;
  int leaf_size = 10;
  int depth = 30;
  int replicates = 200;
  std::vector<ErrorSpec> laws = {{ErrorLaw::uniform, 1.0},
                                 {ErrorLaw::uniform, 2.0},
                                 {ErrorLaw::uniform, 4.0}};
  std::uint64_t seed = 1;
};

struct VarianceScalingResult {
  VarianceScalingParams params;
  std::vector<std::vector<double>> sds;  // [law][point]
};

inline VarianceScalingResult run_variance_scaling(const VarianceScalingParams& p, TidyWriter* w) {
  VarianceScalingResult result;
  result.params = p;
  const int n_points = static_cast<int>(kInferenceTestPoints.size());

  for (std::size_t li = 0; li < p.laws.size(); ++li) {
    std::vector<std::vector<double>> preds(p.replicates, std::vector<double>(n_points));
    parallel_for(static_cast<std::size_t>(p.replicates), [&](std::size_t rep) {
      const std::uint64_t rep_seed =
          derive_seed(p.seed, li * static_cast<std::size_t>(p.replicates) + rep);
      GeneratorSpec gen;
      gen.function_id = FunctionId::mean5;
      gen.n = p.n;
      gen.d = p.d;
      gen.error = p.laws[li];
      gen.seed = rep_seed;
      const Dataset data = generate(gen);
      BoulevardConfig cfg;
      cfg.lambda = p.lambda;
      cfg.theta = p.theta;
      cfg.n_trees = p.trees;
      cfg.structure_mode = StructureMode::randomized;
      cfg.constraints.min_leaf_samples = p.leaf_size;
      cfg.constraints.max_depth = p.depth;
      cfg.seed = derive_seed(rep_seed, 1);
      const BoulevardModel model = boulevard_fit(data.x, data.y, cfg);
      for (int q = 0; q < n_points; ++q)
        preds[rep][q] =
            boulevard_predict(model, kInferenceTestPoints[q], PredictionScale::rescaled);
    });

    std::vector<double> sds(n_points);
    std::vector<double> column(p.replicates);
    for (int q = 0; q < n_points; ++q) {
      for (int rep = 0; rep < p.replicates; ++rep) column[rep] = preds[rep][q];
      sds[q] = sample_sd(column);
    }
    if (w != nullptr) {
      const std::string method = p.laws[li].name();
      for (int q = 0; q < n_points; ++q) w->row(-1, method, q, "prediction_sd", sds[q]);
    }
    result.sds.push_back(std::move(sds));
  }
  return result;
}

// --------------------------------------------------------------------------
// contraction-lab: stochastic contraction grid + default convergence
// --------------------------------------------------------------------------

struct ContractionLabParams {
  long horizon = 100000;
  double radius = 0.1;
  int trials = 200;
  int default_paths = 50;
  std::vector<long> t0_grid = {100, 1000, 10000};
  std::vector<double> noise_grid = {0.5, 1.0, 10.0};
  std::uint64_t seed = 1;
};

struct ContractionLabResult {
  ContractionLabParams params;
  std::vector<EscapeResult> grid;       // row-major over (t0, noise)
  std::vector<double> grid_noise;       // noise level per grid entry
  double default_median_final = 0.0;    // median |Z_T| over default-spec paths
  double default_decreasing_fraction = 0.0;  // |Z_T| < |Z_{T/10}|
};

inline ContractionLabResult run_contraction_lab(const ContractionLabParams& p, TidyWriter* w) {
  ContractionLabResult result;
  result.params = p;

  std::uint64_t counter = 0;
  for (long t0 : p.t0_grid) {
    if (t0 >= p.horizon) continue;  // infeasible under a shortened horizon
    for (double c : p.noise_grid) {
      ContractionSpec spec;
      spec.horizon = p.horizon;
      spec.noise_c = c;
      result.grid.push_back(
          escape_experiment(spec, p.radius, t0, p.trials, derive_seed(p.seed, counter++)));
      result.grid_noise.push_back(c);
    }
  }

  ContractionSpec def;
  def.horizon = p.horizon;
  std::vector<double> finals(p.default_paths), tenth(p.default_paths);
  parallel_for(static_cast<std::size_t>(p.default_paths), [&](std::size_t i) {
    auto rng = make_rng(derive_seed(p.seed, 1000000 + i));
    const ContractionPath path = simulate_contraction(def, rng);
    finals[i] = path.norm_at(def.horizon);
    tenth[i] = path.norm_at(def.horizon / 10);
  });
  result.default_median_final = median(finals);
  int dec = 0;
  for (int i = 0; i < p.default_paths; ++i) dec += finals[i] < tenth[i] ? 1 : 0;
  result.default_decreasing_fraction = static_cast<double>(dec) / p.default_paths;

  if (w != nullptr) {
    for (std::size_t g = 0; g < result.grid.size(); ++g) {
      const EscapeResult& er = result.grid[g];
      w->row(static_cast<long>(g), "contraction", er.t0, "noise_c", result.grid_noise[g]);
      w->row(static_cast<long>(g), "contraction", er.t0, "stay_fraction", er.stay_fraction);
      w->row(static_cast<long>(g), "contraction", er.t0, "kolmogorov_bound", er.bound);
    }
    w->row(-1, "contraction", 0, "default_median_final", result.default_median_final);
    w->row(-1, "contraction", 0, "default_decreasing_fraction",
           result.default_decreasing_fraction);
  }
  return result;
}

// --------------------------------------------------------------------------
// mse-curves: five-method error curves, synthetic or CSV 5-fold
// --------------------------------------------------------------------------

struct MseCurvesParams {
  int n = 2000;
  int d = 4;
  FunctionId function_id = FunctionId::f1;
  ErrorSpec error = {ErrorLaw::uniform, 1.0};
  double lambda = 0.8;        // Boulevard shrinkage
  double baseline_rate = 0.1; // additive GBT/SGBT learning rate
  double theta = 0.3;
  int trees = 300;
  int leaf_size = 20;
  int depth = 30;
  std::optional<std::string> data_path;  // when set: 5-fold CV on the CSV
  std::uint64_t seed = 1;
};

struct MseCurvesResult {
  MseCurvesParams params;
  std::vector<std::string> methods;
  std::vector<std::vector<double>> train_curves;  // [method][iteration]
  std::vector<std::vector<double>> test_curves;
  std::vector<double> final_test_mse;
};

// Shared method -> seed-stream mapping so a single-lambda sweep reproduces
// the mse-curves fits exactly.
inline std::uint64_t method_stream(const std::string& mode) {
  const std::vector<std::string> order = {"rf", "gbt", "sgbt", "blv", "rblv"};
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i] == mode) return 10 + i;
  throw std::invalid_argument("unknown mode '" + mode + "'");
}

inline MseCurvesResult run_mse_curves(const MseCurvesParams& p, TidyWriter* w) {
  MseCurvesResult result;
  result.params = p;
  result.methods = {"rf", "gbt", "sgbt", "blv", "rblv"};

  ModelRecipe base;
  base.lambda = p.lambda;
  base.theta = p.theta;
  base.n_trees = p.trees;
  base.constraints.min_leaf_samples = p.leaf_size;
  base.constraints.max_depth = p.depth;
  auto recipe_for = [&](const std::string& mode) {
    ModelRecipe recipe = base;
    recipe.mode = mode;
    if (mode == "gbt" || mode == "sgbt") recipe.lambda = p.baseline_rate;
    return recipe;
  };

  if (p.data_path) {
    const CsvDataset csv = load_csv(*p.data_path, "y", true);
    for (std::size_t mi = 0; mi < result.methods.size(); ++mi) {
      const ModelRecipe recipe = recipe_for(result.methods[mi]);
      const CvResult cv =
          kfold_cv(csv.data, 5, recipe, derive_seed(p.seed, method_stream(recipe.mode)));
      result.train_curves.push_back(cv.mean.train_mse);
      result.test_curves.push_back(cv.mean.test_mse);
      result.final_test_mse.push_back(cv.mean.test_mse.back());
    }
  } else {
    GeneratorSpec gen;
    gen.function_id = p.function_id;
    gen.n = p.n;
    gen.d = p.d;
    gen.error = p.error;
    gen.seed = derive_seed(p.seed, 900);
    const Dataset train = generate(gen);
    GeneratorSpec test_gen = gen;
    test_gen.error = {ErrorLaw::none, 0.0};
    test_gen.seed = derive_seed(p.seed, 901);
    const Dataset test = generate(test_gen);

    std::vector<std::vector<double>> train_curves(result.methods.size());
    std::vector<std::vector<double>> test_curves(result.methods.size());
    parallel_for(result.methods.size(), [&](std::size_t mi) {
      const ModelRecipe recipe = recipe_for(result.methods[mi]);
      const RecipeFit fit = fit_recipe(train.x, train.y, recipe,
                                       derive_seed(p.seed, method_stream(recipe.mode)));
      recipe_path(fit, train.x, [&](int, std::span<const double> pred) {
        train_curves[mi].push_back(mse_against(pred, train.y));
      });
      recipe_path(fit, test.x, [&](int, std::span<const double> pred) {
        test_curves[mi].push_back(mse_against(pred, test.signal));
      });
    });
    for (std::size_t mi = 0; mi < result.methods.size(); ++mi) {
      result.train_curves.push_back(std::move(train_curves[mi]));
      result.test_curves.push_back(std::move(test_curves[mi]));
      result.final_test_mse.push_back(result.test_curves.back().back());
    }
  }

  if (w != nullptr) {
    for (std::size_t mi = 0; mi < result.methods.size(); ++mi)
      for (std::size_t b = 0; b < result.train_curves[mi].size(); ++b) {
        w->row(0, result.methods[mi], static_cast<long>(b + 1), "train_mse",
               result.train_curves[mi][b]);
        w->row(0, result.methods[mi], static_cast<long>(b + 1), "test_mse",
               result.test_curves[mi][b]);
      }
  }
  return result;
}

// --------------------------------------------------------------------------
// lambda sweep
// --------------------------------------------------------------------------

struct LambdaSweepResult {
  std::vector<double> lambdas;
  std::vector<std::string> methods;                 // blv, rblv
  std::vector<std::vector<double>> final_test_mse;  // [lambda][method]
};

inline LambdaSweepResult lambda_sweep(const MseCurvesParams& base_params,
                                      const std::vector<double>& lambdas, TidyWriter* w) {
  for (double l : lambdas)
    if (!(l > 0.0 && l < 1.0)) throw std::invalid_argument("lambda must lie in (0,1)");
  LambdaSweepResult result;
  result.lambdas = lambdas;
  result.methods = {"blv", "rblv"};

  GeneratorSpec gen;
  gen.function_id = base_params.function_id;
  gen.n = base_params.n;
  gen.d = base_params.d;
  gen.error = base_params.error;
  gen.seed = derive_seed(base_params.seed, 900);
  const Dataset train = generate(gen);
  GeneratorSpec test_gen = gen;
  test_gen.error = {ErrorLaw::none, 0.0};
  test_gen.seed = derive_seed(base_params.seed, 901);
  const Dataset test = generate(test_gen);

  for (std::size_t li = 0; li < lambdas.size(); ++li) {
    std::vector<double> finals;
    for (std::size_t mi = 0; mi < result.methods.size(); ++mi) {
      ModelRecipe recipe;
      recipe.mode = result.methods[mi];
      recipe.lambda = lambdas[li];
      recipe.theta = base_params.theta;
      recipe.n_trees = base_params.trees;
      recipe.constraints.min_leaf_samples = base_params.leaf_size;
      recipe.constraints.max_depth = base_params.depth;
      const RecipeFit fit =
          fit_recipe(train.x, train.y, recipe,
                     derive_seed(base_params.seed, method_stream(recipe.mode)));
      std::vector<double> test_curve;
      recipe_path(fit, test.x, [&](int, std::span<const double> pred) {
        test_curve.push_back(mse_against(pred, test.signal));
      });
      if (w != nullptr) {
        const std::string method = result.methods[mi] + "_lambda" +
                                   detail::format_value(lambdas[li]);
        for (std::size_t b = 0; b < test_curve.size(); ++b)
          w->row(0, method, static_cast<long>(b + 1), "test_mse", test_curve[b]);
      }
      finals.push_back(test_curve.back());
    }
    result.final_test_mse.push_back(std::move(finals));
  }
  return result;
}

// --------------------------------------------------------------------------
// Dispatcher
// --------------------------------------------------------------------------

using ExperimentResult =
    std::variant<MseCurvesResult, KrrCompareResult, LimitingDistResult, ReproductionResult,
                 VarianceScalingResult, ContractionLabResult, LambdaSweepResult>;

struct RunRecord {
  std::string experiment;
  nlohmann::json manifest;
  std::string results_path;
  ExperimentResult result;
};

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {
      "mse-curves",           "krr-compare",      "limiting-dist",
      "reproduction-intervals", "variance-scaling", "contraction-lab"};
  return names;
}

inline RunRecord run_experiment(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  const std::string results_path = cfg.out_dir + "/results.csv";
  TidyWriter writer(results_path, cfg.name);

  nlohmann::json manifest;
  manifest["experiment"] = cfg.name;
  manifest["seed"] = cfg.seed;
  manifest["full"] = cfg.full;
  RunRecord record;
  record.experiment = cfg.name;
  record.results_path = results_path;

  if (cfg.name == "mse-curves") {
    MseCurvesParams p;
    p.seed = cfg.seed;
    if (cfg.full) {
      p.n = 5000;
      p.trees = 1000;
    }
    if (cfg.n) p.n = *cfg.n;
    if (cfg.trees) p.trees = *cfg.trees;
    if (cfg.leaf_size) p.leaf_size = *cfg.leaf_size;
    if (cfg.depth) p.depth = *cfg.depth;
    if (cfg.lambda) p.lambda = *cfg.lambda;
    if (cfg.theta) p.theta = *cfg.theta;
    if (cfg.error) p.error = parse_error_spec(*cfg.error);
    p.data_path = cfg.data_path;
    manifest["params"] = {{"n", p.n},       {"d", p.d},         {"trees", p.trees},
                          {"lambda", p.lambda}, {"baseline_rate", p.baseline_rate},
                          {"theta", p.theta}, {"leaf_size", p.leaf_size},
                          {"depth", p.depth},   {"error", p.error.name()},
                          {"data", p.data_path.value_or("")}};
    record.result = run_mse_curves(p, &writer);
  } else if (cfg.name == "krr-compare") {
    KrrCompareParams p;
    p.seed = cfg.seed;
    if (cfg.n) p.n = *cfg.n;
    if (cfg.trees) p.trees = *cfg.trees;
    if (cfg.leaf_size) p.leaf_size = *cfg.leaf_size;
    if (cfg.depth) p.depth = *cfg.depth;
    if (cfg.lambda) p.lambda = *cfg.lambda;
    if (cfg.theta) p.theta = *cfg.theta;
    if (cfg.replicates) p.repetitions = *cfg.replicates;
    manifest["params"] = {{"n", p.n},           {"d", p.d},
                          {"trees", p.trees},   {"lambda", p.lambda},
                          {"theta", p.theta},   {"leaf_size", p.leaf_size},
                          {"depth", p.depth},   {"repetitions", p.repetitions}};
    record.result = run_krr_compare(p, &writer);
  } else if (cfg.name == "limiting-dist") {
    LimitingDistParams p;
    p.seed = cfg.seed;
    if (cfg.full) {
      p.replicates = 1000;
      p.trees = 2000;
    }
    if (cfg.n) p.n = *cfg.n;
    if (cfg.trees) p.trees = *cfg.trees;
    if (cfg.leaf_size) p.leaf_size = *cfg.leaf_size;
    if (cfg.depth) p.depth = *cfg.depth;
    if (cfg.lambda) p.lambda = *cfg.lambda;
    if (cfg.theta) p.theta = *cfg.theta;
    if (cfg.replicates) p.replicates = *cfg.replicates;
    if (cfg.error) p.laws = {parse_error_spec(*cfg.error)};
    std::vector<std::string> law_names;
    for (const auto& l : p.laws) law_names.push_back(l.name());
    manifest["params"] = {{"n", p.n},         {"d", p.d},           {"trees", p.trees},
                          {"lambda", p.lambda}, {"theta", p.theta},   {"leaf_size", p.leaf_size},
                          {"depth", p.depth},   {"replicates", p.replicates},
                          {"laws", law_names}};
    record.result = run_limiting_dist(p, &writer);
  } else if (cfg.name == "reproduction-intervals") {
    ReproductionParams p;
    p.seed = cfg.seed;
    if (cfg.full) p.refits = 100;
    if (cfg.n) p.n = *cfg.n;
    if (cfg.trees) p.trees = *cfg.trees;
    if (cfg.leaf_size) p.leaf_size = *cfg.leaf_size;
    if (cfg.depth) p.depth = *cfg.depth;
    if (cfg.lambda) p.lambda = *cfg.lambda;
    if (cfg.theta) p.theta = *cfg.theta;
    if (cfg.replicates) p.refits = *cfg.replicates;
    if (cfg.error) p.error = parse_error_spec(*cfg.error);
    manifest["params"] = {{"n", p.n},         {"d", p.d},         {"trees", p.trees},
                          {"lambda", p.lambda}, {"theta", p.theta}, {"leaf_size", p.leaf_size},
                          {"depth", p.depth},   {"refits", p.refits}, {"level", p.level},
                          {"error", p.error.name()}};
    record.result = run_reproduction_intervals(p, &writer);
  } else if (cfg.name == "variance-scaling") {
    VarianceScalingParams p;
    p.seed = cfg.seed;
    if (cfg.full) {
      p.n = 5000;
      p.trees = 3000;
      p.leaf_size = 20;
    }
    if (cfg.n) p.n = *cfg.n;
    if (cfg.trees) p.trees = *cfg.trees;
    if (cfg.leaf_size) p.leaf_size = *cfg.leaf_size;
    if (cfg.depth) p.depth = *cfg.depth;
    if (cfg.lambda) p.lambda = *cfg.lambda;
    if (cfg.theta) p.theta = *cfg.theta;
    if (cfg.replicates) p.replicates = *cfg.replicates;
    std::vector<std::string> law_names;
    for (const auto& l : p.laws) law_names.push_back(l.name());
    manifest["params"] = {{"n", p.n},         {"d", p.d},           {"trees", p.trees},
                          {"lambda", p.lambda}, {"theta", p.theta},   {"leaf_size", p.leaf_size},
                          {"depth", p.depth},   {"replicates", p.replicates},
                          {"laws", law_names}};
    record.result = run_variance_scaling(p, &writer);
  } else if (cfg.name == "contraction-lab") {
    ContractionLabParams p;
    p.seed = cfg.seed;
    if (cfg.replicates) p.trials = *cfg.replicates;
    if (cfg.n) p.horizon = *cfg.n;
    manifest["params"] = {{"horizon", p.horizon},
                          {"radius", p.radius},
                          {"trials", p.trials},
                          {"default_paths", p.default_paths},
                          {"t0_grid", p.t0_grid},
                          {"noise_grid", p.noise_grid}};
    record.result = run_contraction_lab(p, &writer);
  } else {
    throw std::invalid_argument("unknown experiment '" + cfg.name + "'");
  }

  manifest["outputs"] = {results_path};
  record.manifest = manifest;
  std::ofstream mf(cfg.out_dir + "/manifest.json");
  mf << manifest.dump(2) << "\n";
  return record;
}

}  // namespace boulevard
