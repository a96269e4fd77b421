// Command line front end: data generation, model fitting/prediction, kernel
// estimation and the experiment harness.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "boulevard/bench.hpp"
#include "boulevard/boosting.hpp"
#include "boulevard/experiments.hpp"
#include "boulevard/inference.hpp"
#include "boulevard/kernel.hpp"

namespace fs = std::filesystem;
using namespace boulevard;

namespace {

struct CommonFlags {
  std::uint64_t seed = 1;
  double lambda = 0.8;
  double theta = 0.8;
  int trees = 100;
  int leaf_size = 10;
  int depth = 30;
  std::string mode = "rblv";
  std::string out = "out";
};

void add_model_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--lambda", f.lambda, "learning rate in (0,1)");
  cmd->add_option("--theta", f.theta, "subsample rate in (0,1]");
  cmd->add_option("--trees", f.trees, "ensemble size");
  cmd->add_option("--leaf-size", f.leaf_size, "minimum points per leaf (k)");
  cmd->add_option("--depth", f.depth, "maximum tree depth");
  cmd->add_option("--mode", f.mode, "one of blv|rblv|gbt|sgbt|rf");
  cmd->add_option("--out", f.out, "output directory");
}

Matrix scaled_features(const CsvDataset& csv, const std::optional<FeatureScaling>& model_scaling) {
  Matrix x = csv.data.x;
  if (model_scaling) {
    model_scaling->apply(x);
    return x;
  }
  for (double v : x.values)
    if (!(v >= 0.0 && v <= 1.0))
      throw std::runtime_error(
          "features fall outside [0,1]; refit with --normalize or rescale the data");
  return x;
}

void write_trace_csv(const std::string& path, const std::vector<IterationStat>& trace) {
  std::ofstream out(path);
  out << "iteration,train_mse,step_norm,clipped\n";
  for (std::size_t b = 0; b < trace.size(); ++b)
    out << (b + 1) << "," << detail::format_value(trace[b].train_mse) << ","
        << detail::format_value(trace[b].step_norm) << "," << trace[b].clipped << "\n";
}

int cmd_generate(const std::string& function, int n, int d, const std::string& error,
                 std::uint64_t seed, const std::string& out) {
  GeneratorSpec spec;
  spec.function_id = parse_function(function);
  spec.n = n;
  spec.d = d;
  spec.error = parse_error_spec(error);
  spec.seed = seed;
  const Dataset data = generate(spec);
  fs::create_directories(out);
  write_dataset_csv(out + "/data.csv", data);
  std::cout << "wrote " << out << "/data.csv (" << n << " rows, " << d << " features)\n";
  return 0;
}

int cmd_fit(const CommonFlags& f, const std::string& data_path, const std::string& target,
            bool normalize) {
  const CsvDataset csv = load_csv(data_path, target, normalize);
  const Matrix& x = csv.data.x;
  if (!normalize)
    for (double v : x.values)
      if (!(v >= 0.0 && v <= 1.0))
        throw std::runtime_error("features outside [0,1]; pass --normalize");
  fs::create_directories(f.out);
  std::ofstream model_file(f.out + "/model.txt");

  if (f.mode == "rblv" || f.mode == "blv") {
    BoulevardConfig cfg;
    cfg.lambda = f.lambda;
    cfg.theta = f.theta;
    cfg.n_trees = f.trees;
    cfg.structure_mode = f.mode == "rblv" ? StructureMode::randomized
                                          : StructureMode::gradient_adaptive;
    cfg.constraints.min_leaf_samples = f.leaf_size;
    cfg.constraints.max_depth = f.depth;
    cfg.seed = f.seed;
    BoulevardModel model = boulevard_fit(x, csv.data.y, cfg);
    model.scaling = csv.scaling;
    save_model(model_file, model, x.cols);
    write_trace_csv(f.out + "/trace.csv", model.trace);
    if (model.clip_events > 0)
      std::cout << "note: truncation clipped " << model.clip_events << " residuals\n";
  } else if (f.mode == "gbt" || f.mode == "sgbt") {
    auto rng = make_rng(f.seed);
    StructureConstraints cons;
    cons.min_leaf_samples = f.mode == "gbt"
                                ? std::max(1, static_cast<int>(std::lround(f.leaf_size / f.theta)))
                                : f.leaf_size;
    cons.max_depth = f.depth;
    std::optional<double> rate;
    if (f.mode == "sgbt") rate = f.theta;
    BaselineModel model = gbt_fit(x, csv.data.y, f.lambda, f.trees, cons, rate, rng);
    model.seed = f.seed;
    model.scaling = csv.scaling;
    save_model(model_file, model, x.cols);
    write_trace_csv(f.out + "/trace.csv", model.trace);
  } else if (f.mode == "rf") {
    auto rng = make_rng(f.seed);
    StructureConstraints cons;
    cons.min_leaf_samples = f.leaf_size;
    cons.max_depth = f.depth;
    BaselineModel model = rf_fit(x, csv.data.y, f.trees, cons, f.theta, rng);
    model.seed = f.seed;
    model.scaling = csv.scaling;
    save_model(model_file, model, x.cols);
    write_trace_csv(f.out + "/trace.csv", model.trace);
  } else {
    throw std::runtime_error("unknown mode '" + f.mode + "'");
  }
  std::cout << "wrote " << f.out << "/model.txt and trace.csv\n";
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& data_path,
                const std::string& target, bool raw, const std::string& out) {
  std::ifstream in(model_path);
  if (!in) throw std::runtime_error("cannot open '" + model_path + "'");
  const LoadedModel model = load_model(in);
  const CsvDataset csv = load_csv(data_path, target, false);
  const Matrix x = scaled_features(csv, model.feature_scaling());
  fs::create_directories(out);
  std::ofstream pred(out + "/predictions.csv");
  pred << "row,prediction\n";
  for (int i = 0; i < x.rows; ++i)
    pred << i << ","
         << detail::format_value(model.predict(
                x.row(i), raw ? PredictionScale::raw : PredictionScale::rescaled))
         << "\n";
  std::cout << "wrote " << out << "/predictions.csv (" << x.rows << " rows)\n";
  return 0;
}

int cmd_kernel(const CommonFlags& f, const std::string& data_path, const std::string& target,
               bool normalize, int replications, std::optional<double> lambda_opt) {
  const CsvDataset csv = load_csv(data_path, target, normalize);
  const Matrix& x = csv.data.x;
  if (!normalize)
    for (double v : x.values)
      if (!(v >= 0.0 && v <= 1.0))
        throw std::runtime_error("features outside [0,1]; pass --normalize");
  StructureConstraints cons;
  cons.min_leaf_samples = f.leaf_size;
  cons.max_depth = f.depth;
  const double theta = f.theta;
  const KernelEstimate est = estimate_kernel_mc(
      x,
      [&](std::mt19937_64& rng) {
        Subsample w = draw_subsample(x.rows, theta, rng);
        TreeStructure s = build_randomized_structure(x, cons, rng);
        return std::make_pair(std::move(s), std::move(w));
      },
      replications, f.seed);

  fs::create_directories(f.out);
  {
    std::ofstream k(f.out + "/kernel.csv");
    for (int i = 0; i < est.matrix.rows(); ++i) {
      for (int j = 0; j < est.matrix.cols(); ++j)
        k << (j ? "," : "") << detail::format_value(est.matrix(i, j));
      k << "\n";
    }
  }
  {
    const KernelPropertyReport report = verify_kernel_properties(est, 1e-9);
    std::ofstream pr(f.out + "/properties.csv");
    pr << "property,value,pass\n";
    pr << "max_asymmetry," << detail::format_value(report.max_asymmetry) << ","
       << report.symmetric << "\n";
    pr << "min_entry," << detail::format_value(report.min_entry) << "," << report.nonnegative
       << "\n";
    pr << "min_eigenvalue," << detail::format_value(report.min_eigenvalue) << "," << report.psd
       << "\n";
    pr << "max_column_sum," << detail::format_value(report.max_column_sum) << ","
       << report.norms_ok << "\n";
    pr << "max_row_sum," << detail::format_value(report.max_row_sum) << "," << report.norms_ok
       << "\n";
    pr << "spectral_norm," << detail::format_value(report.spectral_norm) << "," << report.norms_ok
       << "\n";
  }
  if (lambda_opt) {
    Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(csv.data.y.data(), x.rows);
    const FixedPoint fp = fixed_point(est.matrix, y, *lambda_opt);
    std::ofstream fpf(f.out + "/fixed_point.csv");
    fpf << "index,y_star\n";
    for (int i = 0; i < fp.y_star.size(); ++i)
      fpf << i << "," << detail::format_value(fp.y_star[i]) << "\n";
    std::cout << "fixed point residual " << fp.residual_norm << "\n";
  }
  std::cout << "wrote kernel.csv and properties.csv under " << f.out << " (asymmetry "
            << est.max_asymmetry << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boulevard boosting: averaged, subsampled gradient boosted trees"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "draw a synthetic regression sample");
  std::string gen_function = "mean5", gen_error = "uniform:1", gen_out = "out";
  int gen_n = 1000, gen_d = 5;
  std::uint64_t gen_seed = 1;
  gen->add_option("--function", gen_function, "f1|f2|mean5");
  gen->add_option("--n", gen_n, "sample size");
  gen->add_option("--d", gen_d, "dimension");
  gen->add_option("--error", gen_error, "none|uniform:a|normal:s|rademacher|mixed");
  gen->add_option("--seed", gen_seed, "seed");
  gen->add_option("--out", gen_out, "output directory");

  // fit
  auto* fit = app.add_subcommand("fit", "fit an ensemble on a CSV dataset");
  CommonFlags fit_flags;
  std::string fit_data, fit_target = "y";
  bool fit_normalize = false;
  fit->add_option("--data", fit_data, "input CSV")->required();
  fit->add_option("--target", fit_target, "target column name");
  fit->add_flag("--normalize", fit_normalize, "min-max scale features to [0,1]");
  add_model_flags(fit, fit_flags);

  // predict
  auto* pred = app.add_subcommand("predict", "predict with a saved model");
  std::string pred_model, pred_data, pred_target = "y", pred_out = "out";
  bool pred_raw = false;
  pred->add_option("--model", pred_model, "model file")->required();
  pred->add_option("--data", pred_data, "input CSV")->required();
  pred->add_option("--target", pred_target, "target column name");
  pred->add_flag("--raw", pred_raw, "emit raw (un-rescaled) predictions");
  pred->add_option("--out", pred_out, "output directory");

  // kernel
  auto* ker = app.add_subcommand("kernel", "Monte Carlo random forest kernel on a CSV dataset");
  CommonFlags ker_flags;
  std::string ker_data, ker_target = "y";
  bool ker_normalize = false;
  int ker_reps = 100;
  double ker_lambda = 0.0;
  ker->add_option("--data", ker_data, "input CSV")->required();
  ker->add_option("--target", ker_target, "target column name");
  ker->add_flag("--normalize", ker_normalize, "min-max scale features to [0,1]");
  ker->add_option("--replications", ker_reps, "Monte Carlo replications");
  ker->add_option("--fixed-point-lambda", ker_lambda,
                  "also solve the kernel ridge fixed point at this lambda");
  add_model_flags(ker, ker_flags);

  // experiment
  auto* exp = app.add_subcommand("experiment", "run a named experiment protocol");
  ExperimentConfig exp_cfg;
  int exp_n = 0, exp_trees = 0, exp_leaf = 0, exp_depth = 0, exp_reps = 0;
  double exp_lambda = 0.0, exp_theta = 0.0;
  std::string exp_error, exp_data;
  exp->add_option("--name", exp_cfg.name, "mse-curves|krr-compare|limiting-dist|"
                                          "reproduction-intervals|variance-scaling|contraction-lab")
      ->required();
  exp->add_option("--seed", exp_cfg.seed, "master seed");
  exp->add_option("--out", exp_cfg.out_dir, "output directory");
  exp->add_flag("--full", exp_cfg.full, "paper-scale sizes instead of desk scale");
  exp->add_option("--n", exp_n, "sample size override");
  exp->add_option("--trees", exp_trees, "ensemble size override");
  exp->add_option("--leaf-size", exp_leaf, "leaf floor override");
  exp->add_option("--depth", exp_depth, "depth override");
  exp->add_option("--replicates", exp_reps, "replicate/repetition override");
  exp->add_option("--lambda", exp_lambda, "lambda override");
  exp->add_option("--theta", exp_theta, "theta override");
  exp->add_option("--error", exp_error, "error-law override");
  exp->add_option("--data", exp_data, "CSV path (mse-curves real-data mode)");

  // sweep
  auto* swp = app.add_subcommand("sweep", "lambda sweep of BLV and rBLV error curves");
  std::vector<double> swp_lambdas = {0.2, 0.5, 0.8};
  CommonFlags swp_flags;
  std::string swp_function = "f1", swp_error = "uniform:1";
  int swp_n = 2000;
  swp->add_option("--lambdas", swp_lambdas, "lambda values")->delimiter(',');
  swp->add_option("--function", swp_function, "f1|f2|mean5");
  swp->add_option("--n", swp_n, "sample size");
  swp->add_option("--error", swp_error, "error law");
  add_model_flags(swp, swp_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_generate(gen_function, gen_n, gen_d, gen_error, gen_seed, gen_out);
    if (fit->parsed()) return cmd_fit(fit_flags, fit_data, fit_target, fit_normalize);
    if (pred->parsed()) return cmd_predict(pred_model, pred_data, pred_target, pred_raw, pred_out);
    if (ker->parsed())
      return cmd_kernel(ker_flags, ker_data, ker_target, ker_normalize, ker_reps,
                        ker_lambda > 0.0 ? std::optional<double>(ker_lambda) : std::nullopt);
    if (exp->parsed()) {
      if (exp_n > 0) exp_cfg.n = exp_n;
      if (exp_trees > 0) exp_cfg.trees = exp_trees;
      if (exp_leaf > 0) exp_cfg.leaf_size = exp_leaf;
      if (exp_depth > 0) exp_cfg.depth = exp_depth;
      if (exp_reps > 0) exp_cfg.replicates = exp_reps;
      if (exp_lambda > 0.0) exp_cfg.lambda = exp_lambda;
      if (exp_theta > 0.0) exp_cfg.theta = exp_theta;
      if (!exp_error.empty()) exp_cfg.error = exp_error;
      if (!exp_data.empty()) exp_cfg.data_path = exp_data;
      const RunRecord record = run_experiment(exp_cfg);
      std::cout << "experiment " << record.experiment << " -> " << record.results_path << "\n";
      return 0;
    }
    if (swp->parsed()) {
      MseCurvesParams p;
      p.function_id = parse_function(swp_function);
      p.n = swp_n;
      p.d = std::max(min_arity(p.function_id), 5);
      p.error = parse_error_spec(swp_error);
      p.theta = swp_flags.theta;
      p.trees = swp_flags.trees;
      p.leaf_size = swp_flags.leaf_size;
      p.depth = swp_flags.depth;
      p.seed = swp_flags.seed;
      fs::create_directories(swp_flags.out);
      TidyWriter writer(swp_flags.out + "/results.csv", "lambda-sweep");
      const LambdaSweepResult res = lambda_sweep(p, swp_lambdas, &writer);
      std::cout << "lambda sweep -> " << swp_flags.out << "/results.csv\n";
      for (std::size_t li = 0; li < res.lambdas.size(); ++li)
        std::cout << "  lambda=" << res.lambdas[li] << " blv=" << res.final_test_mse[li][0]
                  << " rblv=" << res.final_test_mse[li][1] << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
