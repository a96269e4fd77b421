#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "boulevard/boosting.hpp"
#include "boulevard/kernel.hpp"
#include "boulevard/rng.hpp"
#include "boulevard/trees.hpp"

using namespace boulevard;

namespace {

Matrix uniform_matrix(int n, int d, std::uint64_t seed) {
  auto rng = make_rng(seed);
  Matrix m(n, d);
  for (double& v : m.values) v = uniform01(rng);
  return m;
}

// config whose trees are all forced single leaves (floor = n, theta = 1)
BoulevardConfig pooled_config(int n, double lambda, int n_trees) {
  BoulevardConfig cfg;
  cfg.lambda = lambda;
  cfg.theta = 1.0;
  cfg.n_trees = n_trees;
  cfg.constraints.min_leaf_samples = n;
  cfg.seed = 5;
  return cfg;
}

BoulevardConfig small_config(double lambda = 0.8, double theta = 0.8, int n_trees = 50) {
  BoulevardConfig cfg;
  cfg.lambda = lambda;
  cfg.theta = theta;
  cfg.n_trees = n_trees;
  cfg.constraints.min_leaf_samples = 4;
  cfg.seed = 17;
  return cfg;
}

}  // namespace

TEST_CASE("first iteration fits lambda times the first tree", "[boosting]") {
  const int n = 30;
  const Matrix x = uniform_matrix(n, 2, 1);
  std::vector<double> y(n);
  auto rng = make_rng(2);
  for (double& v : y) v = uniform_real(rng, -1.0, 1.0);

  const BoulevardModel model = boulevard_fit(x, y, pooled_config(n, 0.8, 1));
  const double ybar = mean(y);
  for (int i = 0; i < n; ++i)
    CHECK(model.fitted[i] == Catch::Approx(0.8 * ybar).margin(1e-12));
  CHECK(convergence_trace(model, x).size() == 1);
}

TEST_CASE("pooled trees on a constant signal follow the scalar recursion", "[boosting]") {
  const int n = 20;
  const double c = 2.0, lambda = 0.8;
  const Matrix x = uniform_matrix(n, 2, 3);
  const std::vector<double> y(n, c);
  const int B = 5000;
  const BoulevardModel model = boulevard_fit(x, y, pooled_config(n, lambda, B));

  // oracle: iterate a_b = ((b-1)/b) a_{b-1} + (lambda/b)(c - a_{b-1})
  double a = 0.0;
  for (int b = 1; b <= B; ++b) a = (b - 1.0) / b * a + lambda / b * (c - a);
  for (int i = 0; i < n; ++i) CHECK(model.fitted[i] == Catch::Approx(a).margin(1e-12));
  CHECK(std::abs(a - lambda / (1.0 + lambda) * c) < 1e-3);

  // step norms shrink monotonically after burn-in
  const std::vector<double> steps = convergence_trace(model, x);
  for (std::size_t b = 2; b < steps.size(); ++b) CHECK(steps[b] <= steps[b - 1] + 1e-15);
}

TEST_CASE("fit rejects bad inputs", "[boosting]") {
  const Matrix x = uniform_matrix(10, 2, 4);
  std::vector<double> y(10, 1.0);
  BoulevardConfig cfg = small_config();
  cfg.constraints.min_leaf_samples = 2;

  SECTION("non-finite response") {
    y[3] = std::nan("");
    CHECK_THROWS_AS(boulevard_fit(x, y, cfg), std::invalid_argument);
  }
  SECTION("subsample rounds to zero") {
    cfg.theta = 0.01;
    CHECK_THROWS_AS(boulevard_fit(x, y, cfg), std::invalid_argument);
  }
  SECTION("lambda outside (0,1)") {
    cfg.lambda = 1.0;
    CHECK_THROWS_AS(boulevard_fit(x, y, cfg), std::invalid_argument);
  }
  SECTION("truncation below max|y|") {
    cfg.truncation_m = 0.5;
    CHECK_THROWS_AS(boulevard_fit(x, y, cfg), std::invalid_argument);
  }
}

TEST_CASE("update identity: recursion equals the averaged tree sum", "[boosting]") {
  const int n = 100, B = 200;
  const Matrix x = uniform_matrix(n, 3, 7);
  std::vector<double> y(n);
  auto rng = make_rng(8);
  for (int i = 0; i < n; ++i) y[i] = x.at(i, 0) + uniform_real(rng, -0.5, 0.5);

  BoulevardConfig cfg = small_config(0.8, 0.8, B);
  const BoulevardModel model = boulevard_fit(x, y, cfg);

  std::vector<double> tree_sum(n, 0.0);
  std::vector<double> recursive(n, 0.0);
  const double bound = 0.8 * (1.0 + model.config.truncation_m);
  for (int b = 1; b <= B; ++b) {
    for (int i = 0; i < n; ++i) {
      const double t = predict_tree(model.trees[b - 1], x.row(i));
      tree_sum[i] += t;
      recursive[i] = (b - 1.0) / b * recursive[i] + 0.8 / b * t;
      CHECK(std::abs(recursive[i] - 0.8 * tree_sum[i] / b) < 1e-10);
      CHECK(std::abs(recursive[i]) <= bound);
    }
  }
  for (int i = 0; i < n; ++i) CHECK(model.fitted[i] == Catch::Approx(recursive[i]).margin(1e-10));

  SECTION("raw predictions at training points equal the stored fit") {
    for (int i = 0; i < n; i += 7)
      CHECK(boulevard_predict(model, x.row(i), PredictionScale::raw) ==
            Catch::Approx(model.fitted[i]).margin(1e-10));
  }
  SECTION("truncation stays inactive at the default cap") {
    CHECK(model.clip_events == 0);
  }
}

TEST_CASE("prediction rescale algebra", "[boosting]") {
  const int n = 25;
  const Matrix x = uniform_matrix(n, 2, 9);
  std::vector<double> y(n, 1.5);
  const BoulevardModel model = boulevard_fit(x, y, pooled_config(n, 0.5, 400));
  const std::vector<double> q = {0.4, 0.6};
  const double raw = boulevard_predict(model, q, PredictionScale::raw);
  const double rescaled = boulevard_predict(model, q, PredictionScale::rescaled);
  CHECK(rescaled == Catch::Approx(3.0 * raw).margin(1e-14));
  // raw converges to lambda/(1+lambda) * c, so rescaled recovers c
  CHECK(rescaled == Catch::Approx(1.5).margin(5e-3));
}

TEST_CASE("empty-leaf queries predict zero", "[boosting]") {
  // two training points on the right half only; the left leaf of the split
  // never holds subsample points
  Matrix x(2, 1);
  x.at(0, 0) = 0.7;
  x.at(1, 0) = 0.9;
  BoulevardModel model;
  model.config.lambda = 0.8;
  const TreeStructure split = make_structure(1, split_spec(0, 0.5, leaf_spec(), leaf_spec()));
  model.trees.push_back(
      assign_leaf_values(split, std::vector<double>{1.0, 3.0}, x, full_subsample(2)));
  const std::vector<double> q = {0.1};
  CHECK(boulevard_predict(model, q, PredictionScale::raw) == 0.0);
  CHECK(boulevard_predict(model, q, PredictionScale::rescaled) == 0.0);
}

TEST_CASE("stationarity at the exhaustive fixed point", "[boosting]") {
  // average one Boulevard update over every subsample at Y* and recover Y*
  const int n = 6, m_sub = 4;
  Matrix x(n, 1);
  for (int i = 0; i < n; ++i) x.at(i, 0) = (i + 0.5) / n;
  const TreeStructure blocks =
      make_structure(1, split_spec(0, 0.5, leaf_spec(), leaf_spec()));
  Eigen::VectorXd y(n);
  y << 1.2, -0.4, 2.0, 0.3, -1.1, 0.8;
  const double lambda = 0.7;

  const KernelEstimate kest = estimate_kernel_exhaustive(x, {{blocks, 1.0}}, m_sub);
  const FixedPoint fp = fixed_point(kest.matrix, y, lambda);
  REQUIRE(fp.residual_norm < 1e-10);

  std::vector<double> z(n);
  for (int i = 0; i < n; ++i) z[i] = y[i] - fp.y_star[i];

  // enumerate subsamples directly, independent of the kernel-matrix path
  std::vector<double> expected_update(n, 0.0);
  std::vector<int> comb(m_sub);
  std::iota(comb.begin(), comb.end(), 0);
  long count = 0;
  for (;;) {
    Subsample w;
    w.indices = comb;
    w.rate = static_cast<double>(m_sub) / n;
    const FittedTree tree = assign_leaf_values(blocks, z, x, w);
    for (int i = 0; i < n; ++i) expected_update[i] += predict_tree(tree, x.row(i));
    ++count;
    int i = m_sub - 1;
    while (i >= 0 && comb[i] == n - m_sub + i) --i;
    if (i < 0) break;
    ++comb[i];
    for (int j = i + 1; j < m_sub; ++j) comb[j] = comb[j - 1] + 1;
  }
  for (int i = 0; i < n; ++i) {
    expected_update[i] *= lambda / static_cast<double>(count);
    CHECK(expected_update[i] == Catch::Approx(fp.y_star[i]).margin(1e-9));
  }
}

TEST_CASE("identical seeds give bitwise identical models", "[boosting]") {
  const int n = 60;
  const Matrix x = uniform_matrix(n, 3, 11);
  std::vector<double> y(n);
  auto rng = make_rng(12);
  for (int i = 0; i < n; ++i) y[i] = 2.0 * x.at(i, 1) + uniform_real(rng, -1.0, 1.0);

  for (const StructureMode mode :
       {StructureMode::randomized, StructureMode::gradient_adaptive}) {
    BoulevardConfig cfg = small_config(0.8, 0.7, 30);
    cfg.structure_mode = mode;
    const BoulevardModel a = boulevard_fit(x, y, cfg);
    const BoulevardModel b = boulevard_fit(x, y, cfg);
    CHECK(serialize_model(a, 3) == serialize_model(b, 3));
    cfg.seed = 18;
    const BoulevardModel c = boulevard_fit(x, y, cfg);
    CHECK(serialize_model(a, 3) != serialize_model(c, 3));
  }
}

TEST_CASE("model serialization round-trips bit-exactly", "[boosting]") {
  const int n = 40;
  const Matrix x = uniform_matrix(n, 2, 13);
  std::vector<double> y(n);
  auto rng = make_rng(14);
  for (int i = 0; i < n; ++i) y[i] = x.at(i, 0) - x.at(i, 1) + uniform_real(rng, -0.2, 0.2);

  BoulevardConfig cfg = small_config(0.6, 0.9, 12);
  cfg.structure_mode = StructureMode::gradient_adaptive;
  const BoulevardModel model = boulevard_fit(x, y, cfg);
  const std::string first = serialize_model(model, 2);

  std::istringstream in(first);
  const LoadedModel loaded = load_model(in);
  REQUIRE(loaded.kind == "blv");
  const std::string second =
      serialize_model(std::get<BoulevardModel>(loaded.model), 2);
  CHECK(first == second);

  for (int trial = 0; trial < 25; ++trial) {
    const std::vector<double> q = {uniform01(rng), uniform01(rng)};
    const double direct = boulevard_predict(model, q, PredictionScale::rescaled);
    CHECK(loaded.predict(q, PredictionScale::rescaled) == direct);
  }

  SECTION("baseline models share the format") {
    auto rng2 = make_rng(15);
    StructureConstraints cons;
    cons.min_leaf_samples = 4;
    const BaselineModel rf = rf_fit(x, y, 9, cons, 0.8, rng2);
    std::ostringstream os;
    save_model(os, rf, 2);
    std::istringstream is(os.str());
    const LoadedModel back = load_model(is);
    CHECK(back.kind == "rf");
    const std::vector<double> q = {0.3, 0.3};
    CHECK(back.predict(q, PredictionScale::raw) == baseline_predict(rf, q));
  }
}

TEST_CASE("tail snapshot freezes after the loss threshold", "[boosting]") {
  const int n = 40;
  const Matrix x = uniform_matrix(n, 2, 21);
  std::vector<double> y(n);
  auto rng = make_rng(22);
  for (int i = 0; i < n; ++i) y[i] = 3.0 * x.at(i, 0) + uniform_real(rng, -0.3, 0.3);

  BoulevardConfig cfg = small_config(0.8, 0.8, 60);
  cfg.structure_mode = StructureMode::gradient_adaptive;

  SECTION("huge threshold freezes immediately") {
    auto r = make_rng(23);
    const BoulevardModel model = tail_snapshot_fit(x, y, cfg, 1e12, r);
    REQUIRE(model.snapshot.has_value());
    REQUIRE(model.snapshot->b_star.has_value());
    CHECK(*model.snapshot->b_star == 1);
    CHECK(model.snapshot->frozen_residuals.size() == static_cast<std::size_t>(n));
  }
  SECTION("zero threshold never freezes") {
    auto r = make_rng(23);
    const BoulevardModel model = tail_snapshot_fit(x, y, cfg, 0.0, r);
    REQUIRE(model.snapshot.has_value());
    CHECK_FALSE(model.snapshot->b_star.has_value());
    CHECK_FALSE(model.snapshot->reached());
  }
  SECTION("constant signal: loss decreases monotonically and b* is finite") {
    const std::vector<double> yc(n, 2.0);
    BoulevardConfig pooled = pooled_config(n, 0.8, 300);
    auto r = make_rng(24);
    const BoulevardModel model = tail_snapshot_fit(x, yc, pooled, 1e-4, r);
    REQUIRE(model.snapshot->b_star.has_value());
    const double shrink = 0.8 / 1.8;
    double prev = 1e300;
    double a = 0.0;
    for (int b = 1; b <= 300; ++b) {
      a = (b - 1.0) / b * a + 0.8 / b * (2.0 - a);
      const double loss = 0.5 * (shrink * 2.0 - a) * (shrink * 2.0 - a);
      CHECK(loss <= prev + 1e-15);
      prev = loss;
    }
  }
}

TEST_CASE("gbt closed forms and monotone training loss", "[boosting]") {
  const int n = 30;
  const Matrix x = uniform_matrix(n, 2, 31);
  std::vector<double> y(n);
  auto rng = make_rng(32);
  for (int i = 0; i < n; ++i) y[i] = x.at(i, 0) * 2.0 + uniform_real(rng, -0.4, 0.4);

  SECTION("one unit-rate pooled tree predicts the mean") {
    StructureConstraints cons;
    cons.min_leaf_samples = n;  // forces a single leaf
    auto r = make_rng(33);
    const BaselineModel model = gbt_fit(x, y, 1.0, 1, cons, std::nullopt, r);
    CHECK(baseline_predict(model, std::vector<double>{0.2, 0.9}) ==
          Catch::Approx(mean(y)).margin(1e-12));
  }
  SECTION("training loss non-increasing over seeds") {
    StructureConstraints cons;
    cons.min_leaf_samples = 3;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      auto r = make_rng(seed);
      const BaselineModel model = gbt_fit(x, y, 0.8, 40, cons, std::nullopt, r);
      for (std::size_t b = 1; b < model.trace.size(); ++b)
        CHECK(model.trace[b].train_mse <= model.trace[b - 1].train_mse + 1e-12);
    }
  }
  SECTION("sgbt runs with a subsample") {
    StructureConstraints cons;
    cons.min_leaf_samples = 3;
    auto r = make_rng(34);
    const BaselineModel model = gbt_fit(x, y, 0.5, 25, cons, 0.6, r);
    CHECK(model.subsampled);
    CHECK(std::isfinite(baseline_predict(model, std::vector<double>{0.5, 0.5})));
  }
}

TEST_CASE("random forest closed forms and averaging", "[boosting]") {
  const int n = 30;
  const Matrix x = uniform_matrix(n, 2, 41);
  std::vector<double> y(n);
  auto rng = make_rng(42);
  for (int i = 0; i < n; ++i) y[i] = x.at(i, 1) + uniform_real(rng, -0.3, 0.3);

  SECTION("single pooled full-subsample tree predicts the mean") {
    StructureConstraints cons;
    cons.min_leaf_samples = n;
    auto r = make_rng(43);
    const BaselineModel model = rf_fit(x, y, 1, cons, 1.0, r);
    CHECK(baseline_predict(model, std::vector<double>{0.5, 0.5}) ==
          Catch::Approx(mean(y)).margin(1e-12));
  }
  SECTION("prediction equals the mean of per-tree predictions") {
    StructureConstraints cons;
    cons.min_leaf_samples = 4;
    auto r = make_rng(44);
    const BaselineModel model = rf_fit(x, y, 13, cons, 0.7, r);
    const std::vector<double> q = {0.25, 0.75};
    double s = 0.0;
    for (const auto& t : model.trees) s += predict_tree(t, q);
    CHECK(baseline_predict(model, q) == Catch::Approx(s / 13.0).margin(1e-12));
  }
  SECTION("prediction variance shrinks roughly like 1/B") {
    StructureConstraints cons;
    cons.min_leaf_samples = 4;
    const std::vector<double> q = {0.5, 0.5};
    auto variance_at = [&](int n_trees) {
      std::vector<double> preds;
      for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto r = make_rng(derive_seed(900, seed));
        preds.push_back(baseline_predict(rf_fit(x, y, n_trees, cons, 0.7, r), q));
      }
      return sample_variance(preds);
    };
    const double v10 = variance_at(10), v40 = variance_at(40);
    CHECK(v40 < 0.6 * v10);
    CHECK(v40 > 0.02 * v10);
  }
}

TEST_CASE("convergence trace tracks the fixed point when supplied", "[boosting]") {
  const int n = 24;
  const Matrix x = uniform_matrix(n, 1, 51);
  std::vector<double> y(n);
  auto rng = make_rng(52);
  for (int i = 0; i < n; ++i) y[i] = std::sin(6.0 * x.at(i, 0)) + uniform_real(rng, -0.2, 0.2);

  BoulevardConfig cfg = small_config(0.8, 0.75, 600);
  cfg.constraints.min_leaf_samples = 6;
  const BoulevardModel model = boulevard_fit(x, y, cfg);
  const KernelEstimate kernel = estimate_kernel_from_trees(x, model.trees);
  Eigen::VectorXd yy = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  const FixedPoint fp = fixed_point(kernel.matrix, yy, 0.8);
  const std::vector<double> dist = convergence_trace(model, x, &fp);
  REQUIRE(dist.size() == 600);
  CHECK(dist.back() < 0.5 * dist[59]);  // paths contract toward Y*
  // final distance equals the directly computed infinity norm
  double worst = 0.0;
  for (int i = 0; i < n; ++i) worst = std::max(worst, std::abs(model.fitted[i] - fp.y_star[i]));
  CHECK(dist.back() == Catch::Approx(worst).margin(1e-12));
}
