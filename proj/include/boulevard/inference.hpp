#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "boulevard/boosting.hpp"
#include "boulevard/dataset.hpp"
#include "boulevard/stats.hpp"
#include "boulevard/trees.hpp"

namespace boulevard {

// Ensemble-averaged structure vector at a query point, the empirical
// estimate of k_n = E[s_n(x)].
struct EmpiricalInfluence {
  std::vector<double> k_hat;
  double norm2 = 0.0;
};

inline EmpiricalInfluence empirical_influence(const BoulevardModel& model, const Matrix& x,
                                              std::span<const double> query) {
  EmpiricalInfluence inf;
  inf.k_hat.assign(x.rows, 0.0);
  const double scale = 1.0 / static_cast<double>(model.trees.size());
  for (const auto& tree : model.trees) {
    const StructureVector sv = structure_vector(tree.structure, x, tree.subsample, query);
    for (int i : sv.indices) inf.k_hat[i] += scale * sv.weight;
  }
  double s = 0.0;
  for (double v : inf.k_hat) s += v * v;
  inf.norm2 = std::sqrt(s);
  return inf;
}

// Training mean-square residual of the rescaled model, clamped away from 0.
inline double noise_variance_estimate(const BoulevardModel& model, const Matrix& x,
                                      std::span<const double> y) {
  double s = 0.0;
  for (int i = 0; i < x.rows; ++i) {
    const double e = y[i] - boulevard_predict(model, x.row(i), PredictionScale::rescaled);
    s += e * e;
  }
  return std::max(s / x.rows, 1e-12);
}

struct ReproductionInterval {
  double center = 0.0;      // rescaled prediction at the query
  double half_width = 0.0;
  double level = 0.95;
  double sigma_hat = 0.0;   // noise sd estimate
  double sd_rescaled = 0.0; // single-fit prediction sd on the rescaled scale
  bool degenerate = false;  // zero influence vector
};

// Half width on the rescaled scale from the conservative sd bound
// sd_raw = lambda * ||k_hat|| * sigma; the sqrt(2) accounts for comparing
// two independent fits.
inline double interval_half_width(double lambda, double influence_norm, double sigma,
                                  double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must lie in (0,1)");
  const double sd_rescaled = (1.0 + lambda) / lambda * lambda * influence_norm * sigma;
  return normal_quantile(0.5 * (1.0 + level)) * std::sqrt(2.0) * sd_rescaled;
}

// Interval for where a refit on an independent same-size sample would land.
// Uses the conservative ||r_n|| <= lambda * ||k_n|| bound; reported on the
// rescaled prediction scale.
inline ReproductionInterval reproduction_interval(const BoulevardModel& model, const Matrix& x,
                                                  std::span<const double> y,
                                                  std::span<const double> query,
                                                  double level = 0.95) {
  const EmpiricalInfluence inf = empirical_influence(model, x, query);
  ReproductionInterval ri;
  ri.level = level;
  ri.sigma_hat = std::sqrt(noise_variance_estimate(model, x, y));
  ri.center = boulevard_predict(model, query, PredictionScale::rescaled);
  ri.degenerate = inf.norm2 == 0.0;
  ri.sd_rescaled = model.rescale() * model.config.lambda * inf.norm2 * ri.sigma_hat;
  ri.half_width = interval_half_width(model.config.lambda, inf.norm2, ri.sigma_hat, level);
  return ri;
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 0.0;
};

// One-sample Kolmogorov-Smirnov test against N(mean, sd) fitted from the
// samples; p-value from the asymptotic Kolmogorov distribution at sqrt(n)*D.
inline KsResult ks_normality(std::span<const double> samples) {
  const int n = static_cast<int>(samples.size());
  if (n < 20) throw std::invalid_argument("ks_normality needs at least 20 samples");
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  if (*lo == *hi) throw std::invalid_argument("ks_normality: constant samples");
  const double m = mean(samples);
  const double sd = sample_sd(samples);
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = normal_cdf((sorted[i] - m) / sd);
    d = std::max(d, std::max((i + 1.0) / n - f, f - static_cast<double>(i) / n));
  }
  return KsResult{d, kolmogorov_survival(std::sqrt(static_cast<double>(n)) * d)};
}

}  // namespace boulevard
