#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "boulevard/parallel.hpp"
#include "boulevard/rng.hpp"
#include "boulevard/stats.hpp"

namespace boulevard {

// Synthetic stochastic-contraction process Z_t = lambda_t Z_{t-1} + eps_t
// with eps_t uniform on the ball of radius noise_scale(t). The defaults
// mirror the boosting recursion: lambda_t = (t-1+lambda)/t (so
// sum(1-lambda_t) diverges harmonically) and radius c/t (square-summable
// second moments).
struct ContractionSpec {
  int dimension = 1;
  double lambda = 0.5;
  double noise_c = 1.0;
  long horizon = 100000;
  std::vector<double> z0 = {1.0};
  std::function<double(long)> lambda_override;
  std::function<double(long)> noise_scale_override;

  void validate() const {
    if (dimension < 1) throw std::invalid_argument("dimension must be >= 1");
    if (static_cast<int>(z0.size()) != dimension) throw std::invalid_argument("z0 size mismatch");
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    if (!lambda_override && !(lambda > 0.0 && lambda <= 1.0))
      throw std::invalid_argument("lambda must lie in (0,1]");
  }

  double lambda_at(long t) const {
    if (lambda_override) return lambda_override(t);
    return (t - 1.0 + lambda) / static_cast<double>(t);
  }

  double noise_scale_at(long t) const {
    if (noise_scale_override) return noise_scale_override(t);
    return noise_c / static_cast<double>(t);
  }

  // E||eps_t||^2 for a uniform draw on the d-ball of radius r: r^2 d/(d+2).
  double noise_second_moment(long t) const {
    const double r = noise_scale_at(t);
    return r * r * dimension / (dimension + 2.0);
  }

  // Sum of E||eps_s||^2 over s > t. Exact (via trigamma) for the default
  // rule, numeric with a tail cutoff otherwise.
  double tail_second_moment_sum(long t) const {
    if (!noise_scale_override) {
      const double scale = noise_c * noise_c * dimension / (dimension + 2.0);
      return scale * trigamma(static_cast<double>(t) + 1.0);
    }
    double s = 0.0;
    for (long u = t + 1; u <= t + 10000000; ++u) {
      const double term = noise_second_moment(u);
      s += term;
      if (term < 1e-18 * std::max(s, 1e-300)) break;
    }
    return s;
  }
};

struct ContractionPath {
  int dimension = 1;
  std::vector<double> values;  // (horizon+1) x dimension, flat, Z_0 first

  long steps() const { return static_cast<long>(values.size()) / dimension - 1; }
  std::span<const double> at(long t) const {
    return {values.data() + static_cast<std::size_t>(t) * dimension,
            static_cast<std::size_t>(dimension)};
  }
  double norm_at(long t) const {
    double s = 0.0;
    for (double v : at(t)) s += v * v;
    return std::sqrt(s);
  }
};

namespace detail {

// Uniform draw on the d-ball of radius r: normal direction, radius U^{1/d} r.
inline void uniform_ball(std::mt19937_64& rng, int d, double r, std::span<double> out) {
  if (r <= 0.0) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  if (d == 1) {
    out[0] = uniform_real(rng, -r, r);
    return;
  }
  double norm_sq = 0.0;
  for (int j = 0; j < d; ++j) {
    out[j] = normal01(rng);
    norm_sq += out[j] * out[j];
  }
  const double norm = std::sqrt(norm_sq);
  const double radius = r * std::pow(uniform01(rng), 1.0 / d);
  for (int j = 0; j < d; ++j) out[j] *= radius / norm;
}

}  // namespace detail

inline ContractionPath simulate_contraction(const ContractionSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  const int d = spec.dimension;
  ContractionPath path;
  path.dimension = d;
  path.values.resize(static_cast<std::size_t>(spec.horizon + 1) * d);
  std::copy(spec.z0.begin(), spec.z0.end(), path.values.begin());
  std::vector<double> eps(d);
  for (long t = 1; t <= spec.horizon; ++t) {
    const double lam = spec.lambda_at(t);
    detail::uniform_ball(rng, d, spec.noise_scale_at(t), eps);
    const double* prev = path.values.data() + static_cast<std::size_t>(t - 1) * d;
    double* cur = path.values.data() + static_cast<std::size_t>(t) * d;
    for (int j = 0; j < d; ++j) cur[j] = lam * prev[j] + eps[j];
  }
  return path;
}

// Lower bound on P(sup_{t>=T} ||Z_t|| <= ||Z_T|| + delta):
// 1 - 4 sqrt(d) sum_{t>T} E[eps_t^2] / min{delta^2, beta^2} with
// beta = ||Z_T|| + delta - sqrt(d) sup_{t>T} ||eps_t||. Inapplicable when
// beta <= 0.
inline double kolmogorov_bound(double z_t_norm, double delta, double tail_second_moments,
                               double sup_future_noise, int dimension) {
  if (dimension < 1) throw std::invalid_argument("dimension must be >= 1");
  if (!(delta > 0.0)) throw std::invalid_argument("delta must be positive");
  const double sqrt_d = std::sqrt(static_cast<double>(dimension));
  const double beta = z_t_norm + delta - sqrt_d * sup_future_noise;
  if (!(beta > 0.0))
    throw std::domain_error("kolmogorov_bound inapplicable: beta <= 0");
  const double denom = std::min(delta * delta, beta * beta);
  return std::clamp(1.0 - 4.0 * sqrt_d * tail_second_moments / denom, 0.0, 1.0);
}

struct EscapeResult {
  double stay_fraction = 0.0;  // paths that never left B(0, 2r)
  double bound = 0.0;          // analytic lower bound, conservative over starts
  int trials = 0;
  long t0 = 0;
  double radius = 0.0;
};

// Paths start uniformly inside B(0, r) at time t0 and run to the horizon;
// a path survives if it never leaves B(0, 2r). The analytic bound applies
// delta = r with the worst case ||Z_t0|| = 0, which makes it valid for
// every admissible start.
inline EscapeResult escape_experiment(const ContractionSpec& spec, double radius, long t0,
                                      int trials, std::uint64_t seed) {
  spec.validate();
  if (!(radius > 0.0)) throw std::invalid_argument("radius must be positive");
  if (t0 < 1 || t0 >= spec.horizon) throw std::invalid_argument("t0 out of range");
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");

  std::vector<char> stayed(trials, 0);
  parallel_for(static_cast<std::size_t>(trials), [&](std::size_t trial) {
    auto rng = make_rng(derive_seed(seed, trial));
    const int d = spec.dimension;
    std::vector<double> z(d), eps(d);
    detail::uniform_ball(rng, d, radius, z);
    bool ok = true;
    for (long t = t0 + 1; t <= spec.horizon && ok; ++t) {
      const double lam = spec.lambda_at(t);
      detail::uniform_ball(rng, d, spec.noise_scale_at(t), eps);
      double norm_sq = 0.0;
      for (int j = 0; j < d; ++j) {
        z[j] = lam * z[j] + eps[j];
        norm_sq += z[j] * z[j];
      }
      if (norm_sq > 4.0 * radius * radius) ok = false;
    }
    stayed[trial] = ok ? 1 : 0;
  });

  EscapeResult res;
  res.trials = trials;
  res.t0 = t0;
  res.radius = radius;
  int count = 0;
  for (char c : stayed) count += c;
  res.stay_fraction = static_cast<double>(count) / trials;

  double sup_noise = 0.0;
  for (long t = t0 + 1; t <= spec.horizon; ++t) sup_noise = std::max(sup_noise, spec.noise_scale_at(t));
  try {
    res.bound = kolmogorov_bound(0.0, radius, spec.tail_second_moment_sum(t0), sup_noise,
                                 spec.dimension);
  } catch (const std::domain_error&) {
    res.bound = 0.0;  // vacuous when beta <= 0
  }
  return res;
}

}  // namespace boulevard
