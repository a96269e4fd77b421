#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace boulevard {

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Unbiased sample variance (n-1 denominator).
inline double sample_variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double sample_sd(std::span<const double> v) { return std::sqrt(sample_variance(v)); }

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  const std::size_t h = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + h, v.end());
  double hi = v[h];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + h - 1, v.begin() + h);
  return 0.5 * (v[h - 1] + hi);
}

inline double log_choose(double n, double k) {
  if (k < 0.0 || k > n) return -std::numeric_limits<double>::infinity();
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }

// Acklam's rational approximation refined by one Halley step; ~1e-15 abs error.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p outside (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * 3.141592653589793238462643) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

// Survival function of the Kolmogorov distribution, Q(t) = P(K > t).
// Two complementary series; the theta-transformed one converges fast for small t.
inline double kolmogorov_survival(double t) {
  if (t <= 0.0) return 1.0;
  if (t < 1.18) {
    const double v = 3.141592653589793238462643 * 3.141592653589793238462643 / (8.0 * t * t);
    double s = 0.0;
    for (int k = 1; k <= 20; k += 2) s += std::exp(-v * k * k);
    return 1.0 - std::sqrt(2.0 * 3.141592653589793238462643) / t * s;
  }
  double s = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * t * t);
    s += sign * term;
    if (term < 1e-18) break;
    sign = -sign;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

// psi'(x); asymptotic expansion after shifting the argument up.
inline double trigamma(double x) {
  if (x <= 0.0) throw std::invalid_argument("trigamma: x must be positive");
  double acc = 0.0;
  while (x < 10.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double ix = 1.0 / x, ix2 = ix * ix;
  return acc + ix * (1.0 + ix * (0.5 + ix * (1.0 / 6.0 - ix2 * (1.0 / 30.0 - ix2 / 42.0))));
}

}  // namespace boulevard
