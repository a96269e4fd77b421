#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace boulevard {

// Row-major numeric matrix; the covariate container throughout.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * cols + j]; }
  std::span<const double> row(int i) const {
    return {values.data() + static_cast<std::size_t>(i) * cols, static_cast<std::size_t>(cols)};
  }
};

// A regression sample; `signal` carries the noiseless response when known
// (synthetic data), otherwise stays empty.
struct Dataset {
  Matrix x;
  std::vector<double> y;
  std::vector<double> signal;

  int n() const { return x.rows; }
  int d() const { return x.cols; }
};

inline void check_unit_cube(std::span<const double> x) {
  for (double v : x)
    if (!(v >= 0.0 && v <= 1.0)) throw std::domain_error("point outside the unit cube");
}

// Per-column min-max map onto [0,1], learned on training data and replayed
// on later folds/queries (values outside the training range clamp).
struct FeatureScaling {
  std::vector<double> min;
  std::vector<double> max;

  double transform_one(double v, int j) const {
    const double span = max[j] - min[j];
    if (span <= 0.0) return 0.5;
    const double u = (v - min[j]) / span;
    return u < 0.0 ? 0.0 : (u > 1.0 ? 1.0 : u);
  }

  void apply(Matrix& m) const {
    for (int i = 0; i < m.rows; ++i)
      for (int j = 0; j < m.cols; ++j) m.at(i, j) = transform_one(m.at(i, j), j);
  }

  static FeatureScaling fit(const Matrix& m) {
    FeatureScaling s;
    s.min.assign(m.cols, std::numeric_limits<double>::infinity());
    s.max.assign(m.cols, -std::numeric_limits<double>::infinity());
    for (int i = 0; i < m.rows; ++i)
      for (int j = 0; j < m.cols; ++j) {
        s.min[j] = std::min(s.min[j], m.at(i, j));
        s.max[j] = std::max(s.max[j], m.at(i, j));
      }
    return s;
  }
};

}  // namespace boulevard
