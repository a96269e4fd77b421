#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "boulevard/dataset.hpp"
#include "boulevard/parallel.hpp"
#include "boulevard/rng.hpp"
#include "boulevard/stats.hpp"
#include "boulevard/trees.hpp"

namespace boulevard {

// Stacked structure vectors of the full sample: row i = s_n(x_i; w)^T.
inline Eigen::MatrixXd structure_matrix(const TreeStructure& structure, const Matrix& x,
                                        const Subsample& subsample) {
  const int n = x.rows;
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  const std::vector<int> leaf = leaf_assignments(structure, x);
  std::vector<std::vector<int>> members(structure.leaf_count());
  for (int j : subsample.indices) members[leaf[j]].push_back(j);
  for (int i = 0; i < n; ++i) {
    const auto& mem = members[leaf[i]];
    if (mem.empty()) continue;
    const double w = 1.0 / static_cast<double>(mem.size());
    for (int j : mem) s(i, j) = w;
  }
  return s;
}

enum class KernelMode { monte_carlo, exhaustive };

struct KernelEstimate {
  Eigen::MatrixXd matrix;  // symmetrized estimate of E_{q,w}[S_n]
  long replications = 0;
  KernelMode mode = KernelMode::monte_carlo;
  double max_asymmetry = 0.0;  // max |K - K^T| entry before symmetrization
};

namespace detail {

// Accumulates one structure matrix, scaled, into acc without materializing it.
inline void accumulate_structure(Eigen::MatrixXd& acc, const TreeStructure& structure,
                                 const Matrix& x, const Subsample& subsample, double scale) {
  const std::vector<int> leaf = leaf_assignments(structure, x);
  std::vector<std::vector<int>> in_leaf(structure.leaf_count());
  for (int i = 0; i < x.rows; ++i) in_leaf[leaf[i]].push_back(i);
  std::vector<std::vector<int>> members(structure.leaf_count());
  for (int j : subsample.indices) members[leaf[j]].push_back(j);
  for (int l = 0; l < structure.leaf_count(); ++l) {
    if (members[l].empty()) continue;
    const double w = scale / static_cast<double>(members[l].size());
    for (int i : in_leaf[l])
      for (int j : members[l]) acc(i, j) += w;
  }
}

inline KernelEstimate finalize_monte_carlo(Eigen::MatrixXd sum, long replications) {
  sum /= static_cast<double>(replications);
  KernelEstimate est;
  est.max_asymmetry = (sum - sum.transpose()).cwiseAbs().maxCoeff();
  est.matrix = 0.5 * (sum + sum.transpose());
  est.replications = replications;
  est.mode = KernelMode::monte_carlo;
  return est;
}

}  // namespace detail

// Monte Carlo estimate of E_{q,w}[S_n]. The sampler draws one (structure,
// subsample) pair per call. Replications are split into fixed chunks with
// seeds derived per chunk and merged in chunk order, so the result depends
// only on the seed, never on the worker count.
template <typename Sampler>
KernelEstimate estimate_kernel_mc(const Matrix& x, Sampler&& sample_tree, int replications,
                                  std::uint64_t seed) {
  if (replications < 1) throw std::invalid_argument("replications must be >= 1");
  const int n_chunks = std::min(replications, 32);
  std::vector<Eigen::MatrixXd> partial(n_chunks, Eigen::MatrixXd::Zero(x.rows, x.rows));
  parallel_for(static_cast<std::size_t>(n_chunks), [&](std::size_t c) {
    auto rng = make_rng(derive_seed(seed, c));
    const int lo = static_cast<int>(c) * replications / n_chunks;
    const int hi = (static_cast<int>(c) + 1) * replications / n_chunks;
    for (int r = lo; r < hi; ++r) {
      auto [structure, subsample] = sample_tree(rng);
      detail::accumulate_structure(partial[c], structure, x, subsample, 1.0);
    }
  });
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(x.rows, x.rows);
  for (const auto& p : partial) sum += p;
  return detail::finalize_monte_carlo(std::move(sum), replications);
}

// Kernel estimated from an already-fitted ensemble, reusing each tree's
// stored (structure, subsample) draw.
inline KernelEstimate estimate_kernel_from_trees(const Matrix& x,
                                                 std::span<const FittedTree> trees) {
  if (trees.empty()) throw std::invalid_argument("no trees");
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(x.rows, x.rows);
  for (const auto& t : trees) detail::accumulate_structure(sum, t.structure, x, t.subsample, 1.0);
  return detail::finalize_monte_carlo(std::move(sum), static_cast<long>(trees.size()));
}

// Plain average of the realized structure matrices, no symmetrization: the
// ensemble's own empirical kernel. Tracing a path against the fixed point of
// this matrix isolates the path error from the symmetrization residual.
inline Eigen::MatrixXd raw_structure_average(const Matrix& x,
                                             std::span<const FittedTree> trees) {
  if (trees.empty()) throw std::invalid_argument("no trees");
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(x.rows, x.rows);
  for (const auto& t : trees) detail::accumulate_structure(sum, t.structure, x, t.subsample, 1.0);
  return sum / static_cast<double>(trees.size());
}

struct WeightedStructure {
  TreeStructure structure;
  double probability = 1.0;
};

// Exact E_{q,w}[S_n] over a finite structure list and all subsamples of the
// given size (uniformly likely). Refuses when C(n, m) exceeds the
// enumeration budget.
inline KernelEstimate estimate_kernel_exhaustive(const Matrix& x,
                                                 const std::vector<WeightedStructure>& structures,
                                                 int subsample_size) {
  const int n = x.rows;
  if (structures.empty()) throw std::invalid_argument("empty structure list");
  if (subsample_size < 1 || subsample_size > n)
    throw std::invalid_argument("subsample_size out of range");
  double prob_total = 0.0;
  for (const auto& ws : structures) prob_total += ws.probability;
  if (std::abs(prob_total - 1.0) > 1e-9)
    throw std::invalid_argument("structure probabilities must sum to 1");

  const double log_count = log_choose(n, subsample_size);
  const double count = std::exp(log_count);
  if (count > 1e6 + 0.5)
    throw std::runtime_error("enumeration budget exceeded: C(" + std::to_string(n) + "," +
                             std::to_string(subsample_size) + ") = " +
                             std::to_string(static_cast<long long>(std::llround(count))) +
                             " subsamples > 1000000");
  const long n_subsamples = std::llround(count);

  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, n);
  Subsample w;
  w.rate = static_cast<double>(subsample_size) / n;
  for (const auto& ws : structures) {
    const double scale = ws.probability / static_cast<double>(n_subsamples);
    // lexicographic combination enumeration
    std::vector<int> comb(subsample_size);
    std::iota(comb.begin(), comb.end(), 0);
    for (;;) {
      w.indices = comb;
      detail::accumulate_structure(sum, ws.structure, x, w, scale);
      int i = subsample_size - 1;
      while (i >= 0 && comb[i] == n - subsample_size + i) --i;
      if (i < 0) break;
      ++comb[i];
      for (int j = i + 1; j < subsample_size; ++j) comb[j] = comb[j - 1] + 1;
    }
  }
  KernelEstimate est;
  est.max_asymmetry = (sum - sum.transpose()).cwiseAbs().maxCoeff();
  est.matrix = 0.5 * (sum + sum.transpose());
  est.replications = n_subsamples * static_cast<long>(structures.size());
  est.mode = KernelMode::exhaustive;
  return est;
}

struct KernelPropertyReport {
  double max_asymmetry = 0.0;
  double min_entry = 0.0;
  double min_eigenvalue = 0.0;
  double max_column_sum = 0.0;
  double max_row_sum = 0.0;
  double spectral_norm = 0.0;
  double tol = 0.0;
  bool symmetric = false;
  bool nonnegative = false;
  bool psd = false;
  bool norms_ok = false;

  bool pass() const { return symmetric && nonnegative && psd && norms_ok; }
};

inline KernelPropertyReport verify_kernel_properties(const KernelEstimate& est, double tol) {
  KernelPropertyReport r;
  r.tol = tol;
  const Eigen::MatrixXd& k = est.matrix;
  r.max_asymmetry = std::max(est.max_asymmetry, (k - k.transpose()).cwiseAbs().maxCoeff());
  r.min_entry = k.minCoeff();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (k + k.transpose()),
                                                     Eigen::EigenvaluesOnly);
  r.min_eigenvalue = eig.eigenvalues().minCoeff();
  r.spectral_norm = eig.eigenvalues().cwiseAbs().maxCoeff();
  r.max_column_sum = k.colwise().sum().maxCoeff();
  r.max_row_sum = k.rowwise().sum().maxCoeff();
  r.symmetric = r.max_asymmetry <= tol;
  r.nonnegative = r.min_entry >= -tol;
  r.psd = r.min_eigenvalue >= -tol;
  r.norms_ok = r.max_column_sum <= 1.0 + tol && r.max_row_sum <= 1.0 + tol &&
               r.spectral_norm <= 1.0 + tol;
  return r;
}

struct FixedPoint {
  Eigen::VectorXd y_star;
  double lambda = 0.0;
  double residual_norm = 0.0;  // ||y* - lambda K (Y - y*)||_2
};

inline constexpr int kDirectSolveBudget = 5000;

// Solves (I/lambda + K) y* = K Y. The matrix is positive definite for
// lambda in (0,1) and ||K|| <= 1, so an LDLT factorization is exact enough
// for the oracle role.
inline FixedPoint fixed_point(const Eigen::MatrixXd& k, const Eigen::VectorXd& y, double lambda) {
  if (k.rows() != k.cols()) throw std::invalid_argument("kernel matrix must be square");
  if (k.rows() != y.size()) throw std::invalid_argument("kernel/response dimension mismatch");
  if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("lambda must lie in (0,1)");
  if (k.rows() > kDirectSolveBudget)
    throw std::runtime_error("fixed_point: n exceeds the direct solve budget");
  const Eigen::MatrixXd m =
      Eigen::MatrixXd::Identity(k.rows(), k.cols()) / lambda + 0.5 * (k + k.transpose());
  FixedPoint fp;
  fp.lambda = lambda;
  fp.y_star = m.ldlt().solve(k * y);
  fp.residual_norm = (fp.y_star - lambda * (k * (y - fp.y_star))).norm();
  return fp;
}

// Fixed point of a possibly unsymmetric kernel average via an LU solve.
inline FixedPoint fixed_point_unsymmetrized(const Eigen::MatrixXd& k, const Eigen::VectorXd& y,
                                            double lambda) {
  if (k.rows() != k.cols() || k.rows() != y.size())
    throw std::invalid_argument("fixed_point dimension mismatch");
  if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("lambda must lie in (0,1)");
  const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(k.rows(), k.cols()) / lambda + k;
  FixedPoint fp;
  fp.lambda = lambda;
  fp.y_star = m.partialPivLu().solve(k * y);
  fp.residual_norm = (fp.y_star - lambda * (k * (y - fp.y_star))).norm();
  return fp;
}

// Prediction form k_x^T (I/lambda + K)^{-1} Y, computed via one solve.
inline double krr_predict(const Eigen::VectorXd& k_x, const Eigen::MatrixXd& k,
                          const Eigen::VectorXd& y, double lambda) {
  if (k_x.size() != k.rows() || k.rows() != y.size())
    throw std::invalid_argument("krr_predict dimension mismatch");
  if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("lambda must lie in (0,1)");
  const Eigen::MatrixXd m =
      Eigen::MatrixXd::Identity(k.rows(), k.cols()) / lambda + 0.5 * (k + k.transpose());
  return k_x.dot(m.ldlt().solve(y));
}

// Factor once, predict many points; same arithmetic as krr_predict.
class KrrSolver {
 public:
  KrrSolver(const Eigen::MatrixXd& k, const Eigen::VectorXd& y, double lambda) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("lambda must lie in (0,1)");
    const Eigen::MatrixXd m =
        Eigen::MatrixXd::Identity(k.rows(), k.cols()) / lambda + 0.5 * (k + k.transpose());
    v_ = m.ldlt().solve(y);
  }

  double predict(const Eigen::VectorXd& k_x) const { return k_x.dot(v_); }
  const Eigen::VectorXd& solution() const { return v_; }

 private:
  Eigen::VectorXd v_;
};

// Exact hypergeometric chance that a subsample of the given size misses a
// particular leaf holding leaf_size points: C(n-leaf, m) / C(n, m), in log
// space to stay stable at n ~ 1e4.
inline double missing_leaf_probability(long n, long leaf_size, long subsample_size) {
  if (n < 1 || leaf_size < 0 || leaf_size > n) throw std::invalid_argument("bad leaf size");
  if (subsample_size < 0 || subsample_size > n) throw std::invalid_argument("bad subsample size");
  if (subsample_size > n - leaf_size) return 0.0;  // the subsample must hit the leaf
  const double lp = log_choose(static_cast<double>(n - leaf_size),
                               static_cast<double>(subsample_size)) -
                    log_choose(static_cast<double>(n), static_cast<double>(subsample_size));
  return std::exp(lp);
}

}  // namespace boulevard
