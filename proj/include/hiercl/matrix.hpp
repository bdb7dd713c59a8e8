#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hiercl/error.hpp"

namespace hiercl {

/// Dense row-major matrix of doubles. The whole training and evaluation path
/// runs in double precision so that finite-difference gradient checks have
/// headroom below 1e-4 relative error.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

  static DenseMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    check(!rows.empty(), "matrix/empty", "from_rows: no rows given");
    DenseMatrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      check(rows[i].size() == m.cols_, "matrix/ragged_rows",
            "from_rows: row " + std::to_string(i) + " has " +
                std::to_string(rows[i].size()) + " entries, expected " +
                std::to_string(m.cols_));
      std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  bool all_finite() const {
    for (const double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const DenseMatrix& a, const DenseMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.values_ == b.values_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

/// v / ||v||; errors on the zero vector (a degenerate embedding upstream).
inline std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = norm2(v);
  check(n > 0.0, "numerics/zero_vector", "l2_normalize: zero vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

/// Cosine similarity, clamped to [-1, 1] against floating-point overshoot so
/// downstream logits stay bounded.
inline double cosine_sim(std::span<const double> a, std::span<const double> b) {
  check(a.size() == b.size(), "numerics/dim_mismatch",
        "cosine_sim: dimension mismatch (" + std::to_string(a.size()) + " vs " +
            std::to_string(b.size()) + ")");
  const double na = norm2(a);
  const double nb = norm2(b);
  check(na > 0.0 && nb > 0.0, "numerics/zero_vector", "cosine_sim: zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// Row-wise cosine similarity matrix: entry (i, j) = cosine_sim(A.row(i), B.row(j)).
inline DenseMatrix sim_matrix(const DenseMatrix& a, const DenseMatrix& b) {
  check(a.cols() == b.cols(), "numerics/dim_mismatch",
        "sim_matrix: inner dimensions differ (" + std::to_string(a.cols()) +
            " vs " + std::to_string(b.cols()) + ")");
  std::vector<double> na(a.rows()), nb(b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    na[i] = norm2(a.row(i));
    check(na[i] > 0.0, "numerics/zero_vector",
          "sim_matrix: zero row " + std::to_string(i) + " in left matrix");
  }
  for (std::size_t j = 0; j < b.rows(); ++j) {
    nb[j] = norm2(b.row(j));
    check(nb[j] > 0.0, "numerics/zero_vector",
          "sim_matrix: zero row " + std::to_string(j) + " in right matrix");
  }
  DenseMatrix s(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      s(i, j) = std::clamp(dot(a.row(i), b.row(j)) / (na[i] * nb[j]), -1.0, 1.0);
  return s;
}

/// logits - logsumexp(logits), computed with the max-shift trick.
/// exp of the output sums to 1 within 1e-12.
inline std::vector<double> log_softmax_row(std::span<const double> logits) {
  check(!logits.empty(), "numerics/empty", "log_softmax_row: empty input");
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (const double x : logits) sum += std::exp(x - m);
  const double lse = m + std::log(sum);
  std::vector<double> out(logits.begin(), logits.end());
  for (double& x : out) x -= lse;
  return out;
}

inline DenseMatrix multiply(const DenseMatrix& a, const DenseMatrix& b) {
  check(a.cols() == b.rows(), "matrix/shape_mismatch", "multiply: shape mismatch");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

/// A^T * B, with A (n x p) and B (n x q) sharing the row count n.
inline DenseMatrix multiply_at_b(const DenseMatrix& a, const DenseMatrix& b) {
  check(a.rows() == b.rows(), "matrix/shape_mismatch", "multiply_at_b: shape mismatch");
  DenseMatrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k)
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aki * b(k, j);
    }
  return c;
}

/// A * B^T, with A (m x d) and B (n x d) sharing the column count d.
inline DenseMatrix multiply_abt(const DenseMatrix& a, const DenseMatrix& b) {
  check(a.cols() == b.cols(), "matrix/shape_mismatch", "multiply_abt: shape mismatch");
  DenseMatrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = dot(a.row(i), b.row(j));
  return c;
}

struct Pca2Result {
  DenseMatrix projection;       // n x 2, mean-centered data onto the top-2 components
  double explained_first = 0;   // variance along the first component
  double explained_second = 0;  // variance along the second component
  std::vector<double> component_first;
  std::vector<double> component_second;
};

namespace detail {

inline std::vector<double> matvec(const DenseMatrix& m, const std::vector<double>& v) {
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = dot(m.row(i), v);
  return out;
}

// Dominant eigenpair by power iteration. Returns eigenvalue; eigenvector in v.
// `ortho`, when non-null, is re-orthogonalized out of the iterate every step
// (used for the second component instead of explicit deflation).
inline double power_iteration(const DenseMatrix& cov, std::vector<double>& v,
                              const std::vector<double>* ortho) {
  const std::size_t d = cov.rows();
  v.assign(d, 0.0);
  // Deterministic, not-axis-aligned start.
  for (std::size_t i = 0; i < d; ++i) v[i] = 1.0 + 1e-3 * static_cast<double>(i + 1);
  if (ortho != nullptr) {
    const double c = dot(v, *ortho);
    for (std::size_t i = 0; i < d; ++i) v[i] -= c * (*ortho)[i];
  }
  double vn = norm2(v);
  for (double& x : v) x /= vn;

  double eigenvalue = 0.0;
  for (int iter = 0; iter < 1000; ++iter) {
    std::vector<double> w = matvec(cov, v);
    if (ortho != nullptr) {
      const double c = dot(w, *ortho);
      for (std::size_t i = 0; i < d; ++i) w[i] -= c * (*ortho)[i];
    }
    const double wn = norm2(w);
    if (wn < 1e-300) {  // null direction: eigenvalue 0, keep last iterate
      eigenvalue = 0.0;
      break;
    }
    for (double& x : w) x /= wn;
    double delta = 0.0;
    for (std::size_t i = 0; i < d; ++i) delta = std::max(delta, std::abs(w[i] - v[i]));
    v = std::move(w);
    eigenvalue = dot(v, matvec(cov, v));
    if (delta < 1e-13) break;
  }
  return eigenvalue;
}

}  // namespace detail

/// Projects the rows of X onto the top-2 principal components of the sample
/// covariance (power iteration, second component kept orthogonal to the
/// first). Sign convention: the largest-magnitude loading of each component
/// is positive. Errors when all rows are identical (rank 0).
inline Pca2Result pca2(const DenseMatrix& x) {
  check(x.rows() >= 3, "numerics/too_few_rows",
        "pca2: need at least 3 rows, got " + std::to_string(x.rows()));
  check(x.cols() >= 2, "numerics/too_few_cols",
        "pca2: need at least 2 columns, got " + std::to_string(x.cols()));
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();

  DenseMatrix centered(n, d);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) centered(i, j) = x(i, j) - mean;
  }

  DenseMatrix cov = multiply_at_b(centered, centered);
  double max_abs = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      cov(i, j) /= static_cast<double>(n - 1);
      max_abs = std::max(max_abs, std::abs(cov(i, j)));
    }
  check(max_abs > 1e-300, "numerics/rank_zero", "pca2: all rows identical (rank 0)");

  Pca2Result result;
  result.explained_first = detail::power_iteration(cov, result.component_first, nullptr);
  result.explained_second =
      detail::power_iteration(cov, result.component_second, &result.component_first);
  result.explained_first = std::max(result.explained_first, 0.0);
  result.explained_second = std::max(result.explained_second, 0.0);
  if (result.explained_second > result.explained_first) {
    std::swap(result.explained_first, result.explained_second);
    std::swap(result.component_first, result.component_second);
  }

  for (auto* comp : {&result.component_first, &result.component_second}) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < d; ++i)
      if (std::abs((*comp)[i]) > std::abs((*comp)[arg])) arg = i;
    if ((*comp)[arg] < 0.0)
      for (double& c : *comp) c = -c;
  }

  result.projection = DenseMatrix(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    result.projection(i, 0) = dot(centered.row(i), result.component_first);
    result.projection(i, 1) = dot(centered.row(i), result.component_second);
  }
  return result;
}

}  // namespace hiercl
