#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fairlens/error.hpp"
#include "fairlens/rng.hpp"

namespace fairlens {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      detail::fail(ErrorKind::shape_mismatch, "matrix data length does not equal rows*cols");
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
      if (row.size() != cols_) detail::fail(ErrorKind::shape_mismatch, "ragged matrix literal");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  /// Builds a matrix from equally sized rows.
  static Matrix from_rows(const std::vector<Vector>& rows) {
    const std::size_t cols = rows.empty() ? 0 : rows.front().size();
    Matrix m(rows.size(), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != cols) detail::fail(ErrorKind::shape_mismatch, "ragged matrix rows");
      std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct EigenPair {
  double value = 0.0;
  Vector vector;
};

namespace detail {

inline bool all_finite(std::span<const double> xs) noexcept {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

inline void require_finite(std::span<const double> xs, const char* what) {
  if (!all_finite(xs)) fail(ErrorKind::invalid_argument, std::string(what) + " contains NaN or Inf");
}

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    fail(ErrorKind::shape_mismatch, std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

}  // namespace detail

inline double dot(std::span<const double> a, std::span<const double> b) {
  detail::require_same_size(a.size(), b.size(), "dot: dimension mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double cosine(std::span<const double> a, std::span<const double> b) {
  detail::require_same_size(a.size(), b.size(), "cosine: dimension mismatch");
  detail::require_finite(a, "cosine: first vector");
  detail::require_finite(b, "cosine: second vector");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) detail::fail(ErrorKind::invalid_argument, "cosine: zero-norm vector");
  return dot(a, b) / (na * nb);
}

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  detail::require_same_size(a.cols(), b.rows(), "matmul: inner dimension mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

inline Vector matvec(const Matrix& m, std::span<const double> x) {
  detail::require_same_size(m.cols(), x.size(), "matvec: dimension mismatch");
  Vector y(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) sum += m(i, j) * x[j];
    y[i] = sum;
  }
  return y;
}

/// Row-wise softmax, max-subtracted.
inline Matrix softmax_rows(const Matrix& m) {
  detail::require_finite(m.data(), "softmax_rows: input");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto in = m.row(i);
    auto dst = out.row(i);
    if (in.empty()) continue;
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      dst[j] = std::exp(in[j] - peak);
      total += dst[j];
    }
    for (double& x : dst) x /= total;
  }
  return out;
}

/// Shannon entropy (nats) of one distribution, 0 ln 0 := 0. No validation.
inline double shannon_entropy(std::span<const double> p) noexcept {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

namespace detail {

inline void require_distribution(std::span<const double> p, double tol, const char* what) {
  double total = 0.0;
  for (double x : p) {
    if (!std::isfinite(x) || x < 0.0) {
      fail(ErrorKind::not_distribution, std::string(what) + ": negative or non-finite probability");
    }
    total += x;
  }
  if (p.empty() || std::abs(total - 1.0) > tol) {
    fail(ErrorKind::not_distribution, std::string(what) + ": probabilities do not sum to 1");
  }
}

}  // namespace detail

/// Mean over rows of the Shannon entropy of each row.
inline double entropy_rows(const Matrix& m) {
  if (m.rows() == 0) detail::fail(ErrorKind::not_distribution, "entropy_rows: matrix has no rows");
  double sum = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    detail::require_distribution(m.row(i), 1e-9, "entropy_rows");
    sum += shannon_entropy(m.row(i));
  }
  return sum / static_cast<double>(m.rows());
}

/// -sum_k y_k ln(yhat_k). A zero probability on the labelled class is an error rather than +Inf.
inline double cross_entropy(std::span<const double> predicted, std::span<const double> onehot_label) {
  detail::require_same_size(predicted.size(), onehot_label.size(), "cross_entropy: dimension mismatch");
  detail::require_distribution(predicted, 1e-9, "cross_entropy: predicted");
  std::size_t ones = 0;
  std::size_t label = 0;
  for (std::size_t k = 0; k < onehot_label.size(); ++k) {
    if (onehot_label[k] == 1.0) {
      ++ones;
      label = k;
    } else if (onehot_label[k] != 0.0) {
      detail::fail(ErrorKind::invalid_argument, "cross_entropy: label is not one-hot");
    }
  }
  if (ones != 1) detail::fail(ErrorKind::invalid_argument, "cross_entropy: label must contain exactly one 1");
  if (predicted[label] == 0.0) {
    detail::fail(ErrorKind::degenerate, "cross_entropy: labelled class has probability 0 (loss is +Inf)");
  }
  return -std::log(predicted[label]);
}

/// Leading eigenpairs of a symmetric PSD matrix by power iteration with Hotelling
/// deflation. Iterates are re-orthogonalised against earlier eigenvectors, so the
/// returned vectors are orthonormal to rounding. An eigenpair is accepted once the
/// Rayleigh quotient moves by at most tol*scale and the residual |Cv - lv| is at most
/// 1e3*tol*scale, where scale = max(1, |C|_F).
inline std::vector<EigenPair> top_eigenvectors(const Matrix& cov, std::size_t n, double tol = 1e-12,
                                               std::size_t max_iter = 10'000) {
  const std::size_t dim = cov.rows();
  if (cov.cols() != dim) detail::fail(ErrorKind::shape_mismatch, "top_eigenvectors: matrix is not square");
  if (n == 0 || n > dim) detail::fail(ErrorKind::invalid_argument, "top_eigenvectors: need 1 <= n <= dim");
  if (!(tol > 0.0)) detail::fail(ErrorKind::invalid_argument, "top_eigenvectors: tol must be positive");
  detail::require_finite(cov.data(), "top_eigenvectors: matrix");

  double frob = 0.0;
  double largest = 0.0;
  for (double x : cov.data()) {
    frob += x * x;
    largest = std::max(largest, std::abs(x));
  }
  const double scale = std::max(1.0, std::sqrt(frob));
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = i + 1; j < dim; ++j)
      if (std::abs(cov(i, j) - cov(j, i)) > 1e-12 * std::max(1.0, largest)) {
        detail::fail(ErrorKind::invalid_argument, "top_eigenvectors: matrix is not symmetric");
      }

  Matrix work = cov;
  std::vector<EigenPair> found;
  found.reserve(n);
  Rng rng(0x70e19e5eedULL);

  auto orthogonalize = [&found](Vector& v) {
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& pair : found) {
        const double c = dot(v, pair.vector);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * pair.vector[i];
      }
  };
  auto normalize = [](Vector& v) {
    const double len = norm(v);
    if (len > 0.0)
      for (double& x : v) x /= len;
    return len;
  };

  for (std::size_t k = 0; k < n; ++k) {
    Vector v(dim);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    orthogonalize(v);
    if (normalize(v) < 1e-8) {
      for (std::size_t e = 0; e < dim; ++e) {
        std::fill(v.begin(), v.end(), 0.0);
        v[e] = 1.0;
        orthogonalize(v);
        if (normalize(v) > 1e-6) break;
      }
    }

    double lambda = dot(v, matvec(work, v));
    bool converged = false;
    std::size_t iter = 0;
    // Returns the step length, or -1 when `work` annihilates the remaining space.
    auto step = [&]() {
      Vector w = matvec(work, v);
      orthogonalize(w);
      if (normalize(w) <= std::numeric_limits<double>::min()) return -1.0;
      double moved = 0.0;
      for (std::size_t i = 0; i < dim; ++i) moved += (w[i] - v[i]) * (w[i] - v[i]);
      lambda = dot(w, matvec(work, w));
      v = std::move(w);
      ++iter;
      return std::sqrt(moved);
    };
    for (; iter < max_iter && !converged;) {
      const double before = lambda;
      if (step() < 0.0) {
        lambda = 0.0;
        converged = true;
        break;
      }
      converged = std::abs(lambda - before) <= tol * scale;
    }
    if (!converged) {
      detail::fail(ErrorKind::convergence,
                   "top_eigenvectors: no convergence for component " + std::to_string(k) + " after " +
                       std::to_string(max_iter) + " iterations");
    }
    // The eigenvalue settles quadratically faster than the vector; keep going while the vector still moves.
    for (double last = std::numeric_limits<double>::infinity(); iter < max_iter;) {
      const double moved = step();
      if (moved < 0.0 || moved <= 1e-15 || moved >= last) break;
      last = moved;
    }

    for (double x : v) {
      if (std::abs(x) > 1e-12) {
        if (x < 0.0)
          for (double& y : v) y = -y;
        break;
      }
    }
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) work(i, j) -= lambda * v[i] * v[j];
    found.push_back({lambda, std::move(v)});
  }
  return found;
}

/// Central-difference gradient with per-coordinate step step_scale * max(1, |x_i|).
template <typename F>
Vector finite_diff_grad(F&& f, std::span<const double> x, double step_scale = 1e-6) {
  Vector probe(x.begin(), x.end());
  Vector grad(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = step_scale * std::max(1.0, std::abs(x[i]));
    probe[i] = x[i] + h;
    const double up = f(std::span<const double>(probe));
    probe[i] = x[i] - h;
    const double down = f(std::span<const double>(probe));
    probe[i] = x[i];
    if (std::isnan(up) || std::isnan(down)) {
      detail::fail(ErrorKind::invalid_argument,
                   "finite_diff_grad: function returned NaN near coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace fairlens
