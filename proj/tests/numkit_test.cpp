#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fairlens/numkit.hpp"
#include "fairlens/rng.hpp"

using namespace fairlens;

namespace {

// Cyclic Jacobi rotations; returns eigenvalues sorted descending with matching columns.
std::pair<Vector, std::vector<Vector>> jacobi_eigen(Matrix a) {
  const std::size_t n = a.rows();
  Matrix v = Matrix::identity(n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto i, auto j) { return a(i, i) > a(j, j); });
  Vector values;
  std::vector<Vector> vectors;
  for (auto i : idx) {
    values.push_back(a(i, i));
    Vector col(n);
    for (std::size_t k = 0; k < n; ++k) col[k] = v(k, i);
    vectors.push_back(col);
  }
  return {values, vectors};
}

Matrix random_psd(Rng& rng, std::size_t n) {
  Matrix b(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) b(i, j) = rng.gaussian();
  return matmul(b, transpose(b));
}

}  // namespace

TEST(Cosine, Examples) {
  EXPECT_DOUBLE_EQ(cosine(Vector{1, 0}, Vector{0, 1}), 0.0);
  EXPECT_NEAR(cosine(Vector{1, 1}, Vector{2, 2}), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(cosine(Vector{1, 0}, Vector{-1, 0}), -1.0);
}

TEST(Cosine, Errors) {
  EXPECT_THROW(cosine(Vector{0, 0}, Vector{1, 0}), Error);
  EXPECT_THROW(cosine(Vector{1, 0}, Vector{1, 0, 0}), Error);
  EXPECT_THROW(cosine(Vector{NAN, 0}, Vector{1, 0}), Error);
}

TEST(Cosine, Symmetric) {
  Rng rng(7);
  for (int t = 0; t < 200; ++t) {
    Vector a(5), b(5);
    for (auto& x : a) x = rng.uniform(-1, 1);
    for (auto& x : b) x = rng.uniform(-1, 1);
    EXPECT_EQ(cosine(a, b), cosine(b, a));
  }
}

TEST(Softmax, Examples) {
  auto m = softmax_rows(Matrix{{0, 0}});
  EXPECT_DOUBLE_EQ(m(0, 0), 0.5);
  m = softmax_rows(Matrix{{1000, 1000}});
  EXPECT_DOUBLE_EQ(m(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(m(0, 1), 0.5);
  m = softmax_rows(Matrix{{std::log(2.0), 0}});
  EXPECT_NEAR(m(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m(0, 1), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    Matrix a(3, 6), shifted(3, 6);
    for (std::size_t i = 0; i < 3; ++i) {
      const double c = rng.uniform(-50, 50);
      for (std::size_t j = 0; j < 6; ++j) {
        a(i, j) = rng.uniform(-10, 10);
        shifted(i, j) = a(i, j) + c;
      }
    }
    const auto p = softmax_rows(a), q = softmax_rows(shifted);
    for (std::size_t i = 0; i < 3; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < 6; ++j) {
        sum += p(i, j);
        EXPECT_NEAR(p(i, j), q(i, j), 1e-12);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Entropy, Examples) {
  EXPECT_DOUBLE_EQ(entropy_rows(Matrix{{1, 0}, {0, 1}}), 0.0);
  EXPECT_NEAR(entropy_rows(Matrix{{0.25, 0.25, 0.25, 0.25}}), std::log(4.0), 1e-15);
  EXPECT_NEAR(entropy_rows(Matrix{{1, 0}, {0.5, 0.5}}), std::log(2.0) / 2, 1e-15);
  EXPECT_THROW(entropy_rows(Matrix{{0.5, 0.4}}), Error);
}

TEST(Entropy, Bounded) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    Matrix m(2, 5);
    for (std::size_t i = 0; i < 2; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 5; ++j) s += (m(i, j) = rng.uniform());
      for (std::size_t j = 0; j < 5; ++j) m(i, j) /= s;
    }
    const double h = entropy_rows(m);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(5.0) + 1e-12);
  }
}

TEST(CrossEntropy, Examples) {
  EXPECT_DOUBLE_EQ(cross_entropy(Vector{1, 0}, Vector{1, 0}), 0.0);
  EXPECT_NEAR(cross_entropy(Vector{0.5, 0.5}, Vector{0, 1}), std::log(2.0), 1e-15);
  EXPECT_NEAR(cross_entropy(Vector{0.25, 0.75}, Vector{1, 0}), std::log(4.0), 1e-15);
  EXPECT_THROW(cross_entropy(Vector{0.5, 0.5}, Vector{1, 0, 0}), Error);
}

TEST(Eigen, Examples) {
  auto r = top_eigenvectors(Matrix{{2, 0}, {0, 1}}, 1);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_NEAR(r[0].value, 2.0, 1e-12);
  EXPECT_NEAR(r[0].vector[0], 1.0, 1e-10);
  EXPECT_NEAR(r[0].vector[1], 0.0, 1e-10);

  r = top_eigenvectors(Matrix::identity(3), 1);
  EXPECT_NEAR(r[0].value, 1.0, 1e-12);
  EXPECT_NEAR(norm(r[0].vector), 1.0, 1e-12);
  const auto first = std::find_if(r[0].vector.begin(), r[0].vector.end(), [](double c) { return std::abs(c) > 1e-12; });
  EXPECT_GT(*first, 0.0);

  r = top_eigenvectors(Matrix{{1, 0}, {0, 0}}, 2);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_NEAR(r[0].value, 1.0, 1e-12);
  EXPECT_NEAR(r[1].value, 0.0, 1e-12);
  EXPECT_NEAR(r[0].vector[0], 1.0, 1e-10);
  EXPECT_NEAR(std::abs(r[1].vector[1]), 1.0, 1e-10);
}

TEST(Eigen, Errors) {
  EXPECT_THROW(top_eigenvectors(Matrix(2, 3), 1), Error);
  EXPECT_THROW(top_eigenvectors(Matrix{{1, 2}, {0, 1}}, 1), Error);
  EXPECT_THROW(top_eigenvectors(Matrix::identity(2), 3), Error);
}

TEST(Eigen, ClusteredEigenvalues) {
  const auto r = top_eigenvectors(Matrix{{1, 0, 0}, {0, 0.99, 0}, {0, 0, 0.5}}, 2);
  EXPECT_NEAR(r[0].value, 1.0, 1e-12);
  EXPECT_NEAR(r[1].value, 0.99, 1e-12);
  EXPECT_NEAR(r[0].vector[0], 1.0, 1e-10);
  EXPECT_NEAR(r[1].vector[1], 1.0, 1e-10);
  EXPECT_NEAR(std::abs(dot(r[0].vector, r[1].vector)), 0.0, 1e-12);
}

TEST(Eigen, MatchesJacobiOnRandomPsd) {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix c = random_psd(rng, 8);
    const auto [values, vectors] = jacobi_eigen(c);
    const std::size_t n = 3;
    const auto got = top_eigenvectors(c, n);
    ASSERT_EQ(got.size(), n);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(got[i].value, values[i], 1e-8 * std::max(1.0, values[0]));
      EXPECT_NEAR(std::abs(dot(got[i].vector, vectors[i])), 1.0, 1e-8);
    }
    // V diag(lambda) V^T equals P C P with P the projector onto span(V).
    Matrix recon(8, 8), proj(8, 8);
    for (const auto& e : got)
      for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
          recon(i, j) += e.value * e.vector[i] * e.vector[j];
          proj(i, j) += e.vector[i] * e.vector[j];
        }
    const Matrix restricted = matmul(matmul(proj, c), proj);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(recon(i, j), restricted(i, j), 1e-8 * std::max(1.0, values[0]));
  }
}

TEST(FiniteDiff, Examples) {
  auto g = finite_diff_grad([](std::span<const double> x) { return x[0] * x[0]; }, Vector{3.0});
  EXPECT_NEAR(g[0], 6.0, 1e-5);
  g = finite_diff_grad([](std::span<const double>) { return 4.2; }, Vector{1.0, -7.0});
  EXPECT_NEAR(g[0], 0.0, 1e-9);
  EXPECT_NEAR(g[1], 0.0, 1e-9);
  g = finite_diff_grad([](std::span<const double> x) { return x[0] + x[1]; }, Vector{1.0, 2.0});
  EXPECT_NEAR(g[0], 1.0, 1e-8);
  EXPECT_NEAR(g[1], 1.0, 1e-8);
}

TEST(MatrixOps, ShapesChecked) {
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), Error);
  EXPECT_THROW(matvec(Matrix(2, 3), Vector{1, 2}), Error);
  EXPECT_THROW(Matrix(2, 2, Vector{1, 2, 3}), Error);
  const Matrix p = matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{0, 1}, {1, 0}});
  EXPECT_EQ(p, (Matrix{{2, 1}, {4, 3}}));
  EXPECT_EQ(matvec(Matrix{{1, 2}, {3, 4}}, Vector{1, 1}), (Vector{3, 7}));
}

TEST(RngTest, DeterministicAndBounded) {
  Rng a(99), b(99);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_EQ(a.next(), b.next());
    const auto v = a.below(7);
    EXPECT_LT(v, 7u);
    b.below(7);
    const double u = a.uniform();
    b.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  // Reference output of xoshiro256** seeded through SplitMix64(0).
  SplitMix64 sm(0);
  EXPECT_EQ(sm.next(), 0xe220a8397b1dcdafULL);
}
