#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "tcs/linalg.hpp"
#include "tcs/rng.hpp"

namespace tcs {
namespace {

Matrix reconstruct(const SvdResult& s) {
  Matrix us = s.u;
  for (std::size_t r = 0; r < us.rows(); ++r)
    for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= s.sigma[c];
  return oracle::naive_matmul(us, oracle::naive_transpose(s.v));
}

double orthonormality_error(const Matrix& v) {
  const Matrix g = oracle::naive_matmul(oracle::naive_transpose(v), v);
  return max_abs_diff(g, Matrix::identity(v.cols()));
}

TEST(SvdThin, AxisAlignedCenteredData) {
  const SvdResult s = svd_thin(Matrix{{1, 0}, {-1, 0}});
  ASSERT_EQ(s.sigma.size(), 2u);
  EXPECT_NEAR(s.sigma[0], std::sqrt(2.0), 1e-15);
  EXPECT_EQ(s.sigma[1], 0.0);
  EXPECT_NEAR(s.v(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(s.v(1, 0), 0.0, 1e-15);
  EXPECT_LE(orthonormality_error(s.u), 1e-12);
}

TEST(SvdThin, IdentityGivesSignedPermutation) {
  const SvdResult s = svd_thin(Matrix::identity(3));
  for (double sv : s.sigma) EXPECT_NEAR(sv, 1.0, 1e-15);
  for (std::size_t c = 0; c < 3; ++c) {
    int ones = 0;
    for (std::size_t r = 0; r < 3; ++r) {
      const double a = std::abs(s.v(r, c));
      EXPECT_TRUE(a < 1e-15 || std::abs(a - 1.0) < 1e-15);
      ones += a > 0.5;
    }
    EXPECT_EQ(ones, 1);
  }
}

TEST(SvdThin, RandomMatchesGramEigenvalues) {
  Rng rng(7);
  const Matrix x = rng.normal_matrix(20, 6);
  const SvdResult s = svd_thin(x);
  EXPECT_LE(max_abs_diff(reconstruct(s), x), 1e-6);
  const auto ev = oracle::symmetric_eigenvalues(oracle::naive_matmul(oracle::naive_transpose(x), x));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(s.sigma[i] * s.sigma[i], ev[i], 1e-6);
}

TEST(SvdThin, PropertiesOverShapes) {
  Rng rng(101);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t rows = 1 + rng.below(40);
    const std::size_t cols = 1 + rng.below(20);
    Matrix x = rng.normal_matrix(rows, cols, 1.0 + 10.0 * rng.uniform());
    if (trial % 5 == 0 && cols > 1) {
      for (std::size_t r = 0; r < rows; ++r) x(r, cols - 1) = 2.0 * x(r, 0);  // rank deficient
    }
    const SvdResult s = svd_thin(x);
    const std::size_t k = std::min(rows, cols);
    ASSERT_EQ(s.sigma.size(), k);
    ASSERT_EQ(s.u.rows(), rows);
    ASSERT_EQ(s.v.rows(), cols);
    ASSERT_EQ(s.v.cols(), k);
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_GE(s.sigma[i], 0.0);
      if (i) EXPECT_LE(s.sigma[i], s.sigma[i - 1]);
    }
    EXPECT_LE(orthonormality_error(s.v), 1e-8) << rows << "x" << cols;
    EXPECT_LE(max_abs_diff(reconstruct(s), x), 1e-6 * std::max(1.0, max_abs(x)));
    for (std::size_t c = 0; c < k; ++c) {
      std::size_t best = 0;
      for (std::size_t r = 1; r < cols; ++r)
        if (std::abs(s.v(r, c)) > std::abs(s.v(best, c))) best = r;
      EXPECT_GT(s.v(best, c), 0.0);
    }
  }
}

TEST(SvdThin, TallMatrixUsesQrPathAccurately) {
  Rng rng(3);
  const Matrix x = rng.normal_matrix(300, 12);
  const SvdResult s = svd_thin(x);
  EXPECT_LE(orthonormality_error(s.v), 1e-10);
  EXPECT_LE(orthonormality_error(s.u), 1e-10);
  EXPECT_LE(max_abs_diff(reconstruct(s), x), 1e-9);
}

TEST(SvdThin, DeterministicBits) {
  Rng rng(5);
  const Matrix x = rng.normal_matrix(17, 9);
  const SvdResult a = svd_thin(x);
  const SvdResult b = svd_thin(x);
  EXPECT_TRUE(a.u == b.u);
  EXPECT_TRUE(a.v == b.v);
  EXPECT_EQ(a.sigma, b.sigma);
}

TEST(SvdThin, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(svd_thin(Matrix(0, 3)), PreconditionError);
  Matrix bad{{1, 2}, {3, NAN}};
  EXPECT_THROW(svd_thin(bad), PreconditionError);
}

TEST(SvdThin, SweepCapRaisesDecompositionError) {
  Rng rng(9);
  SvdOptions opt;
  opt.max_sweeps = 1;
  try {
    svd_thin(rng.normal_matrix(10, 8), opt);
    FAIL() << "expected DecompositionError";
  } catch (const DecompositionError& e) {
    EXPECT_EQ(e.iterations(), 1u);
  }
}

TEST(LeastSquares, IdentityRegressor) {
  const Matrix w = least_squares(Matrix::identity(2), Matrix{{2, 0}, {0, 3}});
  EXPECT_LE(max_abs_diff(w, Matrix{{2, 0}, {0, 3}}), 1e-15);
}

TEST(LeastSquares, SelfRegressionIsIdentity) {
  Rng rng(21);
  const Matrix a = rng.normal_matrix(30, 5);
  EXPECT_LE(max_abs_diff(least_squares(a, a), Matrix::identity(5)), 1e-8);
}

TEST(LeastSquares, LocalOptimalityProbe) {
  Rng rng(11);
  const Matrix a = rng.normal_matrix(50, 4);
  const Matrix b = rng.normal_matrix(50, 3);
  const Matrix w = least_squares(a, b);
  const double base = frobenius_norm(oracle::naive_matmul(a, w) - b);
  for (int i = 0; i < 100; ++i) {
    const Matrix perturbed = w + rng.normal_matrix(4, 3) * 1e-3;
    EXPECT_LE(base, frobenius_norm(oracle::naive_matmul(a, perturbed) - b));
  }
}

TEST(LeastSquares, GradientConditionWithRidge) {
  Rng rng(12);
  const Matrix a = rng.normal_matrix(40, 6);
  const Matrix b = rng.normal_matrix(40, 2);
  for (double ridge : {0.0, 0.5, 3.0}) {
    const Matrix w = least_squares(a, b, ridge);
    Matrix grad = oracle::naive_matmul(oracle::naive_transpose(a), oracle::naive_matmul(a, w) - b) * 2.0;
    grad += w * (2.0 * ridge);
    const double scale = max_abs(oracle::naive_matmul(oracle::naive_transpose(a), b));
    EXPECT_LE(max_abs(grad), 1e-6 * scale);
  }
}

TEST(LeastSquares, SingularNormalEquationsAskForRidge) {
  Rng rng(13);
  const Matrix a = rng.normal_matrix(3, 6);  // N < p
  const Matrix b = rng.normal_matrix(3, 2);
  try {
    least_squares(a, b);
    FAIL() << "expected SingularMatrixError";
  } catch (const SingularMatrixError& e) {
    EXPECT_NE(std::string(e.what()).find("raise the ridge"), std::string::npos);
  }
  EXPECT_NO_THROW(least_squares(a, b, 1e-6));
  EXPECT_THROW(least_squares(a, b, -1.0), PreconditionError);
}

TEST(SolveSpd, IdentityAndDiagonal) {
  const Matrix b{{1, 2}, {3, 4}};
  EXPECT_TRUE(solve_spd(Matrix::identity(2), b) == b);
  const Matrix x = solve_spd(Matrix{{2, 0}, {0, 4}}, Matrix{{2}, {8}});
  EXPECT_DOUBLE_EQ(x(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(x(1, 0), 2.0);
}

TEST(SolveSpd, RandomResidualAndGaussOracle) {
  Rng rng(3);
  const Matrix m = rng.normal_matrix(6, 6);
  Matrix a = oracle::naive_matmul(oracle::naive_transpose(m), m) + Matrix::identity(6);
  const Matrix b = rng.normal_matrix(6, 3);
  const Matrix x = solve_spd(a, b);
  EXPECT_LE(max_abs_diff(oracle::naive_matmul(a, x), b), 1e-8);
  EXPECT_LE(max_abs_diff(x, oracle::gauss_solve(a, b)), 1e-9);
}

TEST(SolveSpd, Errors) {
  EXPECT_THROW(solve_spd(Matrix{{1, 0}, {0, -1}}, Matrix{{1}, {1}}), SingularMatrixError);
  EXPECT_THROW(solve_spd(Matrix{{1, 0.5}, {0, 1}}, Matrix{{1}, {1}}), PreconditionError);
  EXPECT_THROW(solve_spd(Matrix{{1, 1}, {1, 1}}, Matrix{{1}, {1}}), SingularMatrixError);
}

TEST(Orthonormal, CompletionAndRandomBasis) {
  const Matrix q = random_orthonormal(9, 4);
  EXPECT_LE(orthonormality_error(q), 1e-12);
  EXPECT_TRUE(q == random_orthonormal(9, 4));
  Matrix partial(5, 2);
  partial(0, 0) = 1.0;
  partial(3, 1) = 1.0;
  const Matrix full = complete_orthonormal_basis(partial, 8);
  EXPECT_LE(orthonormality_error(full), 1e-12);
  EXPECT_EQ(full(0, 0), 1.0);
  EXPECT_EQ(full(3, 1), 1.0);
}

}  // namespace
}  // namespace tcs
