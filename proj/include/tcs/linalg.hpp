#pragma once

// Dense decompositions and solvers: thin SVD (Householder QR + one-sided Jacobi),
// pivoted Cholesky for SPD systems, and normal-equation least squares.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "tcs/errors.hpp"
#include "tcs/matrix.hpp"
#include "tcs/rng.hpp"

namespace tcs {

struct SvdResult {
  Matrix u;      // rows x k
  Vector sigma;  // k, descending
  Matrix v;      // cols x k
};

struct SvdOptions {
  std::size_t max_sweeps = 60;
  double tolerance = 1e-15;
};

namespace detail {

// Column-major scratch: col(j) is a contiguous span of length `length`.
struct ColumnSet {
  std::size_t length = 0;
  std::size_t count = 0;
  std::vector<double> data;

  ColumnSet(std::size_t len, std::size_t n) : length(len), count(n), data(len * n, 0.0) {}
  double* col(std::size_t j) { return data.data() + j * length; }
  const double* col(std::size_t j) const { return data.data() + j * length; }
};

inline double col_dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Householder QR of a tall matrix. Keeps reflectors to rebuild Q·y later.
struct HouseholderQr {
  std::size_t rows = 0;
  std::size_t cols = 0;
  ColumnSet work{0, 0};  // reflector vectors live below the diagonal
  Vector beta;
  Matrix r;

  explicit HouseholderQr(const Matrix& x) : rows(x.rows()), cols(x.cols()), work(x.rows(), x.cols()), beta(x.cols()) {
    for (std::size_t j = 0; j < cols; ++j)
      for (std::size_t i = 0; i < rows; ++i) work.col(j)[i] = x(i, j);
    r = Matrix(cols, cols);
    for (std::size_t k = 0; k < cols; ++k) {
      double* a = work.col(k);
      double norm = 0.0;
      for (std::size_t i = k; i < rows; ++i) norm += a[i] * a[i];
      norm = std::sqrt(norm);
      if (norm == 0.0) {
        beta[k] = 0.0;
        r(k, k) = 0.0;
        continue;
      }
      const double alpha = a[k] > 0 ? -norm : norm;
      a[k] -= alpha;
      double vnorm2 = 0.0;
      for (std::size_t i = k; i < rows; ++i) vnorm2 += a[i] * a[i];
      beta[k] = 2.0 / vnorm2;
      for (std::size_t j = k + 1; j < cols; ++j) {
        double* c = work.col(j);
        double s = 0.0;
        for (std::size_t i = k; i < rows; ++i) s += a[i] * c[i];
        s *= beta[k];
        for (std::size_t i = k; i < rows; ++i) c[i] -= s * a[i];
      }
      r(k, k) = alpha;
      for (std::size_t j = k + 1; j < cols; ++j) r(k, j) = work.col(j)[k];
    }
  }

  // Returns Q[:, :cols] * y for y (cols x n).
  Matrix apply_q(const Matrix& y) const {
    ColumnSet out(rows, y.cols());
    for (std::size_t j = 0; j < y.cols(); ++j)
      for (std::size_t i = 0; i < cols; ++i) out.col(j)[i] = y(i, j);
    for (std::size_t kk = cols; kk-- > 0;) {
      if (beta[kk] == 0.0) continue;
      const double* a = work.col(kk);
      for (std::size_t j = 0; j < y.cols(); ++j) {
        double* c = out.col(j);
        double s = 0.0;
        for (std::size_t i = kk; i < rows; ++i) s += a[i] * c[i];
        s *= beta[kk];
        for (std::size_t i = kk; i < rows; ++i) c[i] -= s * a[i];
      }
    }
    Matrix q(rows, y.cols());
    for (std::size_t j = 0; j < y.cols(); ++j)
      for (std::size_t i = 0; i < rows; ++i) q(i, j) = out.col(j)[i];
    return q;
  }
};

// Orthonormalizes `candidate` against the first `count` columns of `basis` (two passes).
// Returns the residual norm before normalization.
inline double orthogonalize_into(ColumnSet& basis, std::size_t count, double* candidate) {
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t j = 0; j < count; ++j) {
      const double* q = basis.col(j);
      const double s = col_dot(q, candidate, basis.length);
      for (std::size_t i = 0; i < basis.length; ++i) candidate[i] -= s * q[i];
    }
  }
  const double n = std::sqrt(col_dot(candidate, candidate, basis.length));
  if (n > 0) {
    for (std::size_t i = 0; i < basis.length; ++i) candidate[i] /= n;
  }
  return n;
}

// One-sided Jacobi on m x n (m >= n). Returns (u, sigma, v) unsorted.
inline SvdResult jacobi_svd_tall(const Matrix& x, const SvdOptions& opt) {
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  const bool use_qr = m > 2 * n;
  std::optional<HouseholderQr> qr;
  const Matrix* work_src = &x;
  if (use_qr) {
    qr.emplace(x);
    work_src = &qr->r;
  }
  const std::size_t p = work_src->rows();
  ColumnSet a(p, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < p; ++i) a.col(j)[i] = (*work_src)(i, j);
  ColumnSet v(n, n);
  for (std::size_t j = 0; j < n; ++j) v.col(j)[j] = 1.0;

  std::size_t sweep = 0;
  bool rotated = true;
  while (rotated) {
    if (sweep == opt.max_sweeps) throw DecompositionError("svd_thin: Jacobi sweeps did not converge", sweep);
    rotated = false;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double* ai = a.col(i);
        double* aj = a.col(j);
        const double alpha = col_dot(ai, ai, p);
        const double beta = col_dot(aj, aj, p);
        const double gamma = col_dot(ai, aj, p);
        if (gamma == 0.0 || std::abs(gamma) <= opt.tolerance * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < p; ++k) {
          const double x1 = ai[k];
          const double x2 = aj[k];
          ai[k] = c * x1 - s * x2;
          aj[k] = s * x1 + c * x2;
        }
        double* vi = v.col(i);
        double* vj = v.col(j);
        for (std::size_t k = 0; k < n; ++k) {
          const double x1 = vi[k];
          const double x2 = vj[k];
          vi[k] = c * x1 - s * x2;
          vj[k] = s * x1 + c * x2;
        }
      }
    }
    ++sweep;
  }

  SvdResult out;
  out.sigma.resize(n);
  double smax = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out.sigma[j] = std::sqrt(col_dot(a.col(j), a.col(j), p));
    smax = std::max(smax, out.sigma[j]);
  }
  // Left vectors: normalize the rotated columns; rank-deficient columns are completed.
  const double zero_tol = smax * 1e-13;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return out.sigma[l] > out.sigma[r]; });
  ColumnSet u(p, n);
  std::vector<bool> filled(n, false);
  std::size_t count = 0;
  for (std::size_t rank = 0; rank < n; ++rank) {
    const std::size_t j = order[rank];
    if (out.sigma[j] > zero_tol && out.sigma[j] > 0.0) {
      double* dst = u.col(rank);
      for (std::size_t k = 0; k < p; ++k) dst[k] = a.col(j)[k] / out.sigma[j];
      filled[rank] = true;
    }
  }
  // Zero columns trail the sorted order, so completion only sees genuine directions before it.
  for (std::size_t rank = 0; rank < n; ++rank) {
    if (filled[rank]) {
      ++count;
      continue;
    }
    std::vector<double> cand(p);
    for (std::size_t e = 0; e < p; ++e) {
      std::fill(cand.begin(), cand.end(), 0.0);
      cand[e] = 1.0;
      if (orthogonalize_into(u, count, cand.data()) > 0.5) break;
    }
    std::copy(cand.begin(), cand.end(), u.col(rank));
    ++count;
  }

  Matrix u_small(p, n);
  for (std::size_t rank = 0; rank < n; ++rank)
    for (std::size_t k = 0; k < p; ++k) u_small(k, rank) = u.col(rank)[k];
  out.u = use_qr ? qr->apply_q(u_small) : std::move(u_small);

  Vector sorted_sigma(n);
  out.v = Matrix(n, n);
  for (std::size_t rank = 0; rank < n; ++rank) {
    const std::size_t j = order[rank];
    sorted_sigma[rank] = out.sigma[j];
    for (std::size_t k = 0; k < n; ++k) out.v(k, rank) = v.col(j)[k];
  }
  out.sigma = std::move(sorted_sigma);
  return out;
}

}  // namespace detail

/// Thin SVD x = u·diag(sigma)·vᵀ with k = min(rows, cols).
///
/// Columns are sorted by descending singular value. Each column of v has its
/// largest-magnitude entry (first one on ties) made positive; u follows.
/// Left vectors belonging to zero singular values are completed to an
/// orthonormal set so u and v are always orthonormal.
inline SvdResult svd_thin(const Matrix& x, const SvdOptions& opt = {}) {
  if (x.rows() == 0 || x.cols() == 0) throw PreconditionError("svd_thin: empty matrix");
  if (!x.all_finite()) throw PreconditionError("svd_thin: non-finite entries");
  SvdResult r;
  if (x.rows() >= x.cols()) {
    r = detail::jacobi_svd_tall(x, opt);
  } else {
    SvdResult t = detail::jacobi_svd_tall(transpose(x), opt);
    r.u = std::move(t.v);
    r.v = std::move(t.u);
    r.sigma = std::move(t.sigma);
  }
  for (std::size_t j = 0; j < r.v.cols(); ++j) {
    std::size_t best = 0;
    double best_abs = -1.0;
    for (std::size_t i = 0; i < r.v.rows(); ++i) {
      if (std::abs(r.v(i, j)) > best_abs) {
        best_abs = std::abs(r.v(i, j));
        best = i;
      }
    }
    if (r.v(best, j) < 0) {
      for (std::size_t i = 0; i < r.v.rows(); ++i) r.v(i, j) = -r.v(i, j);
      for (std::size_t i = 0; i < r.u.rows(); ++i) r.u(i, j) = -r.u(i, j);
    }
  }
  return r;
}

/// Extends the orthonormal columns of `basis` (d x k) to a full d x d orthonormal
/// matrix using Gram-Schmidt against seeded Gaussian vectors.
inline Matrix complete_orthonormal_basis(const Matrix& basis, std::uint64_t seed) {
  const std::size_t d = basis.rows();
  const std::size_t k = basis.cols();
  if (k > d) throw ShapeError("complete_orthonormal_basis: more columns than rows");
  detail::ColumnSet cols(d, d);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < d; ++i) cols.col(j)[i] = basis(i, j);
  Rng rng(seed);
  for (std::size_t j = k; j < d; ++j) {
    double* c = cols.col(j);
    double residual = 0.0;
    while (residual < 1e-6) {
      for (std::size_t i = 0; i < d; ++i) c[i] = rng.normal();
      const double before = std::sqrt(detail::col_dot(c, c, d));
      residual = detail::orthogonalize_into(cols, j, c) / before;
    }
  }
  Matrix out(d, d);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = 0; i < d; ++i) out(i, j) = cols.col(j)[i];
  return out;
}

/// Seeded Haar-like random orthonormal matrix (QR of a Gaussian matrix).
inline Matrix random_orthonormal(std::size_t n, std::uint64_t seed) { return complete_orthonormal_basis(Matrix(n, 0), seed); }

/// Solves a·x = b for symmetric positive-definite a with a diagonally pivoted Cholesky.
///
/// Throws SingularMatrixError when a pivot falls to or below 1e-12 of the largest diagonal.
inline Matrix solve_spd(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ShapeError("solve_spd: matrix not square");
  if (b.rows() != n) throw ShapeError("solve_spd: right-hand side row count mismatch");
  const double scale = std::max(1.0, max_abs(a));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-10 * scale) throw PreconditionError("solve_spd: matrix not symmetric");

  Matrix l = a;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, a(i, i));
  const double threshold = 1e-12 * max_diag;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (l(i, i) > l(piv, piv)) piv = i;
    if (!(l(piv, piv) > threshold) || l(piv, piv) <= 0.0) {
      throw SingularMatrixError("solve_spd: pivot " + std::to_string(l(piv, piv)) + " at step " + std::to_string(k) +
                                " is not positive enough; matrix is numerically singular");
    }
    if (piv != k) {
      std::swap(perm[k], perm[piv]);
      for (std::size_t j = 0; j < n; ++j) std::swap(l(k, j), l(piv, j));
      for (std::size_t i = 0; i < n; ++i) std::swap(l(i, k), l(i, piv));
    }
    const double d = std::sqrt(l(k, k));
    l(k, k) = d;
    for (std::size_t i = k + 1; i < n; ++i) l(i, k) /= d;
    // Full trailing update keeps the block symmetric for later pivot swaps.
    for (std::size_t j = k + 1; j < n; ++j) {
      const double ljk = l(j, k);
      for (std::size_t i = k + 1; i < n; ++i) l(i, j) -= l(i, k) * ljk;
    }
    for (std::size_t j = k + 1; j < n; ++j) l(k, j) = 0.0;
  }
  // P a Pᵀ = L Lᵀ  =>  x = Pᵀ L⁻ᵀ L⁻¹ P b
  Matrix y(n, b.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < b.cols(); ++c) y(i, c) = b(perm[i], c);
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = y(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y(k, c);
      y(i, c) = s / l(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = y(i, c);
      for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * y(k, c);
      y(i, c) = s / l(i, i);
    }
  }
  Matrix x(n, b.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < b.cols(); ++c) x(perm[i], c) = y(i, c);
  return x;
}

/// argmin_W ‖aW − b‖² + ridge·‖W‖² through the normal equations.
inline Matrix least_squares(const Matrix& a, const Matrix& b, double ridge = 0.0) {
  if (a.rows() == 0) throw PreconditionError("least_squares: no rows");
  if (a.rows() != b.rows()) throw ShapeError("least_squares: row counts differ");
  if (ridge < 0.0) throw PreconditionError("least_squares: ridge must be non-negative");
  Matrix gram = matmul_tn(a, a);
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += ridge;
  const Matrix rhs = matmul_tn(a, b);
  try {
    return solve_spd(gram, rhs);
  } catch (const SingularMatrixError& e) {
    throw SingularMatrixError(std::string("least_squares: normal equations singular with ridge ") +
                              std::to_string(ridge) + "; raise the ridge (e.g. 1e-6). " + e.what());
  }
}

}  // namespace tcs
