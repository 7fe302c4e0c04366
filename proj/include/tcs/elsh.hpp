#pragma once

// eLSH feature mimicking: teacher hash codes computed once from induced teacher
// features, and a sigmoid/BCE loss pulling the student's induced features onto them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include "tcs/coordinate_system.hpp"
#include "tcs/errors.hpp"
#include "tcs/matrix.hpp"
#include "tcs/rng.hpp"
#include "tcs/tensor_io.hpp"
#include "tcs/training.hpp"

namespace tcs {

struct LshProjector {
  Matrix w;  // D x M, unit Gaussian
  Vector b;  // M, uniform in [-1, 1] (or zero)
  std::uint64_t seed = 0;

  std::size_t dim() const { return w.rows(); }
  std::size_t code_count() const { return w.cols(); }
};

inline LshProjector make_lsh_projector(std::size_t dim, std::size_t codes, std::uint64_t seed, bool zero_bias = false) {
  if (dim == 0 || codes == 0) throw PreconditionError("lsh projector: dimensions must be positive");
  Rng rng(seed);
  LshProjector p;
  p.seed = seed;
  p.w = rng.normal_matrix(dim, codes);
  p.b.assign(codes, 0.0);
  if (!zero_bias)
    for (double& v : p.b) v = rng.uniform(-1.0, 1.0);
  return p;
}

struct TeacherCodes {
  Matrix codes;  // N x M, entries in {0, 1}
  bool frozen = false;

  std::string bytes() const {
    const std::uint64_t dims[2] = {codes.rows(), codes.cols()};
    return encode_tensor(dims, codes.values(), Dtype::u8);
  }
  std::string digest() const { return checksum(bytes()); }
};

/// Projection logits z = F·w + b for already-induced rows.
inline Matrix lsh_logits(const Matrix& induced, const LshProjector& proj) {
  if (induced.cols() != proj.dim()) {
    throw ShapeError("lsh: features have " + std::to_string(induced.cols()) + " columns, projector expects " +
                     std::to_string(proj.dim()));
  }
  Matrix z = matmul(induced, proj.w);
  add_row_vector(z, proj.b);
  return z;
}

/// h = step(wᵀ((f − μ)V) + b) per row with step(0) = 1. Returned frozen.
inline TeacherCodes teacher_codes(const Matrix& teacher_features, const CoordinateSystem& cs, const LshProjector& proj) {
  if (cs.dim() != proj.dim()) throw ShapeError("teacher_codes: projector does not match coordinate system");
  const Matrix z = lsh_logits(induct_rows(teacher_features, cs), proj);
  TeacherCodes t{Matrix(z.rows(), z.cols()), true};
  for (std::size_t i = 0; i < z.size(); ++i) t.codes.values()[i] = z.values()[i] >= 0.0 ? 1.0 : 0.0;
  return t;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// −[h log p + (1−h) log(1−p)] for p = sigmoid(z), with p clamped to [1e-12, 1−1e-12].
/// Evaluated through softplus so large |z| does not lose precision in 1 − p.
inline double binary_cross_entropy_logit(double z, double h) {
  static const double cap = -std::log(1e-12);
  const auto softplus = [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); };
  return h * std::min(softplus(-z), cap) + (1.0 - h) * std::min(softplus(z), cap);
}

struct ElshValue {
  double loss = 0.0;
  Vector grad;  // wrt the induced student feature
};

/// Binary cross-entropy between sigmoid(wᵀf + b) and the teacher bits, averaged over M.
inline ElshValue elsh_loss(std::span<const double> induced, std::span<const double> codes, const LshProjector& proj) {
  if (induced.size() != proj.dim()) throw ShapeError("elsh_loss: feature dimension mismatch");
  if (codes.size() != proj.code_count()) throw ShapeError("elsh_loss: code count mismatch");
  const std::size_t m = proj.code_count();
  Vector z = proj.b;
  for (std::size_t i = 0; i < proj.dim(); ++i) {
    const double f = induced[i];
    if (f == 0.0) continue;
    const double* wr = proj.w.row(i).data();
    for (std::size_t j = 0; j < m; ++j) z[j] += f * wr[j];
  }
  ElshValue out{0.0, Vector(proj.dim(), 0.0)};
  Vector resid(m);
  for (std::size_t j = 0; j < m; ++j) {
    out.loss += binary_cross_entropy_logit(z[j], codes[j]);
    resid[j] = (sigmoid(z[j]) - codes[j]) / static_cast<double>(m);
  }
  out.loss /= static_cast<double>(m);
  for (std::size_t i = 0; i < proj.dim(); ++i) out.grad[i] = dot(proj.w.row(i), resid);
  return out;
}

/// Batch-mean eLSH loss; gradient rows are scaled by 1/n.
inline LossValue elsh_loss_rows(const Matrix& induced, const Matrix& codes, const LshProjector& proj) {
  if (induced.rows() != codes.rows()) throw ShapeError("elsh_loss: row count mismatch");
  const Matrix z = lsh_logits(induced, proj);
  const double n = static_cast<double>(induced.rows());
  const double m = static_cast<double>(proj.code_count());
  Matrix resid(z.rows(), z.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double h = codes.values()[i];
    loss += binary_cross_entropy_logit(z.values()[i], h);
    resid.values()[i] = (sigmoid(z.values()[i]) - h) / (m * n);
  }
  return {loss / (m * n), matmul_nt(resid, proj.w)};
}

struct LossWeights {
  double lambda = 1e-4;      // ℓ1 weight on the mask
  double elsh_weight = 1.0;  // 0 disables eLSH
};

struct CompositeLoss {
  double ce = 0.0;
  double l1 = 0.0;
  double elsh = 0.0;
  double total = 0.0;
  Matrix grad_logits;   // to the classifier
  Matrix grad_induced;  // extra gradient entering the induced features (eLSH)
  double grad_mask_l1 = 0.0;  // added to every mask coordinate
};

/// L = L_CE + λ‖m‖₁ + w·L_eLSH. There is no logit-KL term.
inline CompositeLoss combine_losses(LossValue ce, std::span<const double> mask, const LossValue* elsh,
                                    const LossWeights& w) {
  if (w.lambda < 0.0 || w.elsh_weight < 0.0) throw PreconditionError("combine_losses: weights must be non-negative");
  CompositeLoss out;
  out.ce = ce.loss;
  double l1 = 0.0;
  for (double v : mask) l1 += std::abs(v);
  out.l1 = w.lambda * l1;
  out.grad_mask_l1 = w.lambda;
  out.grad_logits = std::move(ce.grad);
  if (elsh && w.elsh_weight > 0.0) {
    out.elsh = w.elsh_weight * elsh->loss;
    out.grad_induced = elsh->grad * w.elsh_weight;
  }
  out.total = out.ce + out.l1 + out.elsh;
  return out;
}

}  // namespace tcs
