#pragma once

// Student head: alignment (D_s -> D_t), induction into the teacher coordinate
// system, selection mask and classifier. After training it folds into a single
// D_s -> C affine map.

#include <cstdint>
#include <vector>

#include "tcs/coordinate_system.hpp"
#include "tcs/elsh.hpp"
#include "tcs/linalg.hpp"
#include "tcs/network.hpp"
#include "tcs/selection.hpp"

namespace tcs {

struct AlignmentLayer {
  Matrix w;  // D_s x D_t, no bias
};

/// Least-squares regression of teacher features from student features.
inline AlignmentLayer init_alignment(const Matrix& student_features, const Matrix& teacher_features, double ridge = 0.0) {
  if (student_features.rows() != teacher_features.rows()) throw ShapeError("init_alignment: row counts differ");
  return {least_squares(student_features, teacher_features, ridge)};
}

struct AlignmentFit {
  AlignmentLayer layer;
  double ridge = 0.0;
};

/// init_alignment with ridge 0, retried with `fallback_ridge` when the normal equations are singular.
inline AlignmentFit init_alignment_with_fallback(const Matrix& student_features, const Matrix& teacher_features,
                                                 double fallback_ridge = 1e-6) {
  try {
    return {init_alignment(student_features, teacher_features, 0.0), 0.0};
  } catch (const SingularMatrixError&) {
    return {init_alignment(student_features, teacher_features, fallback_ridge), fallback_ridge};
  }
}

/// Kaiming-uniform alignment for students trained from scratch.
inline AlignmentLayer random_alignment(std::size_t student_dim, std::size_t teacher_dim, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(student_dim));
  return {rng.uniform_matrix(student_dim, teacher_dim, -bound, bound)};
}

struct FoldedHead {
  Matrix weight;  // D_s x C
  Vector bias;    // C

  std::size_t parameter_count() const { return weight.size() + bias.size(); }

  Matrix logits(const Matrix& features) const {
    Matrix z = matmul(features, weight);
    add_row_vector(z, bias);
    return z;
  }
};

/// weight = W·V·diag(m)·W_cls, bias = b_cls − ((μV) ⊙ m)·W_cls, for the current mask.
inline FoldedHead compose_head(const AlignmentLayer& align, const CoordinateSystem& cs, const SelectionMask& mask,
                               const Affine& classifier) {
  const std::size_t dt = cs.dim();
  if (align.w.cols() != dt || mask.dim() != dt || classifier.in_dim() != dt) throw ShapeError("fold_head: dimension mismatch");
  Matrix masked_cls = classifier.weight;  // diag(m)·W_cls
  for (std::size_t i = 0; i < dt; ++i)
    for (std::size_t c = 0; c < masked_cls.cols(); ++c) masked_cls(i, c) *= mask.m[i];
  FoldedHead out;
  out.weight = matmul(align.w, matmul(cs.v, masked_cls));
  const Vector mu_v = cs.projected_mean();
  out.bias.assign(classifier.out_dim(), 0.0);
  for (std::size_t c = 0; c < classifier.out_dim(); ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < dt; ++i) s += mu_v[i] * masked_cls(i, c);
    out.bias[c] = classifier.bias(0, c) - s;
  }
  return out;
}

inline FoldedHead fold_head(const AlignmentLayer& align, const CoordinateSystem& cs, const SelectionMask& mask,
                            const Affine& classifier) {
  if (!mask.frozen()) throw StateError("fold_head: selection mask still has pending schedule events");
  return compose_head(align, cs, mask, classifier);
}

/// Replaces the network's classifier with the folded head; the shapes are unchanged.
inline void install_folded_head(Network& net, const FoldedHead& head) {
  Affine& cls = net.classifier();
  if (cls.weight.rows() != head.weight.rows() || cls.weight.cols() != head.weight.cols()) {
    throw ShapeError("install_folded_head: folded head does not match the network classifier");
  }
  cls.weight = head.weight;
  cls.bias = Matrix::row_vector(head.bias);
}

class TcsHead {
 public:
  struct Cache {
    Matrix features;  // f^s
    Matrix induced;   // f̃ = (f^s·W − μ)V
    Matrix masked;    // f̄ = f̃ ⊙ m
  };

  AlignmentLayer align;
  CoordinateSystem cs;
  SelectionMask mask;
  Affine classifier;
  Matrix grad_align;
  Vector grad_mask;  // batch-mean ∂L/∂m of the last backward

  TcsHead() = default;
  TcsHead(AlignmentLayer a, CoordinateSystem c, SelectionMask m, Affine cls)
      : align(std::move(a)), cs(std::move(c)), mask(std::move(m)), classifier(std::move(cls)) {
    if (align.w.cols() != cs.dim() || mask.dim() != cs.dim() || classifier.in_dim() != cs.dim()) {
      throw ShapeError("tcs head: component dimensions disagree");
    }
    grad_align = Matrix(align.w.rows(), align.w.cols());
    grad_mask.assign(cs.dim(), 0.0);
  }

  std::size_t student_dim() const { return align.w.rows(); }
  std::size_t teacher_dim() const { return cs.dim(); }

  Matrix induce(const Matrix& features) const { return induct_rows(matmul(features, align.w), cs); }

  Matrix forward(const Matrix& features, Cache* cache = nullptr) const {
    Matrix induced = induce(features);
    Matrix masked = induced;
    for (std::size_t r = 0; r < masked.rows(); ++r)
      for (std::size_t c = 0; c < masked.cols(); ++c) masked(r, c) *= mask.m[c];
    Matrix logits = classifier.forward(masked);
    if (cache) {
      cache->features = features;
      cache->induced = std::move(induced);
      cache->masked = std::move(masked);
    }
    return logits;
  }

  /// Backprop of composite-loss gradients; returns dL/df^s. Mask gradients are kept
  /// in grad_mask rather than applied.
  Matrix backward(const Cache& cache, const CompositeLoss& loss) {
    const Matrix grad_masked = classifier.backward(cache.masked, loss.grad_logits);
    Matrix grad_induced = grad_masked;
    std::fill(grad_mask.begin(), grad_mask.end(), loss.grad_mask_l1);
    for (std::size_t r = 0; r < grad_induced.rows(); ++r) {
      for (std::size_t c = 0; c < grad_induced.cols(); ++c) {
        grad_mask[c] += grad_masked(r, c) * cache.induced(r, c);
        grad_induced(r, c) *= mask.m[c];
      }
    }
    if (!loss.grad_induced.empty()) grad_induced += loss.grad_induced;
    const Matrix grad_aligned = matmul_nt(grad_induced, cs.v);  // · Vᵀ
    grad_align += matmul_tn(cache.features, grad_aligned);
    return matmul_nt(grad_aligned, align.w);
  }

  std::vector<ParamRef> parameters() {
    return {{"head.align", &align.w, &grad_align},
            {"head.classifier.weight", &classifier.weight, &classifier.grad_weight},
            {"head.classifier.bias", &classifier.bias, &classifier.grad_bias}};
  }

  void zero_grad() {
    for (auto& p : parameters()) p.grad->fill(0.0);
  }

  FoldedHead fold() const { return fold_head(align, cs, mask, classifier); }
  FoldedHead compose() const { return compose_head(align, cs, mask, classifier); }
};

}  // namespace tcs
