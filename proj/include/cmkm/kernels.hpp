#pragma once

#include "cmkm/parallel.hpp"
#include "cmkm/tensor.hpp"

namespace cmkm::kernels {

enum class Trans { no, yes };

/// Row-major C (m x n) = op(A) * op(B), or C += op(A) * op(B) when `accumulate`.
/// op(A) is m x k, op(B) is k x n; A and B are stored densely in their own
/// (untransposed) shape.
template <typename Real>
void matmul(const Real* a, Trans ta, const Real* b, Trans tb, Real* c, Index m, Index k, Index n,
            bool accumulate = false);

/// Same contract as `matmul` with the rows of C split into fixed blocks that
/// are distributed over threads. Block boundaries do not depend on the thread
/// count, so the result does not either.
template <typename Real>
void matmul_blocked(Exec exec, const Real* a, Trans ta, const Real* b, Trans tb, Real* c, Index m,
                    Index k, Index n, bool accumulate = false);

/// Geometry of a stride-1 2-D convolution with symmetric zero padding.
struct ConvGeometry {
  Index channels = 0;
  Index height = 0;
  Index width = 0;
  Index kernel_h = 1;
  Index kernel_w = 1;
  Index pad_h = 0;
  Index pad_w = 0;

  Index out_height() const { return height + 2 * pad_h - kernel_h + 1; }
  Index out_width() const { return width + 2 * pad_w - kernel_w + 1; }
  Index col_rows() const { return channels * kernel_h * kernel_w; }
  Index col_cols() const { return out_height() * out_width(); }
};

/// Unfolds one C x H x W image into a (C*kh*kw) x (Ho*Wo) column matrix.
template <typename Real>
void im2col(const Real* image, const ConvGeometry& g, Real* col);

/// Adjoint of `im2col`: scatters-adds columns back into the image buffer.
template <typename Real>
void col2im_add(const Real* col, const ConvGeometry& g, Real* image);

/// Euclidean norms of the rows of an n x d matrix.
template <typename Real>
void row_norms(Exec exec, const Real* x, Index n, Index d, Real* norms);

/// Rows scaled to unit norm; all-zero rows stay zero.
template <typename Real>
Tensor<Real> normalize_rows(Exec exec, const Tensor<Real>& x);

/// Backpropagates through `normalize_rows`: given x, its normalized rows u
/// and dL/du, returns dL/dx = (du - u (u . du)) / |x| (zero for zero rows).
template <typename Real>
Tensor<Real> normalize_rows_backward(Exec exec, const Tensor<Real>& x, const Tensor<Real>& u,
                                     const Tensor<Real>& grad_u);

}  // namespace cmkm::kernels
