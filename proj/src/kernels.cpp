#include "cmkm/kernels.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstring>

namespace cmkm::kernels {

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using ConstMap = Eigen::Map<const RowMat<Real>>;
template <typename Real>
using MutMap = Eigen::Map<RowMat<Real>>;

constexpr Index kRowBlock = 32;

}  // namespace

template <typename Real>
void matmul(const Real* a, Trans ta, const Real* b, Trans tb, Real* c, Index m, Index k, Index n,
            bool accumulate) {
  if (m == 0 || n == 0) return;
  MutMap<Real> C(c, m, n);
  if (k == 0) {
    if (!accumulate) C.setZero();
    return;
  }
  // Stored shapes: A is (m x k) or (k x m); B is (k x n) or (n x k).
  const ConstMap<Real> A(a, ta == Trans::no ? m : k, ta == Trans::no ? k : m);
  const ConstMap<Real> B(b, tb == Trans::no ? k : n, tb == Trans::no ? n : k);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate)
      C.noalias() += lhs * rhs;
    else
      C.noalias() = lhs * rhs;
  };
  if (ta == Trans::no && tb == Trans::no) run(A, B);
  else if (ta == Trans::no) run(A, B.transpose());
  else if (tb == Trans::no) run(A.transpose(), B);
  else run(A.transpose(), B.transpose());
}

template <typename Real>
void matmul_blocked(Exec exec, const Real* a, Trans ta, const Real* b, Trans tb, Real* c, Index m,
                    Index k, Index n, bool accumulate) {
  const Index blocks = (m + kRowBlock - 1) / kRowBlock;
  parallel_for(exec, blocks, [&](Index blk) {
    const Index r0 = blk * kRowBlock;
    const Index rows = std::min(kRowBlock, m - r0);
    if (ta == Trans::no) {
      matmul(a + r0 * k, Trans::no, b, tb, c + r0 * n, rows, k, n, accumulate);
    } else {
      // Rows of op(A) are columns of the stored k x m matrix; copy the strip.
      std::vector<Real> strip(static_cast<std::size_t>(rows * k));
      for (Index kk = 0; kk < k; ++kk)
        for (Index r = 0; r < rows; ++r) strip[r * k + kk] = a[kk * m + r0 + r];
      matmul(strip.data(), Trans::no, b, tb, c + r0 * n, rows, k, n, accumulate);
    }
  });
}

template <typename Real>
void im2col(const Real* image, const ConvGeometry& g, Real* col) {
  const Index ho = g.out_height(), wo = g.out_width();
  for (Index ch = 0; ch < g.channels; ++ch) {
    const Real* plane = image + ch * g.height * g.width;
    for (Index ky = 0; ky < g.kernel_h; ++ky) {
      for (Index kx = 0; kx < g.kernel_w; ++kx) {
        Real* dst = col + ((ch * g.kernel_h + ky) * g.kernel_w + kx) * ho * wo;
        for (Index y = 0; y < ho; ++y) {
          const Index iy = y + ky - g.pad_h;
          Real* row = dst + y * wo;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(row, wo, Real(0));
            continue;
          }
          for (Index x = 0; x < wo; ++x) {
            const Index ix = x + kx - g.pad_w;
            row[x] = (ix < 0 || ix >= g.width) ? Real(0) : plane[iy * g.width + ix];
          }
        }
      }
    }
  }
}

template <typename Real>
void col2im_add(const Real* col, const ConvGeometry& g, Real* image) {
  const Index ho = g.out_height(), wo = g.out_width();
  for (Index ch = 0; ch < g.channels; ++ch) {
    Real* plane = image + ch * g.height * g.width;
    for (Index ky = 0; ky < g.kernel_h; ++ky) {
      for (Index kx = 0; kx < g.kernel_w; ++kx) {
        const Real* src = col + ((ch * g.kernel_h + ky) * g.kernel_w + kx) * ho * wo;
        for (Index y = 0; y < ho; ++y) {
          const Index iy = y + ky - g.pad_h;
          if (iy < 0 || iy >= g.height) continue;
          for (Index x = 0; x < wo; ++x) {
            const Index ix = x + kx - g.pad_w;
            if (ix >= 0 && ix < g.width) plane[iy * g.width + ix] += src[y * wo + x];
          }
        }
      }
    }
  }
}

template <typename Real>
void row_norms(Exec exec, const Real* x, Index n, Index d, Real* norms) {
  parallel_for(exec, n, [&](Index i) {
    Real acc = 0;
    for (Index j = 0; j < d; ++j) acc += x[i * d + j] * x[i * d + j];
    norms[i] = std::sqrt(acc);
  });
}

template <typename Real>
Tensor<Real> normalize_rows(Exec exec, const Tensor<Real>& x) {
  const Index n = x.dim(0), d = x.dim(1);
  Tensor<Real> u(x.shape());
  std::vector<Real> norms(static_cast<std::size_t>(n));
  row_norms(exec, x.data(), n, d, norms.data());
  parallel_for(exec, n, [&](Index i) {
    if (norms[i] == Real(0)) return;
    const Real inv = Real(1) / norms[i];
    for (Index j = 0; j < d; ++j) u[i * d + j] = x[i * d + j] * inv;
  });
  return u;
}

template <typename Real>
Tensor<Real> normalize_rows_backward(Exec exec, const Tensor<Real>& x, const Tensor<Real>& u,
                                     const Tensor<Real>& grad_u) {
  const Index n = x.dim(0), d = x.dim(1);
  Tensor<Real> gx(x.shape());
  std::vector<Real> norms(static_cast<std::size_t>(n));
  row_norms(exec, x.data(), n, d, norms.data());
  parallel_for(exec, n, [&](Index i) {
    if (norms[i] == Real(0)) return;
    Real dot = 0;
    for (Index j = 0; j < d; ++j) dot += u[i * d + j] * grad_u[i * d + j];
    const Real inv = Real(1) / norms[i];
    for (Index j = 0; j < d; ++j) gx[i * d + j] = (grad_u[i * d + j] - u[i * d + j] * dot) * inv;
  });
  return gx;
}

#define CMKM_INSTANTIATE(Real)                                                                  \
  template void matmul<Real>(const Real*, Trans, const Real*, Trans, Real*, Index, Index, Index, \
                             bool);                                                             \
  template void matmul_blocked<Real>(Exec, const Real*, Trans, const Real*, Trans, Real*, Index, \
                                     Index, Index, bool);                                       \
  template void im2col<Real>(const Real*, const ConvGeometry&, Real*);                          \
  template void col2im_add<Real>(const Real*, const ConvGeometry&, Real*);                      \
  template void row_norms<Real>(Exec, const Real*, Index, Index, Real*);                        \
  template Tensor<Real> normalize_rows<Real>(Exec, const Tensor<Real>&);                        \
  template Tensor<Real> normalize_rows_backward<Real>(Exec, const Tensor<Real>&,                \
                                                      const Tensor<Real>&, const Tensor<Real>&);

CMKM_INSTANTIATE(float)
CMKM_INSTANTIATE(double)

#undef CMKM_INSTANTIATE

}  // namespace cmkm::kernels
