#include "cmkm/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cmkm/kernels.hpp"

namespace cmkm::nn {

using kernels::matmul;
using kernels::matmul_blocked;
using kernels::Trans;

namespace {

template <typename Real>
Tensor<Real> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<Real> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(uniform(rng, -bound, bound));
  return t;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

// ---------------------------------------------------------------- Linear

template <typename Real>
Linear<Real>::Linear(Index in_features, Index out_features, Rng& rng)
    : in_(in_features), out_(out_features) {
  require(in_ > 0 && out_ > 0, "Linear: dimensions must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  weight_ = uniform_tensor<Real>({out_, in_}, bound, rng);
  bias_ = uniform_tensor<Real>({out_}, bound, rng);
  grad_weight_ = Tensor<Real>({out_, in_});
  grad_bias_ = Tensor<Real>({out_});
}

template <typename Real>
Tensor<Real> Linear<Real>::forward(const Tensor<Real>& x) {
  require(x.rank() >= 1 && x.shape().back() == in_,
          "Linear: expected trailing dimension " + std::to_string(in_) + ", got " +
              shape_str(x.shape()));
  input_ = x;
  const Index rows = x.size() / in_;
  Shape out_shape = x.shape();
  out_shape.back() = out_;
  Tensor<Real> y(out_shape);
  const Exec exec = default_exec();
  matmul_blocked(exec, x.data(), Trans::no, weight_.data(), Trans::yes, y.data(), rows, in_, out_);
  parallel_for(exec, rows, [&](Index r) {
    Real* row = y.data() + r * out_;
    for (Index o = 0; o < out_; ++o) row[o] += bias_[o];
  });
  return y;
}

template <typename Real>
Tensor<Real> Linear<Real>::backward(const Tensor<Real>& grad_out) {
  const Index rows = input_.size() / in_;
  require(grad_out.size() == rows * out_, "Linear::backward: gradient shape mismatch");
  const Exec exec = default_exec();
  Tensor<Real> dx(input_.shape());
  matmul_blocked(exec, grad_out.data(), Trans::no, weight_.data(), Trans::no, dx.data(), rows, out_,
                 in_);
  matmul_blocked(exec, grad_out.data(), Trans::yes, input_.data(), Trans::no, grad_weight_.data(),
                 out_, rows, in_, true);
  parallel_for(exec, out_, [&](Index o) {
    Real acc = 0;
    for (Index r = 0; r < rows; ++r) acc += grad_out[r * out_ + o];
    grad_bias_[o] += acc;
  });
  return dx;
}

template <typename Real>
void Linear<Real>::collect(const std::string& prefix, StateList<Real>& out) {
  out.push_back({prefix + ".weight", &weight_, &grad_weight_});
  out.push_back({prefix + ".bias", &bias_, &grad_bias_});
}

// ---------------------------------------------------------------- Conv2d

template <typename Real>
Conv2d<Real>::Conv2d(Index in_channels, Index out_channels, Index kernel_h, Index kernel_w, Rng& rng)
    : cin_(in_channels), cout_(out_channels), kh_(kernel_h), kw_(kernel_w) {
  require(cin_ > 0 && cout_ > 0, "Conv2d: channel counts must be positive");
  require(kh_ > 0 && kw_ > 0 && kh_ % 2 == 1 && kw_ % 2 == 1,
          "Conv2d: kernel sizes must be odd and positive for same padding");
  const Index fan_in = cin_ * kh_ * kw_;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  weight_ = uniform_tensor<Real>({cout_, fan_in}, bound, rng);
  bias_ = uniform_tensor<Real>({cout_}, bound, rng);
  grad_weight_ = Tensor<Real>({cout_, fan_in});
  grad_bias_ = Tensor<Real>({cout_});
}

template <typename Real>
Tensor<Real> Conv2d<Real>::forward(const Tensor<Real>& x) {
  require(x.rank() == 4 && x.dim(1) == cin_,
          "Conv2d: expected N x " + std::to_string(cin_) + " x H x W, got " + shape_str(x.shape()));
  input_shape_ = x.shape();
  const Index n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const kernels::ConvGeometry g{cin_, h, w, kh_, kw_, kh_ / 2, kw_ / 2};
  const Index k = g.col_rows(), hw = h * w;
  cols_.assign(static_cast<std::size_t>(n * k * hw), Real(0));
  Tensor<Real> y({n, cout_, h, w});
  parallel_for(default_exec(), n, [&](Index s) {
    Real* col = cols_.data() + s * k * hw;
    kernels::im2col(x.data() + s * cin_ * hw, g, col);
    Real* out = y.data() + s * cout_ * hw;
    matmul(weight_.data(), Trans::no, col, Trans::no, out, cout_, k, hw);
    for (Index c = 0; c < cout_; ++c)
      for (Index p = 0; p < hw; ++p) out[c * hw + p] += bias_[c];
  });
  return y;
}

template <typename Real>
Tensor<Real> Conv2d<Real>::backward(const Tensor<Real>& grad_out) {
  const Index n = input_shape_[0], h = input_shape_[2], w = input_shape_[3];
  require(grad_out.size() == n * cout_ * h * w, "Conv2d::backward: gradient shape mismatch");
  const kernels::ConvGeometry g{cin_, h, w, kh_, kw_, kh_ / 2, kw_ / 2};
  const Index k = g.col_rows(), hw = h * w;
  const Exec exec = default_exec();

  constexpr Index kBlock = 16;
  const Index blocks = (cout_ + kBlock - 1) / kBlock;
  parallel_for(exec, blocks, [&](Index b) {
    const Index r0 = b * kBlock, rows = std::min(kBlock, cout_ - r0);
    for (Index s = 0; s < n; ++s)
      matmul(grad_out.data() + s * cout_ * hw + r0 * hw, Trans::no, cols_.data() + s * k * hw,
             Trans::yes, grad_weight_.data() + r0 * k, rows, hw, k, true);
  });
  parallel_for(exec, cout_, [&](Index c) {
    Real acc = 0;
    for (Index s = 0; s < n; ++s)
      for (Index p = 0; p < hw; ++p) acc += grad_out[(s * cout_ + c) * hw + p];
    grad_bias_[c] += acc;
  });

  Tensor<Real> dx(input_shape_);
  parallel_for(exec, n, [&](Index s) {
    std::vector<Real> col(static_cast<std::size_t>(k * hw));
    matmul(weight_.data(), Trans::yes, grad_out.data() + s * cout_ * hw, Trans::no, col.data(), k,
           cout_, hw);
    kernels::col2im_add(col.data(), g, dx.data() + s * cin_ * hw);
  });
  return dx;
}

template <typename Real>
void Conv2d<Real>::collect(const std::string& prefix, StateList<Real>& out) {
  out.push_back({prefix + ".weight", &weight_, &grad_weight_});
  out.push_back({prefix + ".bias", &bias_, &grad_bias_});
}

// ---------------------------------------------------------------- BatchNorm

template <typename Real>
BatchNorm<Real>::BatchNorm(Index channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  require(channels_ > 0, "BatchNorm: channel count must be positive");
  gamma_ = Tensor<Real>({channels_}, Real(1));
  beta_ = Tensor<Real>({channels_});
  grad_gamma_ = Tensor<Real>({channels_});
  grad_beta_ = Tensor<Real>({channels_});
  running_mean_ = Tensor<Real>({channels_});
  running_var_ = Tensor<Real>({channels_}, Real(1));
}

template <typename Real>
Tensor<Real> BatchNorm<Real>::forward(const Tensor<Real>& x) {
  require(x.rank() >= 2 && x.dim(1) == channels_,
          "BatchNorm: expected N x " + std::to_string(channels_) + " x ..., got " +
              shape_str(x.shape()));
  const Index n = x.dim(0);
  const Index inner = n == 0 ? 0 : x.size() / (n * channels_);
  const Index count = n * inner;
  xhat_ = Tensor<Real>(x.shape());
  inv_std_.assign(static_cast<std::size_t>(channels_), Real(0));
  Tensor<Real> y(x.shape());
  if (count == 0) return y;
  parallel_for(default_exec(), channels_, [&](Index c) {
    Real mean, var;
    if (training_) {
      Real acc = 0;
      for (Index s = 0; s < n; ++s)
        for (Index p = 0; p < inner; ++p) acc += x[(s * channels_ + c) * inner + p];
      mean = acc / static_cast<Real>(count);
      Real sq = 0;
      for (Index s = 0; s < n; ++s)
        for (Index p = 0; p < inner; ++p) {
          const Real d = x[(s * channels_ + c) * inner + p] - mean;
          sq += d * d;
        }
      var = sq / static_cast<Real>(count);
      const Real unbiased = count > 1 ? sq / static_cast<Real>(count - 1) : var;
      const Real m = static_cast<Real>(momentum_);
      running_mean_[c] = (Real(1) - m) * running_mean_[c] + m * mean;
      running_var_[c] = (Real(1) - m) * running_var_[c] + m * unbiased;
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const Real inv = Real(1) / std::sqrt(var + static_cast<Real>(eps_));
    inv_std_[c] = inv;
    for (Index s = 0; s < n; ++s)
      for (Index p = 0; p < inner; ++p) {
        const Index i = (s * channels_ + c) * inner + p;
        xhat_[i] = (x[i] - mean) * inv;
        y[i] = gamma_[c] * xhat_[i] + beta_[c];
      }
  });
  return y;
}

template <typename Real>
Tensor<Real> BatchNorm<Real>::backward(const Tensor<Real>& grad_out) {
  require(grad_out.shape() == xhat_.shape(), "BatchNorm::backward: gradient shape mismatch");
  const Index n = xhat_.dim(0);
  const Index inner = n == 0 ? 0 : xhat_.size() / (n * channels_);
  const Index count = n * inner;
  Tensor<Real> dx(xhat_.shape());
  if (count == 0) return dx;
  parallel_for(default_exec(), channels_, [&](Index c) {
    Real sum_dy = 0, sum_dy_xhat = 0;
    for (Index s = 0; s < n; ++s)
      for (Index p = 0; p < inner; ++p) {
        const Index i = (s * channels_ + c) * inner + p;
        sum_dy += grad_out[i];
        sum_dy_xhat += grad_out[i] * xhat_[i];
      }
    grad_gamma_[c] += sum_dy_xhat;
    grad_beta_[c] += sum_dy;
    const Real scale = gamma_[c] * inv_std_[c];
    if (training_) {
      const Real m = static_cast<Real>(count);
      for (Index s = 0; s < n; ++s)
        for (Index p = 0; p < inner; ++p) {
          const Index i = (s * channels_ + c) * inner + p;
          dx[i] = scale * (grad_out[i] - sum_dy / m - xhat_[i] * sum_dy_xhat / m);
        }
    } else {
      for (Index s = 0; s < n; ++s)
        for (Index p = 0; p < inner; ++p) {
          const Index i = (s * channels_ + c) * inner + p;
          dx[i] = scale * grad_out[i];
        }
    }
  });
  return dx;
}

template <typename Real>
void BatchNorm<Real>::collect(const std::string& prefix, StateList<Real>& out) {
  out.push_back({prefix + ".gamma", &gamma_, &grad_gamma_});
  out.push_back({prefix + ".beta", &beta_, &grad_beta_});
  out.push_back({prefix + ".running_mean", &running_mean_, nullptr});
  out.push_back({prefix + ".running_var", &running_var_, nullptr});
}

// ---------------------------------------------------------------- LayerNorm

template <typename Real>
LayerNorm<Real>::LayerNorm(Index features, double eps) : features_(features), eps_(eps) {
  require(features_ > 0, "LayerNorm: feature count must be positive");
  gamma_ = Tensor<Real>({features_}, Real(1));
  beta_ = Tensor<Real>({features_});
  grad_gamma_ = Tensor<Real>({features_});
  grad_beta_ = Tensor<Real>({features_});
}

template <typename Real>
Tensor<Real> LayerNorm<Real>::forward(const Tensor<Real>& x) {
  require(x.rank() >= 1 && x.shape().back() == features_, "LayerNorm: trailing dimension mismatch");
  const Index rows = x.size() / features_, d = features_;
  xhat_ = Tensor<Real>(x.shape());
  inv_std_.assign(static_cast<std::size_t>(rows), Real(0));
  Tensor<Real> y(x.shape());
  parallel_for(default_exec(), rows, [&](Index r) {
    const Real* in = x.data() + r * d;
    Real mean = 0;
    for (Index j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<Real>(d);
    Real var = 0;
    for (Index j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<Real>(d);
    const Real inv = Real(1) / std::sqrt(var + static_cast<Real>(eps_));
    inv_std_[r] = inv;
    for (Index j = 0; j < d; ++j) {
      xhat_[r * d + j] = (in[j] - mean) * inv;
      y[r * d + j] = gamma_[j] * xhat_[r * d + j] + beta_[j];
    }
  });
  return y;
}

template <typename Real>
Tensor<Real> LayerNorm<Real>::backward(const Tensor<Real>& grad_out) {
  require(grad_out.shape() == xhat_.shape(), "LayerNorm::backward: gradient shape mismatch");
  const Index rows = xhat_.size() / features_, d = features_;
  const Exec exec = default_exec();
  Tensor<Real> dx(xhat_.shape());
  parallel_for(exec, rows, [&](Index r) {
    Real sum = 0, sum_xhat = 0;
    for (Index j = 0; j < d; ++j) {
      const Real g = grad_out[r * d + j] * gamma_[j];
      sum += g;
      sum_xhat += g * xhat_[r * d + j];
    }
    const Real md = static_cast<Real>(d);
    for (Index j = 0; j < d; ++j) {
      const Real g = grad_out[r * d + j] * gamma_[j];
      dx[r * d + j] = inv_std_[r] * (g - sum / md - xhat_[r * d + j] * sum_xhat / md);
    }
  });
  parallel_for(exec, d, [&](Index j) {
    Real gg = 0, gb = 0;
    for (Index r = 0; r < rows; ++r) {
      gg += grad_out[r * d + j] * xhat_[r * d + j];
      gb += grad_out[r * d + j];
    }
    grad_gamma_[j] += gg;
    grad_beta_[j] += gb;
  });
  return dx;
}

template <typename Real>
void LayerNorm<Real>::collect(const std::string& prefix, StateList<Real>& out) {
  out.push_back({prefix + ".gamma", &gamma_, &grad_gamma_});
  out.push_back({prefix + ".beta", &beta_, &grad_beta_});
}

// ---------------------------------------------------------------- ReLU

template <typename Real>
Tensor<Real> ReLU<Real>::forward(const Tensor<Real>& x) {
  Tensor<Real> y(x.shape());
  mask_.assign(static_cast<std::size_t>(x.size()), 0);
  for (Index i = 0; i < x.size(); ++i) {
    if (x[i] > Real(0)) {
      y[i] = x[i];
      mask_[static_cast<std::size_t>(i)] = 1;
    }
  }
  return y;
}

template <typename Real>
Tensor<Real> ReLU<Real>::backward(const Tensor<Real>& grad_out) {
  require(static_cast<std::size_t>(grad_out.size()) == mask_.size(),
          "ReLU::backward: gradient shape mismatch");
  Tensor<Real> dx(grad_out.shape());
  for (Index i = 0; i < dx.size(); ++i)
    if (mask_[static_cast<std::size_t>(i)]) dx[i] = grad_out[i];
  return dx;
}

// ---------------------------------------------------------------- pooling

template <typename Real>
Tensor<Real> MaxPool2x2<Real>::forward(const Tensor<Real>& x) {
  require(x.rank() == 4, "MaxPool2x2: expected a rank-4 tensor");
  input_shape_ = x.shape();
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index ho = (h + 1) / 2, wo = (w + 1) / 2;
  Tensor<Real> y({x.dim(0), x.dim(1), ho, wo});
  argmax_.assign(static_cast<std::size_t>(y.size()), 0);
  parallel_for(default_exec(), planes, [&](Index p) {
    const Real* in = x.data() + p * h * w;
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox) {
        Index best = (2 * oy) * w + 2 * ox;
        for (Index dy = 0; dy < 2; ++dy)
          for (Index dx = 0; dx < 2; ++dx) {
            const Index iy = 2 * oy + dy, ix = 2 * ox + dx;
            if (iy < h && ix < w && in[iy * w + ix] > in[best]) best = iy * w + ix;
          }
        const Index o = (p * ho + oy) * wo + ox;
        y[o] = in[best];
        argmax_[static_cast<std::size_t>(o)] = p * h * w + best;
      }
  });
  return y;
}

template <typename Real>
Tensor<Real> MaxPool2x2<Real>::backward(const Tensor<Real>& grad_out) {
  require(static_cast<std::size_t>(grad_out.size()) == argmax_.size(),
          "MaxPool2x2::backward: gradient shape mismatch");
  Tensor<Real> dx(input_shape_);
  // Windows do not overlap, so every input receives from at most one output.
  for (Index o = 0; o < grad_out.size(); ++o) dx[argmax_[static_cast<std::size_t>(o)]] += grad_out[o];
  return dx;
}

template <typename Real>
Tensor<Real> TemporalMaxPool<Real>::forward(const Tensor<Real>& x) {
  require(x.rank() == 3 && x.dim(1) >= 1, "TemporalMaxPool: expected N x T x D with T >= 1");
  input_shape_ = x.shape();
  const Index n = x.dim(0), t = x.dim(1), d = x.dim(2);
  Tensor<Real> y({n, d});
  argmax_.assign(static_cast<std::size_t>(n * d), 0);
  parallel_for(default_exec(), n, [&](Index s) {
    for (Index j = 0; j < d; ++j) {
      Index best = 0;
      for (Index k = 1; k < t; ++k)
        if (x[(s * t + k) * d + j] > x[(s * t + best) * d + j]) best = k;
      y[s * d + j] = x[(s * t + best) * d + j];
      argmax_[static_cast<std::size_t>(s * d + j)] = best;
    }
  });
  return y;
}

template <typename Real>
Tensor<Real> TemporalMaxPool<Real>::backward(const Tensor<Real>& grad_out) {
  const Index n = input_shape_[0], t = input_shape_[1], d = input_shape_[2];
  require(grad_out.size() == n * d, "TemporalMaxPool::backward: gradient shape mismatch");
  Tensor<Real> dx(input_shape_);
  for (Index s = 0; s < n; ++s)
    for (Index j = 0; j < d; ++j)
      dx[(s * t + argmax_[static_cast<std::size_t>(s * d + j)]) * d + j] = grad_out[s * d + j];
  return dx;
}

// ---------------------------------------------------------------- attention

template <typename Real>
MultiHeadSelfAttention<Real>::MultiHeadSelfAttention(Index model_dim, Index heads, Rng& rng)
    : dim_(model_dim), heads_(heads) {
  require(heads_ > 0 && dim_ % heads_ == 0, "MultiHeadSelfAttention: model_dim % heads != 0");
  query_ = Linear<Real>(dim_, dim_, rng);
  key_ = Linear<Real>(dim_, dim_, rng);
  value_ = Linear<Real>(dim_, dim_, rng);
  output_ = Linear<Real>(dim_, dim_, rng);
}

namespace {

// Copies head `h` (columns [h*dh, (h+1)*dh)) of a T x D slab into T x dh.
template <typename Real>
void extract_head(const Real* src, Index t, Index d, Index h, Index dh, Real* dst) {
  for (Index i = 0; i < t; ++i) std::copy_n(src + i * d + h * dh, dh, dst + i * dh);
}

template <typename Real>
void store_head(const Real* src, Index t, Index d, Index h, Index dh, Real* dst) {
  for (Index i = 0; i < t; ++i) std::copy_n(src + i * dh, dh, dst + i * d + h * dh);
}

}  // namespace

template <typename Real>
Tensor<Real> MultiHeadSelfAttention<Real>::forward(const Tensor<Real>& x) {
  require(x.rank() == 3 && x.dim(2) == dim_, "MultiHeadSelfAttention: expected N x T x D input");
  const Index n = x.dim(0), t = x.dim(1), dh = dim_ / heads_;
  q_ = query_.forward(x);
  k_ = key_.forward(x);
  v_ = value_.forward(x);
  attn_.assign(static_cast<std::size_t>(n * heads_ * t * t), Real(0));
  Tensor<Real> concat(x.shape());
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  parallel_for(default_exec(), n * heads_, [&](Index job) {
    const Index s = job / heads_, h = job % heads_;
    std::vector<Real> qh(t * dh), kh(t * dh), vh(t * dh), oh(t * dh);
    extract_head(q_.data() + s * t * dim_, t, dim_, h, dh, qh.data());
    extract_head(k_.data() + s * t * dim_, t, dim_, h, dh, kh.data());
    extract_head(v_.data() + s * t * dim_, t, dim_, h, dh, vh.data());
    Real* a = attn_.data() + job * t * t;
    matmul(qh.data(), Trans::no, kh.data(), Trans::yes, a, t, dh, t);
    for (Index i = 0; i < t; ++i) {
      Real* row = a + i * t;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (Index j = 0; j < t; ++j) mx = std::max(mx, row[j] * scale);
      Real sum = 0;
      for (Index j = 0; j < t; ++j) {
        row[j] = std::exp(row[j] * scale - mx);
        sum += row[j];
      }
      for (Index j = 0; j < t; ++j) row[j] /= sum;
    }
    matmul(a, Trans::no, vh.data(), Trans::no, oh.data(), t, t, dh);
    store_head(oh.data(), t, dim_, h, dh, concat.data() + s * t * dim_);
  });
  return output_.forward(concat);
}

template <typename Real>
Tensor<Real> MultiHeadSelfAttention<Real>::backward(const Tensor<Real>& grad_out) {
  const Index n = q_.dim(0), t = q_.dim(1), dh = dim_ / heads_;
  const Tensor<Real> d_concat = output_.backward(grad_out);
  Tensor<Real> dq(q_.shape()), dk(k_.shape()), dv(v_.shape());
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  parallel_for(default_exec(), n * heads_, [&](Index job) {
    const Index s = job / heads_, h = job % heads_;
    const Index off = s * t * dim_;
    std::vector<Real> qh(t * dh), kh(t * dh), vh(t * dh), doh(t * dh);
    std::vector<Real> da(t * t), dqh(t * dh), dkh(t * dh), dvh(t * dh);
    extract_head(q_.data() + off, t, dim_, h, dh, qh.data());
    extract_head(k_.data() + off, t, dim_, h, dh, kh.data());
    extract_head(v_.data() + off, t, dim_, h, dh, vh.data());
    extract_head(d_concat.data() + off, t, dim_, h, dh, doh.data());
    const Real* a = attn_.data() + job * t * t;
    matmul(doh.data(), Trans::no, vh.data(), Trans::yes, da.data(), t, dh, t);
    matmul(a, Trans::yes, doh.data(), Trans::no, dvh.data(), t, t, dh);
    for (Index i = 0; i < t; ++i) {
      Real dot = 0;
      for (Index j = 0; j < t; ++j) dot += da[i * t + j] * a[i * t + j];
      for (Index j = 0; j < t; ++j) da[i * t + j] = a[i * t + j] * (da[i * t + j] - dot) * scale;
    }
    matmul(da.data(), Trans::no, kh.data(), Trans::no, dqh.data(), t, t, dh);
    matmul(da.data(), Trans::yes, qh.data(), Trans::no, dkh.data(), t, t, dh);
    store_head(dqh.data(), t, dim_, h, dh, dq.data() + off);
    store_head(dkh.data(), t, dim_, h, dh, dk.data() + off);
    store_head(dvh.data(), t, dim_, h, dh, dv.data() + off);
  });
  Tensor<Real> dx = query_.backward(dq);
  add_inplace(dx, key_.backward(dk));
  add_inplace(dx, value_.backward(dv));
  return dx;
}

template <typename Real>
void MultiHeadSelfAttention<Real>::collect(const std::string& prefix, StateList<Real>& out) {
  query_.collect(prefix + ".query", out);
  key_.collect(prefix + ".key", out);
  value_.collect(prefix + ".value", out);
  output_.collect(prefix + ".output", out);
}

template <typename Real>
TransformerBlock<Real>::TransformerBlock(Index model_dim, Index heads, Index ff_dim, Rng& rng)
    : attention_(model_dim, heads, rng),
      norm1_(model_dim),
      norm2_(model_dim),
      ff1_(model_dim, ff_dim, rng),
      ff2_(ff_dim, model_dim, rng) {}

template <typename Real>
Tensor<Real> TransformerBlock<Real>::forward(const Tensor<Real>& x) {
  Tensor<Real> a = attention_.forward(x);
  add_inplace(a, x);
  Tensor<Real> h = norm1_.forward(a);
  Tensor<Real> f = ff2_.forward(ff_act_.forward(ff1_.forward(h)));
  add_inplace(f, h);
  return norm2_.forward(f);
}

template <typename Real>
Tensor<Real> TransformerBlock<Real>::backward(const Tensor<Real>& grad_out) {
  const Tensor<Real> g = norm2_.backward(grad_out);
  Tensor<Real> dh = ff1_.backward(ff_act_.backward(ff2_.backward(g)));
  add_inplace(dh, g);
  const Tensor<Real> g1 = norm1_.backward(dh);
  Tensor<Real> dx = attention_.backward(g1);
  add_inplace(dx, g1);
  return dx;
}

template <typename Real>
void TransformerBlock<Real>::collect(const std::string& prefix, StateList<Real>& out) {
  attention_.collect(prefix + ".attention", out);
  norm1_.collect(prefix + ".norm1", out);
  ff1_.collect(prefix + ".ff1", out);
  ff2_.collect(prefix + ".ff2", out);
  norm2_.collect(prefix + ".norm2", out);
}

// ---------------------------------------------------------------- tensor ops

template <typename Real>
void add_positional_encoding(Tensor<Real>& x) {
  require(x.rank() == 3, "add_positional_encoding: expected N x T x D");
  const Index n = x.dim(0), t = x.dim(1), d = x.dim(2);
  std::vector<Real> table(static_cast<std::size_t>(t * d));
  for (Index pos = 0; pos < t; ++pos)
    for (Index i = 0; i < d; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i - i % 2) /
                                   static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      table[pos * d + i] = static_cast<Real>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  for (Index s = 0; s < n; ++s)
    for (Index k = 0; k < t * d; ++k) x[s * t * d + k] += table[k];
}

std::array<int, 4> inverse_permutation(const std::array<int, 4>& perm) {
  std::array<int, 4> inv{};
  for (int i = 0; i < 4; ++i) inv[perm[i]] = i;
  return inv;
}

template <typename Real>
Tensor<Real> permute4(const Tensor<Real>& x, const std::array<int, 4>& perm) {
  require(x.rank() == 4, "permute4: expected a rank-4 tensor");
  Shape out_shape(4);
  for (int i = 0; i < 4; ++i) out_shape[i] = x.dim(perm[i]);
  std::array<Index, 4> in_stride{};
  in_stride[3] = 1;
  for (int i = 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * x.dim(i + 1);
  std::array<Index, 4> stride{};  // input stride of each output axis
  for (int i = 0; i < 4; ++i) stride[i] = in_stride[perm[i]];
  Tensor<Real> y(out_shape);
  const Index d1 = out_shape[1], d2 = out_shape[2], d3 = out_shape[3];
  parallel_for(default_exec(), out_shape[0], [&](Index a) {
    Real* out = y.data() + a * d1 * d2 * d3;
    for (Index b = 0; b < d1; ++b)
      for (Index c = 0; c < d2; ++c) {
        const Real* in = x.data() + a * stride[0] + b * stride[1] + c * stride[2];
        for (Index d = 0; d < d3; ++d) *out++ = in[d * stride[3]];
      }
  });
  return y;
}

template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a.rank() >= 2 && a.rank() == b.rank() && a.dim(0) == b.dim(0),
          "concat_channels: incompatible shapes");
  for (int i = 2; i < a.rank(); ++i) require(a.dim(i) == b.dim(i), "concat_channels: shape mismatch");
  const Index n = a.dim(0);
  const Index inner = n == 0 ? 0 : a.size() / (n * a.dim(1));
  const Index ca = a.dim(1) * inner, cb = b.dim(1) * inner;
  Shape s = a.shape();
  s[1] = a.dim(1) + b.dim(1);
  Tensor<Real> y(s);
  for (Index i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ca, ca, y.data() + i * (ca + cb));
    std::copy_n(b.data() + i * cb, cb, y.data() + i * (ca + cb) + ca);
  }
  return y;
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> split_channels(const Tensor<Real>& grad, Index channels_a) {
  const Index n = grad.dim(0);
  const Index inner = n == 0 ? 0 : grad.size() / (n * grad.dim(1));
  Shape sa = grad.shape(), sb = grad.shape();
  sa[1] = channels_a;
  sb[1] = grad.dim(1) - channels_a;
  Tensor<Real> ga(sa), gb(sb);
  const Index ca = channels_a * inner, cb = sb[1] * inner;
  for (Index i = 0; i < n; ++i) {
    std::copy_n(grad.data() + i * (ca + cb), ca, ga.data() + i * ca);
    std::copy_n(grad.data() + i * (ca + cb) + ca, cb, gb.data() + i * cb);
  }
  return {std::move(ga), std::move(gb)};
}

template <typename Real>
void add_inplace(Tensor<Real>& a, const Tensor<Real>& b) {
  require(a.size() == b.size(), "add_inplace: size mismatch");
  for (Index i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename Real>
Real cross_entropy(const Tensor<Real>& logits, const std::vector<int>& labels,
                   Tensor<Real>* grad_logits) {
  require(logits.rank() == 2 && logits.dim(0) == static_cast<Index>(labels.size()),
          "cross_entropy: logits/labels mismatch");
  const Index n = logits.dim(0), k = logits.dim(1);
  if (grad_logits) *grad_logits = Tensor<Real>(logits.shape());
  if (n == 0) return Real(0);
  Real total = 0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < k, "cross_entropy: label out of range");
    const Real* row = logits.data() + i * k;
    const Real mx = *std::max_element(row, row + k);
    Real sum = 0;
    for (Index j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    const Real log_z = mx + std::log(sum);
    total += log_z - row[y];
    if (grad_logits) {
      for (Index j = 0; j < k; ++j)
        (*grad_logits)[i * k + j] = std::exp(row[j] - log_z) / static_cast<Real>(n);
      (*grad_logits)[i * k + y] -= Real(1) / static_cast<Real>(n);
    }
  }
  return total / static_cast<Real>(n);
}

template <typename Real>
std::vector<int> argmax_rows(const Tensor<Real>& logits) {
  const Index n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Real* row = logits.data() + i * k;
    out[static_cast<std::size_t>(i)] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

#define CMKM_INSTANTIATE(Real)                                                                \
  template class Linear<Real>;                                                                \
  template class Conv2d<Real>;                                                                \
  template class BatchNorm<Real>;                                                             \
  template class LayerNorm<Real>;                                                             \
  template class ReLU<Real>;                                                                  \
  template class MaxPool2x2<Real>;                                                            \
  template class TemporalMaxPool<Real>;                                                       \
  template class MultiHeadSelfAttention<Real>;                                                \
  template class TransformerBlock<Real>;                                                      \
  template void add_positional_encoding<Real>(Tensor<Real>&);                                 \
  template Tensor<Real> permute4<Real>(const Tensor<Real>&, const std::array<int, 4>&);       \
  template Tensor<Real> concat_channels<Real>(const Tensor<Real>&, const Tensor<Real>&);      \
  template std::pair<Tensor<Real>, Tensor<Real>> split_channels<Real>(const Tensor<Real>&,    \
                                                                      Index);                 \
  template void add_inplace<Real>(Tensor<Real>&, const Tensor<Real>&);                        \
  template Real cross_entropy<Real>(const Tensor<Real>&, const std::vector<int>&, Tensor<Real>*); \
  template std::vector<int> argmax_rows<Real>(const Tensor<Real>&);

CMKM_INSTANTIATE(float)
CMKM_INSTANTIATE(double)

#undef CMKM_INSTANTIATE

}  // namespace cmkm::nn
