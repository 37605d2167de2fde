#pragma once

#include <array>
#include <string>
#include <vector>

#include "cmkm/parallel.hpp"
#include "cmkm/random.hpp"
#include "cmkm/tensor.hpp"

// Layers with explicit forward/backward passes. Each layer caches what its
// backward pass needs during `forward`; `backward` returns the gradient with
// respect to the layer input and accumulates parameter gradients (+=).
namespace cmkm::nn {

template <typename Real>
struct StateRef {
  std::string name;
  Tensor<Real>* value = nullptr;
  Tensor<Real>* grad = nullptr;  // null for non-trainable buffers
};

template <typename Real>
using StateList = std::vector<StateRef<Real>>;

template <typename Real>
class Linear {
 public:
  Linear() = default;
  Linear(Index in_features, Index out_features, Rng& rng);

  /// x: (..., in) -> (..., out)
  Tensor<Real> forward(const Tensor<Real>& x);
  Tensor<Real> backward(const Tensor<Real>& grad_out);
  void collect(const std::string& prefix, StateList<Real>& out);

  Index in_features() const { return in_; }
  Index out_features() const { return out_; }

 private:
  Index in_ = 0, out_ = 0;
  Tensor<Real> weight_, bias_, grad_weight_, grad_bias_;
  Tensor<Real> input_;
};

/// Stride-1 convolution with "same" zero padding on N x C x H x W input.
/// A 1-D temporal convolution is the H == 1, kernel 1 x k special case.
template <typename Real>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(Index in_channels, Index out_channels, Index kernel_h, Index kernel_w, Rng& rng);

  Tensor<Real> forward(const Tensor<Real>& x);
  Tensor<Real> backward(const Tensor<Real>& grad_out);
  void collect(const std::string& prefix, StateList<Real>& out);

 private:
  Index cin_ = 0, cout_ = 0, kh_ = 1, kw_ = 1;
  Tensor<Real> weight_, bias_, grad_weight_, grad_bias_;
  Shape input_shape_;
  std::vector<Real> cols_;  // N x (cin*kh*kw) x (H*W)
};

/// Batch normalization over axis 1 of an N x C x ... tensor.
template <typename Real>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(Index channels, double momentum = 0.1, double eps = 1e-5);

  Tensor<Real> forward(const Tensor<Real>& x);
  Tensor<Real> backward(const Tensor<Real>& grad_out);
  void collect(const std::string& prefix, StateList<Real>& out);
  void set_training(bool training) { training_ = training; }

 private:
  Index channels_ = 0;
  double momentum_ = 0.1, eps_ = 1e-5;
  bool training_ = true;
  Tensor<Real> gamma_, beta_, grad_gamma_, grad_beta_, running_mean_, running_var_;
  Tensor<Real> xhat_;
  std::vector<Real> inv_std_;
};

template <typename Real>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(Index features, double eps = 1e-5);

  /// Normalizes over the last axis.
  Tensor<Real> forward(const Tensor<Real>& x);
  Tensor<Real> backward(const Tensor<Real>& grad_out);
  void collect(const std::string& prefix, StateList<Real>& out);

 private:
  Index features_ = 0;
  double eps_ = 1e-5;
  Tensor<Real> gamma_, beta_, grad_gamma_, grad_beta_;
  Tensor<Real> xhat_;
  std::vector<Real> inv_std_;
};

template <typename Real>
class ReLU {
 public:
  Tensor<Real> forward(const Tensor<Real>& x);
  Tensor<Real> backward(const Tensor<Real>& grad_out);

 private:
  std::vector<unsigned char> mask_;
};

/// 2x2 max pooling with stride 2 on N x C x H x W; partial windows at the
/// border are kept (ceil mode) so short sequences never collapse to zero size.
template <typename Real>
class MaxPool2x2 {
 public:
  Tensor<Real> forward(const Tensor<Real>& x);
  Tensor<Real> backward(const Tensor<Real>& grad_out);

 private:
  Shape input_shape_;
  std::vector<Index> argmax_;
};

/// Max over axis 1 of an N x T x D tensor -> N x D.
template <typename Real>
class TemporalMaxPool {
 public:
  Tensor<Real> forward(const Tensor<Real>& x);
  Tensor<Real> backward(const Tensor<Real>& grad_out);

 private:
  Shape input_shape_;
  std::vector<Index> argmax_;
};

template <typename Real>
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(Index model_dim, Index heads, Rng& rng);

  /// x: N x T x D -> N x T x D
  Tensor<Real> forward(const Tensor<Real>& x);
  Tensor<Real> backward(const Tensor<Real>& grad_out);
  void collect(const std::string& prefix, StateList<Real>& out);

 private:
  Index dim_ = 0, heads_ = 1;
  Linear<Real> query_, key_, value_, output_;
  Tensor<Real> q_, k_, v_;
  std::vector<Real> attn_;  // N x H x T x T softmax weights
};

/// Post-norm Transformer encoder block: LN(x + MHSA(x)), then LN(h + FFN(h)).
template <typename Real>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(Index model_dim, Index heads, Index ff_dim, Rng& rng);

  Tensor<Real> forward(const Tensor<Real>& x);
  Tensor<Real> backward(const Tensor<Real>& grad_out);
  void collect(const std::string& prefix, StateList<Real>& out);

 private:
  MultiHeadSelfAttention<Real> attention_;
  LayerNorm<Real> norm1_, norm2_;
  Linear<Real> ff1_, ff2_;
  ReLU<Real> ff_act_;
};

/// Adds the fixed sinusoidal position table to an N x T x D tensor in place.
template <typename Real>
void add_positional_encoding(Tensor<Real>& x);

/// Reorders axes of a rank-4 tensor: out.dim(i) == in.dim(perm[i]).
template <typename Real>
Tensor<Real> permute4(const Tensor<Real>& x, const std::array<int, 4>& perm);

std::array<int, 4> inverse_permutation(const std::array<int, 4>& perm);

/// Concatenates two N x C_k x ... tensors along axis 1.
template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b);

/// Splits the gradient of `concat_channels` back into its two parts.
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> split_channels(const Tensor<Real>& grad, Index channels_a);

/// Adds b into a elementwise (shapes must match).
template <typename Real>
void add_inplace(Tensor<Real>& a, const Tensor<Real>& b);

/// Mean softmax cross-entropy of N x K logits; fills grad_logits with dL/dlogits.
template <typename Real>
Real cross_entropy(const Tensor<Real>& logits, const std::vector<int>& labels,
                   Tensor<Real>* grad_logits);

/// Row-wise argmax of N x K logits.
template <typename Real>
std::vector<int> argmax_rows(const Tensor<Real>& logits);

}  // namespace cmkm::nn
