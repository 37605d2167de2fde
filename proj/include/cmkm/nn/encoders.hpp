#pragma once

#include <string>
#include <vector>

#include "cmkm/nn/layers.hpp"

namespace cmkm::nn {

/// Convolutional front end + Transformer encoder for inertial windows.
struct InertialEncoderConfig {
  std::vector<Index> conv_channels{32, 64, 128};
  Index kernel_size = 5;
  Index attention_blocks = 2;
  Index attention_heads = 2;
  Index ff_dim = 128;  // width of the feed-forward sublayer in each block
  Index feature_dim = 128;

  void validate() const;
};

/// Two-stream (positions, motions) co-occurrence network for skeletons.
/// `point_channels` are the per-joint stages (first 1x1, then 3x1 temporal);
/// after them the joint axis becomes the channel axis, so the transpose
/// happens at stage index point_channels.size().
struct SkeletonEncoderConfig {
  std::vector<Index> point_channels{64, 32};
  std::vector<Index> cooccurrence_channels{32, 64};
  std::vector<Index> fused_channels{128, 256};
  Index feature_dim = 512;

  Index transpose_stage() const { return static_cast<Index>(point_channels.size()); }
  void validate() const;
};

struct ProjectionHeadConfig {
  Index input_dim = 128;
  Index hidden_dim = 128;
  Index output_dim = 128;

  void validate() const;
};

struct FusionHeadConfig {
  Index per_modality_out = 256;
  Index classes = 1;

  void validate() const;
};

template <typename Real>
class InertialEncoder {
 public:
  InertialEncoder() = default;
  InertialEncoder(const InertialEncoderConfig& config, Index sensor_channels, Rng& rng);

  /// N x T x S -> N x feature_dim
  Tensor<Real> forward(const Tensor<Real>& x);
  Tensor<Real> backward(const Tensor<Real>& grad_out);
  void collect(const std::string& prefix, StateList<Real>& out);
  void set_training(bool training);

  const InertialEncoderConfig& config() const { return config_; }
  Index sensor_channels() const { return sensor_channels_; }
  Index feature_dim() const { return config_.feature_dim; }

 private:
  struct ConvBlock {
    Conv2d<Real> conv;
    BatchNorm<Real> norm;
    ReLU<Real> act;
  };

  InertialEncoderConfig config_;
  Index sensor_channels_ = 0;
  std::vector<ConvBlock> convs_;
  std::vector<TransformerBlock<Real>> blocks_;
  TemporalMaxPool<Real> pool_;
  Shape input_shape_;
};

template <typename Real>
class SkeletonEncoder {
 public:
  SkeletonEncoder() = default;
  SkeletonEncoder(const SkeletonEncoderConfig& config, Index frames, Index joints, Index coords,
                  Rng& rng);

  /// N x T x J x C -> N x feature_dim
  Tensor<Real> forward(const Tensor<Real>& x);
  Tensor<Real> backward(const Tensor<Real>& grad_out);
  void collect(const std::string& prefix, StateList<Real>& out);
  void set_training(bool training);

  const SkeletonEncoderConfig& config() const { return config_; }
  Index frames() const { return frames_; }
  Index joints() const { return joints_; }
  Index coords() const { return coords_; }
  Index feature_dim() const { return config_.feature_dim; }

 private:
  struct Stage {
    Conv2d<Real> conv;
    bool relu = false, norm = false, pool = false;
    ReLU<Real> act;
    BatchNorm<Real> bn;
    MaxPool2x2<Real> pooling;

    Tensor<Real> forward(const Tensor<Real>& x);
    Tensor<Real> backward(const Tensor<Real>& g);
  };
  struct Stream {
    std::vector<Stage> point, cooccurrence;
  };

  Tensor<Real> stream_forward(Stream& s, const Tensor<Real>& x);
  Tensor<Real> stream_backward(Stream& s, const Tensor<Real>& g);

  SkeletonEncoderConfig config_;
  Index frames_ = 0, joints_ = 0, coords_ = 0;
  Stream position_, motion_;
  std::vector<Stage> fused_;
  Linear<Real> fc_;
  ReLU<Real> fc_act_;
  BatchNorm<Real> fc_norm_;
  Shape fused_shape_;
  Index stream_channels_ = 0;
};

/// Linear -> ReLU -> Linear; outputs are not normalized.
template <typename Real>
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(const ProjectionHeadConfig& config, Rng& rng);

  Tensor<Real> forward(const Tensor<Real>& x);
  Tensor<Real> backward(const Tensor<Real>& grad_out);
  void collect(const std::string& prefix, StateList<Real>& out);

  const ProjectionHeadConfig& config() const { return config_; }

 private:
  ProjectionHeadConfig config_;
  Linear<Real> hidden_, output_;
  ReLU<Real> act_;
};

/// Per-modality Linear -> BatchNorm -> ReLU to a shared width, concatenation,
/// then a linear classifier producing logits.
template <typename Real>
class FusionClassifier {
 public:
  FusionClassifier() = default;
  FusionClassifier(Index inertial_dim, Index skeleton_dim, const FusionHeadConfig& config, Rng& rng);

  Tensor<Real> forward(const Tensor<Real>& inertial, const Tensor<Real>& skeleton);
  /// Returns the gradients with respect to (inertial, skeleton) features.
  std::pair<Tensor<Real>, Tensor<Real>> backward(const Tensor<Real>& grad_logits);
  void collect(const std::string& prefix, StateList<Real>& out);
  void set_training(bool training);

  Index inertial_dim() const { return inertial_dim_; }
  Index skeleton_dim() const { return skeleton_dim_; }
  const FusionHeadConfig& config() const { return config_; }

 private:
  struct Branch {
    Linear<Real> fc;
    BatchNorm<Real> norm;
    ReLU<Real> act;
  };
  Index inertial_dim_ = 0, skeleton_dim_ = 0;
  FusionHeadConfig config_;
  Branch inertial_, skeleton_;
  Linear<Real> classifier_;
};

/// All parameter/buffer values of a model flattened in collection order;
/// used for "frozen" checks and parameter hashes.
template <typename Real>
std::vector<Real> snapshot(const StateList<Real>& state);

template <typename Real>
void zero_grad(const StateList<Real>& state);

}  // namespace cmkm::nn
