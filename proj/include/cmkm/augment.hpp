#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "cmkm/random.hpp"
#include "cmkm/tensor.hpp"

// Modality-specific augmentations. Every op takes a time-major tensor
// (inertial T x S, skeleton T x J x C) and returns a tensor of the same shape.
// The last axis is the "channel" axis: sensor channels for inertial data,
// coordinate axes for skeletons.
namespace cmkm::augment {

enum class Modality { inertial, skeleton };

Modality parse_modality(const std::string& name);
std::string to_string(Modality m);

/// Row-major dim x dim matrix acting on consecutive groups of `dim` values
/// along the last axis (dim is 2 or 3).
struct PointTransform {
  int dim = 3;
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static PointTransform identity(int dim);
  double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * dim + c)]; }
  double determinant() const;
};

Tensor<float> apply_transform(const Tensor<float>& x, const PointTransform& t);

Tensor<float> jitter(const Tensor<float>& x, double sigma, Rng& rng);
/// Noise std per channel is `strength` times that channel's std over the sequence.
Tensor<float> jitter_relative(const Tensor<float>& x, double strength, Rng& rng);

/// One Normal(1, sigma) factor per channel.
Tensor<float> scale(const Tensor<float>& x, double sigma, Rng& rng);

/// Haar-uniform rotation for dim 3, uniform angle for dim 2.
PointTransform random_rotation(int dim, Rng& rng);
PointTransform planar_rotation(double angle);
/// Inertial: one rotation applied to every 3-channel group (S % 3 == 0).
/// Skeleton: one rotation applied to every joint.
Tensor<float> rotate(const Tensor<float>& x, Modality modality, Rng& rng);

Tensor<float> permute(const Tensor<float>& x, Index num_segments, Rng& rng);
/// Segment k of the output is input segment order[k]; segment s covers rows
/// [floor(s*T/n), floor((s+1)*T/n)).
Tensor<float> permute_segments(const Tensor<float>& x, const std::vector<Index>& order);

Tensor<float> channel_shuffle(const Tensor<float>& x, Rng& rng);
/// Output column c is input column perm[c].
Tensor<float> shuffle_columns(const Tensor<float>& x, const std::vector<Index>& perm);

Tensor<float> random_resized_crop(const Tensor<float>& x, double min_fraction, Rng& rng);
/// Rows [begin, begin + length) resampled back to T frames.
Tensor<float> crop_and_resize(const Tensor<float>& x, Index begin, Index length);

/// Identity plus Normal(0, sigma) off-diagonal entries.
PointTransform random_shear(int dim, double sigma, Rng& rng);
Tensor<float> shear(const Tensor<float>& x, double sigma, Rng& rng);

struct Strengths {
  double jitter = 0.05;             // relative to per-channel std
  double scale = 0.1;
  double crop_min_fraction = 0.5;
  double shear = 0.1;
  Index permute_segments = 4;
};

struct AugmentationPipeline {
  Modality modality = Modality::inertial;
  std::vector<std::string> ops;
  double apply_prob = 0.75;
  std::set<std::string> always_apply;
  std::uint64_t rng_seed = 0;
  Strengths strengths;

  /// Throws ConfigError for unknown or modality-foreign op names.
  void validate() const;
  Tensor<float> apply(const Tensor<float>& x, std::uint64_t seed) const;
  Tensor<float> apply(const Tensor<float>& x) const { return apply(x, rng_seed); }
};

const std::vector<std::string>& registered_ops(Modality m);

/// {jitter, scale, rotate} for inertial; {jitter, random_resized_crop, scale,
/// rotate, shear} with jitter always applied for skeletons.
AugmentationPipeline default_pipeline(Modality m);

}  // namespace cmkm::augment
