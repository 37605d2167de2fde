#pragma once

#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cmkm/errors.hpp"
#include "cmkm/tensor.hpp"

namespace cmkm::data {

/// T x S multichannel inertial recording.
struct InertialSequence {
  Tensor<float> values;

  Index frames() const { return values.dim(0); }
  Index channels() const { return values.dim(1); }
  void validate() const;
};

/// T x J x C joint trajectories (C = 2 or 3).
struct SkeletonSequence {
  Tensor<float> values;

  Index frames() const { return values.dim(0); }
  Index joints() const { return values.dim(1); }
  Index coords() const { return values.dim(2); }
  void validate() const;
};

struct MultimodalSample {
  InertialSequence inertial;
  SkeletonSequence skeleton;
  std::optional<int> label;
  int subject_id = 0;
  std::optional<std::string> scene_id;
};

struct SampleRecord {
  std::string inertial_path;  // relative paths resolve against the manifest directory
  std::string skeleton_path;
  std::optional<int> label;
  int subject_id = 0;
  std::optional<std::string> scene_id;
};

/// Dataset manifest (JSON). Schema:
///   { "name": str, "num_classes": int, "sensor_channels": int,
///     "num_joints": int, "coord_channels": int,
///     "samples": [ { "inertial_path": str, "skeleton_path": str,
///                    "label": int|null, "subject_id": int,
///                    "scene_id": str|null }, ... ] }
/// Each path names a CMKT archive holding an "inertial" (T x S) or
/// "skeleton" (T x J x C) float32 tensor; both may live in the same file.
struct DatasetManifest {
  std::string name;
  int num_classes = 0;
  Index sensor_channels = 0;
  Index num_joints = 0;
  Index coord_channels = 0;
  std::vector<SampleRecord> samples;

  static DatasetManifest read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;
};

struct DatasetInfo {
  std::string name;
  int num_classes = 0;
  Index sensor_channels = 0;
  Index num_joints = 0;
  Index coord_channels = 0;
};

struct Dataset {
  DatasetInfo info;
  std::vector<MultimodalSample> samples;
};

/// Loads every sample in manifest order with raw shapes preserved.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes samples as one archive per sample plus a manifest next to them.
void save_dataset(const Dataset& dataset, const std::filesystem::path& manifest_path);

/// Linear interpolation onto `target_frames` points spread uniformly over
/// [0, T-1]; identical T returns the input unchanged.
InertialSequence resample_sequence(const InertialSequence& seq, Index target_frames);
SkeletonSequence resample_sequence(const SkeletonSequence& seq, Index target_frames);
Tensor<float> resample_time(const Tensor<float>& values, Index target_frames);

/// Subtracts the frame-0 joint centroid from every joint of every frame.
SkeletonSequence normalize_skeleton(const SkeletonSequence& seq);

/// Resamples both modalities to `target_frames` and normalizes skeletons.
void preprocess(Dataset& dataset, Index target_frames = 50, bool normalize = true);

enum class Protocol { utd_cross_subject, mmact_cross_subject, mmact_cross_scene, custom };

Protocol parse_protocol(const std::string& name);
std::string to_string(Protocol p);

struct SplitSpec {
  Protocol protocol = Protocol::utd_cross_subject;
  std::set<int> train_ids;  // subject ids, used by Protocol::custom
  std::set<int> test_ids;
};

struct Split {
  std::vector<MultimodalSample> train;
  std::vector<MultimodalSample> test;
};

Split make_split(const std::vector<MultimodalSample>& samples, const SplitSpec& spec);

/// Indices of a uniform random subset of size max(1, round(fraction * n)),
/// in ascending order; deterministic in `seed`.
std::vector<Index> subsample_indices(Index n, double fraction, std::uint64_t seed);

/// Uniform random subset of size max(1, round(fraction * |train|)),
/// deterministic in `seed`. With `stratified`, the rounding is per class.
std::vector<MultimodalSample> subsample_labels(const std::vector<MultimodalSample>& train,
                                               double fraction, std::uint64_t seed,
                                               bool stratified = false);

struct SyntheticSpec {
  int num_classes = 6;
  int per_class = 40;
  Index frames = 50;
  Index sensor_channels = 6;
  Index joints = 8;
  Index coords = 3;
  double noise = 0.1;
  std::uint64_t seed = 0;
  double phase_jitter = std::numbers::pi;  // max |per-sample, per-modality phase offset| (rad)
  int subjects = 10;                        // subject ids cycle 1..subjects within each class
  double amplitude = 0.12;                  // class-signal scale; comparable to `noise` on purpose
};

/// Class-conditional sinusoidal inertial channels and oscillating joint
/// layouts sharing one latent signature per class, plus Gaussian noise.
/// Each modality gets its own random phase offset, so the only information
/// the two views of a sample share is the class. The defaults keep the signal
/// near the noise level: a probe on random frozen encoders stays weak, while
/// cross-modal pre-training recovers the class.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Stacks samples into N x T x S / N x T x J x C model inputs.
template <typename Real>
Tensor<Real> stack_inertial(const std::vector<MultimodalSample>& samples,
                            const std::vector<Index>& rows);
template <typename Real>
Tensor<Real> stack_skeleton(const std::vector<MultimodalSample>& samples,
                            const std::vector<Index>& rows);

std::vector<int> labels_of(const std::vector<MultimodalSample>& samples);

}  // namespace cmkm::data
