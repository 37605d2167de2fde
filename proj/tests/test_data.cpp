#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"

#include "cmkm/data.hpp"
#include "cmkm/tensor_io.hpp"
#include "test_util.hpp"

using namespace cmkm;
using namespace cmkm::data;
namespace fs = std::filesystem;

namespace {

MultimodalSample sample_with(int subject, std::optional<std::string> scene = std::nullopt) {
  MultimodalSample s;
  s.inertial.values = Tensor<float>({4, 6}, 1.0f);
  s.skeleton.values = Tensor<float>({4, 3, 3}, 1.0f);
  s.label = 0;
  s.subject_id = subject;
  s.scene_id = std::move(scene);
  return s;
}

// One archive holding both modalities; the manifest points both paths at it.
void write_sample(const fs::path& path, Index channels) {
  io::Archive a;
  Rng rng(5);
  a.emplace("inertial", cmkm::testing::randn<float>({10, channels}, rng));
  a.emplace("skeleton", cmkm::testing::randn<float>({10, 4, 3}, rng));
  io::write_archive(path, a);
}

void write_manifest(const fs::path& path, Index declared_channels, const std::vector<std::string>& files) {
  nlohmann::json m{{"name", "t"},           {"num_classes", 2}, {"sensor_channels", declared_channels},
                   {"num_joints", 4},       {"coord_channels", 3}, {"samples", nlohmann::json::array()}};
  for (const auto& f : files)
    m["samples"].push_back({{"inertial_path", f}, {"skeleton_path", f}, {"label", 1}, {"subject_id", 3}, {"scene_id", nullptr}});
  std::ofstream(path) << m.dump(2);
}

double mean_distance(const std::vector<MultimodalSample>& s, Index a0, Index a1, Index b0, Index b1) {
  double total = 0;
  long count = 0;
  for (Index a = a0; a < a1; ++a)
    for (Index b = b0; b < b1; ++b) {
      if (a == b) continue;
      const auto& x = s[static_cast<std::size_t>(a)].inertial.values;
      const auto& y = s[static_cast<std::size_t>(b)].inertial.values;
      double d = 0;
      for (Index i = 0; i < x.size(); ++i) d += (x[i] - y[i]) * (x[i] - y[i]);
      total += std::sqrt(d);
      ++count;
    }
  return total / static_cast<double>(count);
}

}  // namespace

TEST(Resample, SameLengthIsBitwiseIdentity) {
  Rng rng(1);
  InertialSequence s{cmkm::testing::randn<float>({50, 6}, rng)};
  EXPECT_EQ(resample_sequence(s, 50).values, s.values);
}

TEST(Resample, ConstantStaysConstant) {
  SkeletonSequence s{Tensor<float>({7, 3, 2}, 2.5f)};
  for (Index target : {1, 3, 7, 50}) {
    auto out = resample_sequence(s, target);
    EXPECT_EQ(out.values.shape(), (Shape{target, 3, 2}));
    for (float v : out.values.values()) EXPECT_FLOAT_EQ(v, 2.5f);
  }
}

TEST(Resample, HandComputedInterpolation) {
  InertialSequence s{Tensor<float>({3, 1}, std::vector<float>{0, 1, 2})};
  auto out = resample_sequence(s, 5);
  const std::vector<float> expected{0, 0.5, 1, 1.5, 2};
  for (Index i = 0; i < 5; ++i) EXPECT_FLOAT_EQ(out.values[i], expected[static_cast<std::size_t>(i)]);
}

TEST(Resample, RejectsEmptyTarget) {
  InertialSequence s{Tensor<float>({3, 1})};
  EXPECT_THROW(resample_sequence(s, 0), std::invalid_argument);
}

TEST(NormalizeSkeleton, CenteredInputIsUnchanged) {
  SkeletonSequence s{Tensor<float>({2, 2, 2}, std::vector<float>{-1, 0, 1, 0, 3, 4, 5, 6})};
  auto out = normalize_skeleton(s);
  for (Index i = 0; i < 8; ++i) EXPECT_NEAR(out.values[i], s.values[i], 1e-6);
}

TEST(NormalizeSkeleton, HandExample) {
  // Frame 0 joints (0,0) and (2,2): centroid (1,1).
  SkeletonSequence s{Tensor<float>({2, 2, 2}, std::vector<float>{0, 0, 2, 2, 5, 7, -1, 3})};
  auto out = normalize_skeleton(s);
  const std::vector<float> expected{-1, -1, 1, 1, 4, 6, -2, 2};
  for (Index i = 0; i < 8; ++i) EXPECT_NEAR(out.values[i], expected[static_cast<std::size_t>(i)], 1e-6);
}

TEST(NormalizeSkeleton, TranslationInvariantAndZeroCentroid) {
  Rng rng(2);
  SkeletonSequence s{cmkm::testing::randn<float>({5, 4, 3}, rng)};
  SkeletonSequence moved = s;
  const float v[3] = {3.0f, -2.0f, 0.5f};
  for (Index f = 0; f < 5; ++f)
    for (Index j = 0; j < 4; ++j)
      for (Index c = 0; c < 3; ++c) moved.values(f, j, c) += v[c];
  auto a = normalize_skeleton(s), b = normalize_skeleton(moved);
  for (Index i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-5);
  for (Index c = 0; c < 3; ++c) {
    double sum = 0;
    for (Index j = 0; j < 4; ++j) sum += a.values(0, j, c);
    EXPECT_NEAR(sum / 4, 0.0, 1e-6);
  }
}

TEST(Split, UtdOddTrainEvenTest) {
  std::vector<MultimodalSample> s;
  for (int subject = 1; subject <= 10; ++subject) s.push_back(sample_with(subject));
  auto split = make_split(s, {});
  ASSERT_EQ(split.train.size(), 5u);
  ASSERT_EQ(split.test.size(), 5u);
  for (const auto& x : split.train) EXPECT_EQ(x.subject_id % 2, 1);
  for (const auto& x : split.test) EXPECT_EQ(x.subject_id % 2, 0);
}

TEST(Split, SingleSubjectLeavesEmptySide) {
  std::vector<MultimodalSample> s(4, sample_with(3));
  EXPECT_THROW(make_split(s, {}), ValidationError);
}

TEST(Split, MmactProtocols) {
  std::vector<MultimodalSample> s;
  for (int subject = 1; subject <= 20; ++subject)
    s.push_back(sample_with(subject, subject % 4 == 0 ? "occlusion" : "free"));
  auto by_subject = make_split(s, {Protocol::mmact_cross_subject, {}, {}});
  EXPECT_EQ(by_subject.train.size(), 16u);
  EXPECT_EQ(by_subject.test.size(), 4u);
  auto by_scene = make_split(s, {Protocol::mmact_cross_scene, {}, {}});
  EXPECT_EQ(by_scene.train.size() + by_scene.test.size(), s.size());
  for (const auto& x : by_scene.test) EXPECT_EQ(x.scene_id, "occlusion");
  for (const auto& x : by_scene.train) EXPECT_NE(x.scene_id, "occlusion");
}

TEST(Split, CustomRequiresEveryoneAssigned) {
  std::vector<MultimodalSample> s{sample_with(1), sample_with(2), sample_with(3)};
  auto ok = make_split(s, {Protocol::custom, {1, 3}, {2}});
  EXPECT_EQ(ok.train.size(), 2u);
  EXPECT_THROW(make_split(s, {Protocol::custom, {1}, {2}}), ValidationError);
}

TEST(Subsample, SizesAndErrors) {
  EXPECT_EQ(subsample_indices(431, 0.01, 7).size(), 4u);
  EXPECT_EQ(subsample_indices(100, 0.5, 7).size(), 50u);
  EXPECT_EQ(subsample_indices(30, 0.01, 7).size(), 1u);
  EXPECT_THROW(subsample_indices(10, 0.0, 7), std::invalid_argument);
  EXPECT_THROW(subsample_indices(10, 1.5, 7), std::invalid_argument);
}

TEST(Subsample, FullFractionAndDeterminism) {
  std::vector<MultimodalSample> s;
  for (int i = 0; i < 100; ++i) s.push_back(sample_with(i % 10 + 1));
  EXPECT_EQ(subsample_labels(s, 1.0, 3).size(), 100u);
  EXPECT_EQ(subsample_indices(100, 0.5, 11), subsample_indices(100, 0.5, 11));
  EXPECT_NE(subsample_indices(100, 0.5, 11), subsample_indices(100, 0.5, 12));
}

TEST(Manifest, RoundTripThroughLoader) {
  cmkm::testing::TempDir dir("manifest");
  write_sample(dir.path() / "a.cmkt", 6);
  write_manifest(dir.path() / "m.json", 6, {"a.cmkt"});
  auto ds = load_dataset(dir.path() / "m.json");
  ASSERT_EQ(ds.samples.size(), 1u);
  EXPECT_EQ(ds.samples[0].inertial.values.shape(), (Shape{10, 6}));
  EXPECT_EQ(ds.samples[0].label, 1);
  EXPECT_EQ(ds.samples[0].subject_id, 3);
}

TEST(Manifest, EmptyIsRejected) {
  cmkm::testing::TempDir dir("manifest_empty");
  write_manifest(dir.path() / "m.json", 6, {});
  EXPECT_THROW(load_dataset(dir.path() / "m.json"), ValidationError);
}

TEST(Manifest, ChannelMismatchIsRejected) {
  cmkm::testing::TempDir dir("manifest_mismatch");
  write_sample(dir.path() / "a.cmkt", 5);
  write_manifest(dir.path() / "m.json", 6, {"a.cmkt"});
  EXPECT_THROW(load_dataset(dir.path() / "m.json"), ValidationError);
}

TEST(Manifest, MissingFileIsNamed) {
  cmkm::testing::TempDir dir("manifest_missing");
  write_manifest(dir.path() / "m.json", 6, {"gone.cmkt"});
  try {
    load_dataset(dir.path() / "m.json");
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("gone.cmkt"), std::string::npos);
  }
}

TEST(Synthetic, CountsAndBalance) {
  auto ds = generate_synthetic({});
  ASSERT_EQ(ds.samples.size(), 240u);
  std::vector<int> count(6, 0);
  for (const auto& s : ds.samples) ++count[static_cast<std::size_t>(*s.label)];
  for (int c : count) EXPECT_EQ(c, 40);
  EXPECT_EQ(ds.samples[0].skeleton.values.shape(), (Shape{50, 8, 3}));
}

TEST(Synthetic, SameSeedIsBitIdentical) {
  SyntheticSpec spec;
  spec.per_class = 3;
  spec.seed = 9;
  auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].inertial.values, b.samples[i].inertial.values);
    EXPECT_EQ(a.samples[i].skeleton.values, b.samples[i].skeleton.values);
  }
}

TEST(Synthetic, NoiselessSameClassDiffersOnlyByPhase) {
  // Class 0 runs exactly one cycle over the window, so projecting a channel onto
  // sin/cos of the base angle recovers its amplitude and phase exactly.
  SyntheticSpec spec;
  spec.noise = 0;
  spec.per_class = 2;
  auto ds = generate_synthetic(spec);
  const auto& x = ds.samples[0].inertial.values;
  const auto& y = ds.samples[1].inertial.values;
  const Index t = x.dim(0);
  auto polar = [&](const Tensor<float>& v, Index ch) {
    double a = 0, b = 0;
    for (Index f = 0; f < t; ++f) {
      const double base = 2 * std::numbers::pi * static_cast<double>(f) / static_cast<double>(t);
      a += v(f, ch) * std::sin(base);
      b += v(f, ch) * std::cos(base);
    }
    return std::pair{std::hypot(a, b) * 2 / static_cast<double>(t), std::atan2(b, a)};
  };
  auto wrap = [](double d) { return std::remainder(d, 2 * std::numbers::pi); };
  double shift0 = 0;
  for (Index ch = 0; ch < x.dim(1); ++ch) {
    auto [ax, px] = polar(x, ch);
    auto [ay, py] = polar(y, ch);
    EXPECT_NEAR(ax, ay, 1e-5);
    if (ch == 0) shift0 = wrap(py - px);
    EXPECT_NEAR(wrap(py - px - shift0), 0.0, 1e-4);
  }
}

TEST(Synthetic, ClassesAreSeparatedOnAverage) {
  auto ds = generate_synthetic({});
  const double intra = (mean_distance(ds.samples, 0, 40, 0, 40) + mean_distance(ds.samples, 40, 80, 40, 80)) / 2;
  const double inter = mean_distance(ds.samples, 0, 40, 40, 80);
  EXPECT_GT(inter / intra, 1.0);
}

TEST(Synthetic, RejectsBadArguments) {
  SyntheticSpec spec;
  spec.coords = 4;
  EXPECT_THROW(generate_synthetic(spec), std::invalid_argument);
  spec = {};
  spec.noise = -1;
  EXPECT_THROW(generate_synthetic(spec), std::invalid_argument);
}
