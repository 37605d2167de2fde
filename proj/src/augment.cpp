#include "cmkm/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "cmkm/data.hpp"
#include "cmkm/errors.hpp"

namespace cmkm::augment {

namespace {

Index channels_of(const Tensor<float>& x) {
  if (x.rank() < 2 || x.dim(0) < 1) throw std::invalid_argument("augment: expected a time-major tensor, got " + shape_str(x.shape()));
  return x.dim(x.rank() - 1);
}

void check_sigma(double sigma, const char* op) {
  if (!(sigma >= 0)) throw std::invalid_argument(std::string(op) + ": sigma must be >= 0");
}

}  // namespace

Modality parse_modality(const std::string& name) {
  if (name == "inertial") return Modality::inertial;
  if (name == "skeleton") return Modality::skeleton;
  throw std::invalid_argument("unknown modality: " + name);
}

std::string to_string(Modality m) { return m == Modality::inertial ? "inertial" : "skeleton"; }

PointTransform PointTransform::identity(int dim) {
  if (dim != 2 && dim != 3) throw std::invalid_argument("point transforms are 2-D or 3-D");
  PointTransform t;
  t.dim = dim;
  t.m.fill(0);
  for (int i = 0; i < dim; ++i) t.m[static_cast<std::size_t>(i * dim + i)] = 1;
  return t;
}

double PointTransform::determinant() const {
  const auto& a = *this;
  if (dim == 2) return a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
         a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
         a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

Tensor<float> apply_transform(const Tensor<float>& x, const PointTransform& t) {
  const Index c = channels_of(x);
  if (c % t.dim != 0)
    throw std::invalid_argument("transform of dim " + std::to_string(t.dim) + " does not divide " +
                                std::to_string(c) + " channels");
  Tensor<float> out(x.shape());
  const Index groups = x.size() / t.dim;
  double v[3];
  for (Index g = 0; g < groups; ++g) {
    const float* in = x.data() + g * t.dim;
    float* o = out.data() + g * t.dim;
    for (int r = 0; r < t.dim; ++r) {
      v[r] = 0;
      for (int k = 0; k < t.dim; ++k) v[r] += t(r, k) * in[k];
    }
    for (int r = 0; r < t.dim; ++r) o[r] = static_cast<float>(v[r]);
  }
  return out;
}

Tensor<float> jitter(const Tensor<float>& x, double sigma, Rng& rng) {
  check_sigma(sigma, "jitter");
  Tensor<float> out = x;
  if (sigma == 0) return out;
  std::normal_distribution<double> dist(0.0, sigma);
  for (float& v : out.values()) v = static_cast<float>(v + dist(rng));
  return out;
}

Tensor<float> jitter_relative(const Tensor<float>& x, double strength, Rng& rng) {
  check_sigma(strength, "jitter");
  const Index c = channels_of(x);
  const Index rows = x.size() / c;
  std::vector<double> mean(static_cast<std::size_t>(c), 0.0), sd(static_cast<std::size_t>(c), 0.0);
  for (Index r = 0; r < rows; ++r)
    for (Index k = 0; k < c; ++k) mean[k] += x[r * c + k];
  for (auto& m : mean) m /= static_cast<double>(rows);
  for (Index r = 0; r < rows; ++r)
    for (Index k = 0; k < c; ++k) sd[k] += (x[r * c + k] - mean[k]) * (x[r * c + k] - mean[k]);
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(rows)) * strength;
  Tensor<float> out = x;
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Index r = 0; r < rows; ++r)
    for (Index k = 0; k < c; ++k) out[r * c + k] = static_cast<float>(out[r * c + k] + sd[k] * dist(rng));
  return out;
}

Tensor<float> scale(const Tensor<float>& x, double sigma, Rng& rng) {
  check_sigma(sigma, "scale");
  const Index c = channels_of(x);
  std::vector<double> factor(static_cast<std::size_t>(c), 1.0);
  if (sigma > 0)
    for (auto& f : factor) f = normal(rng, 1.0, sigma);
  Tensor<float> out(x.shape());
  for (Index i = 0; i < x.size(); ++i) out[i] = static_cast<float>(x[i] * factor[i % c]);
  return out;
}

PointTransform planar_rotation(double angle) {
  PointTransform t = PointTransform::identity(2);
  const double c = std::cos(angle), s = std::sin(angle);
  t.m = {c, -s, s, c, 0, 0, 0, 0, 0};
  return t;
}

PointTransform random_rotation(int dim, Rng& rng) {
  if (dim == 2) return planar_rotation(uniform(rng, 0.0, 2.0 * std::numbers::pi));
  if (dim != 3) throw std::invalid_argument("rotation needs 2 or 3 coordinates");
  // Uniform unit quaternion (Shoemake's subgroup algorithm).
  const double u1 = uniform(rng, 0.0, 1.0), u2 = uniform(rng, 0.0, 2.0 * std::numbers::pi),
               u3 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double a = std::sqrt(1 - u1), b = std::sqrt(u1);
  const double w = a * std::sin(u2), x = a * std::cos(u2), y = b * std::sin(u3), z = b * std::cos(u3);
  PointTransform t;
  t.dim = 3;
  t.m = {1 - 2 * (y * y + z * z), 2 * (x * y - z * w),     2 * (x * z + y * w),
         2 * (x * y + z * w),     1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
         2 * (x * z - y * w),     2 * (y * z + x * w),     1 - 2 * (x * x + y * y)};
  return t;
}

Tensor<float> rotate(const Tensor<float>& x, Modality modality, Rng& rng) {
  const Index c = channels_of(x);
  if (modality == Modality::inertial) {
    if (c % 3 != 0)
      throw std::invalid_argument("rotate: inertial channel count " + std::to_string(c) +
                                  " is not a multiple of 3");
    return apply_transform(x, random_rotation(3, rng));
  }
  if (c != 2 && c != 3) throw std::invalid_argument("rotate: skeleton coordinates must be 2 or 3");
  return apply_transform(x, random_rotation(static_cast<int>(c), rng));
}

Tensor<float> permute_segments(const Tensor<float>& x, const std::vector<Index>& order) {
  const Index t = x.dim(0), n = static_cast<Index>(order.size());
  if (n < 1 || n > t) throw std::invalid_argument("permute: num_segments must lie in [1, T]");
  std::vector<Index> check = order;
  std::sort(check.begin(), check.end());
  for (Index i = 0; i < n; ++i)
    if (check[i] != i) throw std::invalid_argument("permute: order is not a permutation");
  const Index row = x.size() / t;
  auto bound = [&](Index s) { return s * t / n; };
  Tensor<float> out(x.shape());
  Index dst = 0;
  for (Index k = 0; k < n; ++k) {
    const Index s = order[k];
    const Index len = bound(s + 1) - bound(s);
    std::copy_n(x.data() + bound(s) * row, len * row, out.data() + dst * row);
    dst += len;
  }
  return out;
}

Tensor<float> permute(const Tensor<float>& x, Index num_segments, Rng& rng) {
  channels_of(x);
  if (num_segments < 1 || num_segments > x.dim(0))
    throw std::invalid_argument("permute: num_segments must lie in [1, T]");
  std::vector<Index> order(static_cast<std::size_t>(num_segments));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  return permute_segments(x, order);
}

Tensor<float> shuffle_columns(const Tensor<float>& x, const std::vector<Index>& perm) {
  const Index c = channels_of(x);
  if (static_cast<Index>(perm.size()) != c) throw std::invalid_argument("channel_shuffle: permutation size mismatch");
  Tensor<float> out(x.shape());
  for (Index i = 0; i < x.size(); i += c)
    for (Index k = 0; k < c; ++k) out[i + k] = x[i + perm[k]];
  return out;
}

Tensor<float> channel_shuffle(const Tensor<float>& x, Rng& rng) {
  std::vector<Index> perm(static_cast<std::size_t>(channels_of(x)));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  return shuffle_columns(x, perm);
}

Tensor<float> crop_and_resize(const Tensor<float>& x, Index begin, Index length) {
  const Index t = x.dim(0);
  if (length < 1 || begin < 0 || begin + length > t) throw std::invalid_argument("crop window out of range");
  return data::resample_time(x.slice_rows(begin, begin + length), t);
}

Tensor<float> random_resized_crop(const Tensor<float>& x, double min_fraction, Rng& rng) {
  if (!(min_fraction > 0 && min_fraction <= 1))
    throw std::invalid_argument("random_resized_crop: min_fraction must lie in (0, 1]");
  const Index t = x.dim(0);
  const Index shortest = std::clamp<Index>(static_cast<Index>(std::ceil(min_fraction * static_cast<double>(t))), 1, t);
  const Index length = std::uniform_int_distribution<Index>(shortest, t)(rng);
  const Index begin = std::uniform_int_distribution<Index>(0, t - length)(rng);
  return crop_and_resize(x, begin, length);
}

PointTransform random_shear(int dim, double sigma, Rng& rng) {
  check_sigma(sigma, "shear");
  PointTransform t = PointTransform::identity(dim);
  if (sigma == 0) return t;
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < dim; ++c)
      if (r != c) t.m[static_cast<std::size_t>(r * dim + c)] = normal(rng, 0.0, sigma);
  return t;
}

Tensor<float> shear(const Tensor<float>& x, double sigma, Rng& rng) {
  const Index c = channels_of(x);
  if (c != 2 && c != 3) throw std::invalid_argument("shear: skeleton coordinates must be 2 or 3");
  return apply_transform(x, random_shear(static_cast<int>(c), sigma, rng));
}

const std::vector<std::string>& registered_ops(Modality m) {
  static const std::vector<std::string> inertial = {"jitter", "scale", "rotate", "permute", "channel_shuffle"};
  static const std::vector<std::string> skeleton = {"jitter", "scale", "rotate", "random_resized_crop", "shear"};
  return m == Modality::inertial ? inertial : skeleton;
}

void AugmentationPipeline::validate() const {
  if (!(apply_prob >= 0 && apply_prob <= 1))
    throw ConfigError("augmentations.apply_prob must lie in [0, 1]");
  const auto& known = registered_ops(modality);
  auto check = [&](const std::string& op) {
    if (std::find(known.begin(), known.end(), op) == known.end())
      throw ConfigError("augmentations." + to_string(modality) + ": unknown op '" + op + "'");
  };
  for (const auto& op : ops) check(op);
  for (const auto& op : always_apply) check(op);
}

Tensor<float> AugmentationPipeline::apply(const Tensor<float>& x, std::uint64_t seed) const {
  validate();
  Rng rng(seed);
  Tensor<float> out = x;
  for (const auto& op : ops) {
    // The coin is drawn for every op so the stream layout does not depend on outcomes.
    const bool coin = uniform(rng, 0.0, 1.0) < apply_prob;
    if (!coin && always_apply.count(op) == 0) continue;
    if (op == "jitter") out = jitter_relative(out, strengths.jitter, rng);
    else if (op == "scale") out = scale(out, strengths.scale, rng);
    else if (op == "rotate") out = rotate(out, modality, rng);
    else if (op == "permute") out = permute(out, std::min(strengths.permute_segments, out.dim(0)), rng);
    else if (op == "channel_shuffle") out = channel_shuffle(out, rng);
    else if (op == "random_resized_crop") out = random_resized_crop(out, strengths.crop_min_fraction, rng);
    else if (op == "shear") out = shear(out, strengths.shear, rng);
  }
  return out;
}

AugmentationPipeline default_pipeline(Modality m) {
  AugmentationPipeline p;
  p.modality = m;
  if (m == Modality::inertial) {
    p.ops = {"jitter", "scale", "rotate"};
  } else {
    p.ops = {"jitter", "random_resized_crop", "scale", "rotate", "shear"};
    p.always_apply = {"jitter"};
  }
  return p;
}

}  // namespace cmkm::augment
