#include "cmkm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

#include "cmkm/random.hpp"
#include "cmkm/tensor_io.hpp"
#include "json.hpp"

namespace cmkm::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool all_finite(const Tensor<float>& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](float v) { return std::isfinite(v); });
}

}  // namespace

void InertialSequence::validate() const {
  if (values.rank() != 2 || values.dim(0) < 1 || values.dim(1) < 1)
    throw ValidationError("inertial sequence must be T x S with T, S >= 1, got " +
                          shape_str(values.shape()));
  if (!all_finite(values)) throw ValidationError("inertial sequence contains NaN/Inf");
}

void SkeletonSequence::validate() const {
  if (values.rank() != 3 || values.dim(0) < 1 || values.dim(1) < 1 ||
      (values.dim(2) != 2 && values.dim(2) != 3))
    throw ValidationError("skeleton sequence must be T x J x C with C in {2,3}, got " +
                          shape_str(values.shape()));
  if (!all_finite(values)) throw ValidationError("skeleton sequence contains NaN/Inf");
}

// ---------------------------------------------------------------- manifest

DatasetManifest DatasetManifest::read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open manifest: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError("manifest is not valid JSON: " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.num_classes = j.at("num_classes").get<int>();
    m.sensor_channels = j.at("sensor_channels").get<Index>();
    m.num_joints = j.at("num_joints").get<Index>();
    m.coord_channels = j.at("coord_channels").get<Index>();
    for (const auto& s : j.at("samples")) {
      SampleRecord r;
      r.inertial_path = s.at("inertial_path").get<std::string>();
      r.skeleton_path = s.at("skeleton_path").get<std::string>();
      if (s.contains("label") && !s["label"].is_null()) r.label = s["label"].get<int>();
      r.subject_id = s.at("subject_id").get<int>();
      if (s.contains("scene_id") && !s["scene_id"].is_null())
        r.scene_id = s["scene_id"].get<std::string>();
      m.samples.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw LoadError("malformed manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void DatasetManifest::write(const fs::path& path) const {
  json j;
  j["name"] = name;
  j["num_classes"] = num_classes;
  j["sensor_channels"] = sensor_channels;
  j["num_joints"] = num_joints;
  j["coord_channels"] = coord_channels;
  j["samples"] = json::array();
  for (const auto& r : samples) {
    json s;
    s["inertial_path"] = r.inertial_path;
    s["skeleton_path"] = r.skeleton_path;
    s["label"] = r.label ? json(*r.label) : json(nullptr);
    s["subject_id"] = r.subject_id;
    s["scene_id"] = r.scene_id ? json(*r.scene_id) : json(nullptr);
    j["samples"].push_back(std::move(s));
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
  out << j.dump(1) << '\n';
}

Dataset load_dataset(const fs::path& manifest_path) {
  const DatasetManifest m = DatasetManifest::read(manifest_path);
  if (m.samples.empty()) throw ValidationError("manifest has no samples: " + manifest_path.string());
  if (m.num_classes < 1 || m.sensor_channels < 1 || m.num_joints < 1 ||
      (m.coord_channels != 2 && m.coord_channels != 3))
    throw ValidationError("manifest metadata out of range: " + manifest_path.string());

  const fs::path base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  auto read = [](const fs::path& path) {
    if (!fs::exists(path)) throw LoadError("sample file not found: " + path.string());
    try {
      return io::read_archive(path);
    } catch (const std::runtime_error& e) {
      throw LoadError(e.what());
    }
  };

  Dataset ds;
  ds.info = {m.name, m.num_classes, m.sensor_channels, m.num_joints, m.coord_channels};
  ds.samples.reserve(m.samples.size());
  for (const auto& r : m.samples) {
    const fs::path ip = resolve(r.inertial_path), sp = resolve(r.skeleton_path);
    MultimodalSample s;
    {
      const io::Archive a = read(ip);
      s.inertial.values = io::get_f32(a, "inertial", ip);
    }
    {
      const io::Archive a = ip == sp ? read(ip) : read(sp);
      s.skeleton.values = io::get_f32(a, "skeleton", sp);
    }
    s.inertial.validate();
    s.skeleton.validate();
    if (s.inertial.channels() != m.sensor_channels)
      throw ValidationError(ip.string() + ": manifest declares " + std::to_string(m.sensor_channels) +
                            " sensor channels, file has " + std::to_string(s.inertial.channels()));
    if (s.skeleton.joints() != m.num_joints || s.skeleton.coords() != m.coord_channels)
      throw ValidationError(sp.string() + ": skeleton shape " + shape_str(s.skeleton.values.shape()) +
                            " does not match manifest joints/coords");
    if (r.label && (*r.label < 0 || *r.label >= m.num_classes))
      throw ValidationError(ip.string() + ": label " + std::to_string(*r.label) + " out of range");
    s.label = r.label;
    s.subject_id = r.subject_id;
    s.scene_id = r.scene_id;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const fs::path& manifest_path) {
  DatasetManifest m;
  m.name = dataset.info.name;
  m.num_classes = dataset.info.num_classes;
  m.sensor_channels = dataset.info.sensor_channels;
  m.num_joints = dataset.info.num_joints;
  m.coord_channels = dataset.info.coord_channels;
  const fs::path dir = manifest_path.parent_path() / "samples";
  fs::create_directories(dir);
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%06zu.cmkt", i);
    io::Archive a;
    a.emplace("inertial", s.inertial.values);
    a.emplace("skeleton", s.skeleton.values);
    io::write_archive(dir / name, a);
    const std::string rel = (fs::path("samples") / name).string();
    m.samples.push_back({rel, rel, s.label, s.subject_id, s.scene_id});
  }
  m.write(manifest_path);
}

// ---------------------------------------------------------------- preprocessing

Tensor<float> resample_time(const Tensor<float>& values, Index target_frames) {
  if (target_frames < 1) throw std::invalid_argument("resample: target length must be >= 1");
  if (values.rank() < 1 || values.dim(0) < 1)
    throw std::invalid_argument("resample: sequence must have at least one frame");
  const Index t = values.dim(0);
  if (t == target_frames) return values;
  const Index row = values.size() / t;
  Shape shape = values.shape();
  shape[0] = target_frames;
  Tensor<float> out(shape);
  for (Index i = 0; i < target_frames; ++i) {
    const double pos =
        target_frames == 1 ? 0.0
                           : static_cast<double>(i) * static_cast<double>(t - 1) /
                                 static_cast<double>(target_frames - 1);
    Index lo = static_cast<Index>(std::floor(pos));
    lo = std::clamp<Index>(lo, 0, t - 1);
    const Index hi = std::min(lo + 1, t - 1);
    const double frac = pos - static_cast<double>(lo);
    for (Index k = 0; k < row; ++k) {
      const double a = values[lo * row + k], b = values[hi * row + k];
      out[i * row + k] = static_cast<float>(a + (b - a) * frac);
    }
  }
  return out;
}

InertialSequence resample_sequence(const InertialSequence& seq, Index target_frames) {
  return {resample_time(seq.values, target_frames)};
}

SkeletonSequence resample_sequence(const SkeletonSequence& seq, Index target_frames) {
  return {resample_time(seq.values, target_frames)};
}

SkeletonSequence normalize_skeleton(const SkeletonSequence& seq) {
  seq.validate();
  const Index t = seq.frames(), j = seq.joints(), c = seq.coords();
  std::vector<double> centroid(static_cast<std::size_t>(c), 0.0);
  for (Index k = 0; k < j; ++k)
    for (Index d = 0; d < c; ++d) centroid[d] += seq.values(0, k, d);
  for (auto& v : centroid) v /= static_cast<double>(j);
  SkeletonSequence out = seq;
  for (Index f = 0; f < t; ++f)
    for (Index k = 0; k < j; ++k)
      for (Index d = 0; d < c; ++d)
        out.values(f, k, d) = static_cast<float>(seq.values(f, k, d) - centroid[d]);
  return out;
}

void preprocess(Dataset& dataset, Index target_frames, bool normalize) {
  for (auto& s : dataset.samples) {
    s.inertial = resample_sequence(s.inertial, target_frames);
    s.skeleton = resample_sequence(s.skeleton, target_frames);
    if (normalize) s.skeleton = normalize_skeleton(s.skeleton);
  }
}

// ---------------------------------------------------------------- splits

Protocol parse_protocol(const std::string& name) {
  if (name == "utd_cross_subject") return Protocol::utd_cross_subject;
  if (name == "mmact_cross_subject") return Protocol::mmact_cross_subject;
  if (name == "mmact_cross_scene") return Protocol::mmact_cross_scene;
  if (name == "custom") return Protocol::custom;
  throw std::invalid_argument("unknown protocol: " + name);
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::utd_cross_subject: return "utd_cross_subject";
    case Protocol::mmact_cross_subject: return "mmact_cross_subject";
    case Protocol::mmact_cross_scene: return "mmact_cross_scene";
    case Protocol::custom: return "custom";
  }
  return "custom";
}

Split make_split(const std::vector<MultimodalSample>& samples, const SplitSpec& spec) {
  Split out;
  for (const auto& s : samples) {
    bool test = false;
    switch (spec.protocol) {
      case Protocol::utd_cross_subject:
        if (s.subject_id < 1 || s.subject_id > 10)
          throw ValidationError("utd_cross_subject expects subject ids in 1..10, got " +
                                std::to_string(s.subject_id));
        test = s.subject_id % 2 == 0;
        break;
      case Protocol::mmact_cross_subject:
        test = s.subject_id > 16;
        break;
      case Protocol::mmact_cross_scene:
        test = s.scene_id && *s.scene_id == "occlusion";
        break;
      case Protocol::custom: {
        const bool in_train = spec.train_ids.count(s.subject_id) > 0;
        const bool in_test = spec.test_ids.count(s.subject_id) > 0;
        if (in_train == in_test)
          throw ValidationError("custom split: subject " + std::to_string(s.subject_id) +
                                " must be in exactly one of train_ids/test_ids");
        test = in_test;
        break;
      }
    }
    (test ? out.test : out.train).push_back(s);
  }
  if (out.train.empty() || out.test.empty())
    throw ValidationError("split " + to_string(spec.protocol) + " leaves an empty " +
                          (out.train.empty() ? "train" : "test") + " side");
  return out;
}

namespace {

void check_fraction(double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("subsample_labels: fraction must lie in (0, 1]");
}

Index subset_size(double fraction, std::size_t n) {
  return std::max<Index>(1, std::llround(fraction * static_cast<double>(n)));
}

}  // namespace

std::vector<Index> subsample_indices(Index n, double fraction, std::uint64_t seed) {
  check_fraction(fraction);
  if (n < 1) throw std::invalid_argument("subsample_labels: empty training set");
  Rng rng(seed);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<std::size_t>(subset_size(fraction, order.size())));
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<MultimodalSample> subsample_labels(const std::vector<MultimodalSample>& train,
                                               double fraction, std::uint64_t seed,
                                               bool stratified) {
  check_fraction(fraction);
  if (train.empty()) throw std::invalid_argument("subsample_labels: empty training set");
  std::vector<Index> picked;
  if (!stratified) {
    picked = subsample_indices(static_cast<Index>(train.size()), fraction, seed);
  } else {
    Rng rng(seed);
    std::map<int, std::vector<Index>> by_class;
    for (std::size_t i = 0; i < train.size(); ++i)
      by_class[train[i].label.value_or(-1)].push_back(static_cast<Index>(i));
    for (auto& [label, idx] : by_class) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(subset_size(fraction, idx.size())));
      picked.insert(picked.end(), idx.begin(), idx.end());
    }
    std::sort(picked.begin(), picked.end());
  }
  std::vector<MultimodalSample> out;
  out.reserve(picked.size());
  for (Index i : picked) out.push_back(train[static_cast<std::size_t>(i)]);
  return out;
}

// ---------------------------------------------------------------- synthetic

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 1 || spec.per_class < 1 || spec.frames < 1 || spec.sensor_channels < 1 ||
      spec.joints < 1 || (spec.coords != 2 && spec.coords != 3) || spec.subjects < 1)
    throw std::invalid_argument("generate_synthetic: counts must be >= 1 and coords in {2,3}");
  if (!(spec.noise >= 0)) throw std::invalid_argument("generate_synthetic: noise must be >= 0");
  if (!(spec.amplitude > 0)) throw std::invalid_argument("generate_synthetic: amplitude must be > 0");

  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const Index t = spec.frames, s = spec.sensor_channels, j = spec.joints, c = spec.coords;

  struct Signature {
    double freq;
    std::vector<double> amp, phase;          // per sensor channel
    std::vector<double> swing, joint_phase;  // per joint
  };
  Rng sig_rng(derive_seed(spec.seed, 0));
  std::vector<Signature> sigs(static_cast<std::size_t>(spec.num_classes));
  for (int k = 0; k < spec.num_classes; ++k) {
    Signature& g = sigs[static_cast<std::size_t>(k)];
    g.freq = 1.0 + 0.5 * k;
    for (Index ch = 0; ch < s; ++ch) {
      g.amp.push_back(spec.amplitude * uniform(sig_rng, 0.5, 1.0));
      g.phase.push_back(uniform(sig_rng, 0.0, kTwoPi));
    }
    for (Index q = 0; q < j; ++q) {
      g.swing.push_back(spec.amplitude * uniform(sig_rng, 0.5, 1.0));
      g.joint_phase.push_back(uniform(sig_rng, 0.0, kTwoPi));
    }
  }

  Dataset ds;
  ds.info = {"synthetic", spec.num_classes, s, j, c};
  Rng rng(derive_seed(spec.seed, 1));
  for (int k = 0; k < spec.num_classes; ++k) {
    const Signature& g = sigs[static_cast<std::size_t>(k)];
    for (int i = 0; i < spec.per_class; ++i) {
      // Offsets are drawn per modality, so the class is all the two views share.
      const double offset_i = uniform(rng, -spec.phase_jitter, spec.phase_jitter);
      const double offset_s = uniform(rng, -spec.phase_jitter, spec.phase_jitter);
      MultimodalSample m;
      m.label = k;
      m.subject_id = i % spec.subjects + 1;
      m.inertial.values = Tensor<float>({t, s});
      m.skeleton.values = Tensor<float>({t, j, c});
      for (Index f = 0; f < t; ++f) {
        const double base = kTwoPi * g.freq * static_cast<double>(f) / static_cast<double>(t);
        for (Index ch = 0; ch < s; ++ch)
          m.inertial.values(f, ch) = static_cast<float>(g.amp[ch] * std::sin(base + offset_i + g.phase[ch]));
        for (Index q = 0; q < j; ++q) {
          const double rest = kTwoPi * static_cast<double>(q) / static_cast<double>(j);
          const double theta = base + offset_s + g.joint_phase[q];
          m.skeleton.values(f, q, 0) = static_cast<float>(std::cos(rest) + g.swing[q] * std::cos(theta));
          m.skeleton.values(f, q, 1) = static_cast<float>(std::sin(rest) + g.swing[q] * std::sin(theta));
          if (c == 3) m.skeleton.values(f, q, 2) = static_cast<float>(g.swing[q] * std::sin(2.0 * theta));
        }
      }
      if (spec.noise > 0) {
        for (float& v : m.inertial.values.values()) v += static_cast<float>(normal(rng, 0.0, spec.noise));
        for (float& v : m.skeleton.values.values()) v += static_cast<float>(normal(rng, 0.0, spec.noise));
      }
      ds.samples.push_back(std::move(m));
    }
  }
  return ds;
}

template <typename Real>
Tensor<Real> stack_inertial(const std::vector<MultimodalSample>& samples,
                            const std::vector<Index>& rows) {
  if (rows.empty()) {
    const auto& first = samples.at(0).inertial.values;
    return Tensor<Real>({0, first.dim(0), first.dim(1)});
  }
  const auto& first = samples.at(static_cast<std::size_t>(rows[0])).inertial.values;
  const Index t = first.dim(0), s = first.dim(1);
  Tensor<Real> out({static_cast<Index>(rows.size()), t, s});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& v = samples.at(static_cast<std::size_t>(rows[r])).inertial.values;
    if (v.dim(0) != t || v.dim(1) != s)
      throw ValidationError("stack_inertial: samples have different shapes (preprocess first)");
    std::copy(v.values().begin(), v.values().end(), out.data() + static_cast<Index>(r) * t * s);
  }
  return out;
}

template <typename Real>
Tensor<Real> stack_skeleton(const std::vector<MultimodalSample>& samples,
                            const std::vector<Index>& rows) {
  if (rows.empty()) {
    const auto& first = samples.at(0).skeleton.values;
    return Tensor<Real>({0, first.dim(0), first.dim(1), first.dim(2)});
  }
  const auto& first = samples.at(static_cast<std::size_t>(rows[0])).skeleton.values;
  const Index t = first.dim(0), j = first.dim(1), c = first.dim(2);
  Tensor<Real> out({static_cast<Index>(rows.size()), t, j, c});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& v = samples.at(static_cast<std::size_t>(rows[r])).skeleton.values;
    if (v.shape() != first.shape())
      throw ValidationError("stack_skeleton: samples have different shapes (preprocess first)");
    std::copy(v.values().begin(), v.values().end(), out.data() + static_cast<Index>(r) * t * j * c);
  }
  return out;
}

template Tensor<float> stack_inertial<float>(const std::vector<MultimodalSample>&, const std::vector<Index>&);
template Tensor<double> stack_inertial<double>(const std::vector<MultimodalSample>&, const std::vector<Index>&);
template Tensor<float> stack_skeleton<float>(const std::vector<MultimodalSample>&, const std::vector<Index>&);
template Tensor<double> stack_skeleton<double>(const std::vector<MultimodalSample>&, const std::vector<Index>&);

std::vector<int> labels_of(const std::vector<MultimodalSample>& samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.label) throw ConfigError("sample without a label in a supervised protocol");
    out.push_back(*s.label);
  }
  return out;
}

}  // namespace cmkm::data
