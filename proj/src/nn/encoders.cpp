#include "cmkm/nn/encoders.hpp"

#include <stdexcept>

namespace cmkm::nn {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

bool all_positive(const std::vector<Index>& v) {
  for (Index x : v)
    if (x <= 0) return false;
  return true;
}

constexpr std::array<int, 4> kSensorToConv{0, 2, 3, 1};    // N,T,S,1 -> N,S,1,T
constexpr std::array<int, 4> kConvToSequence{0, 2, 3, 1};  // N,C,1,T -> N,1,T,C
constexpr std::array<int, 4> kSkeletonToConv{0, 3, 1, 2};  // N,T,J,C -> N,C,T,J
constexpr std::array<int, 4> kJointsToChannels{0, 3, 2, 1};

}  // namespace

void InertialEncoderConfig::validate() const {
  require(!conv_channels.empty() && all_positive(conv_channels),
          "inertial encoder: conv_channels must be non-empty and positive");
  require(kernel_size > 0 && kernel_size % 2 == 1, "inertial encoder: kernel_size must be odd");
  require(attention_blocks >= 0, "inertial encoder: attention_blocks must be >= 0");
  require(attention_heads > 0 && conv_channels.back() % attention_heads == 0,
          "inertial encoder: attention_heads must divide the last conv channel count");
  require(ff_dim > 0, "inertial encoder: ff_dim must be positive");
  require(feature_dim == conv_channels.back(),
          "inertial encoder: feature_dim must equal the last conv channel count");
}

void SkeletonEncoderConfig::validate() const {
  require(!point_channels.empty() && all_positive(point_channels),
          "skeleton encoder: point_channels must be non-empty and positive");
  require(!cooccurrence_channels.empty() && all_positive(cooccurrence_channels),
          "skeleton encoder: cooccurrence_channels must be non-empty and positive");
  require(all_positive(fused_channels), "skeleton encoder: fused_channels must be positive");
  require(feature_dim > 0, "skeleton encoder: feature_dim must be positive");
}

void ProjectionHeadConfig::validate() const {
  require(input_dim > 0 && hidden_dim > 0 && output_dim > 0,
          "projection head: all dimensions must be positive");
}

void FusionHeadConfig::validate() const {
  require(per_modality_out > 0, "fusion head: per_modality_out must be positive");
  require(classes > 0, "fusion head: classes must be positive");
}

// ---------------------------------------------------------------- inertial

template <typename Real>
InertialEncoder<Real>::InertialEncoder(const InertialEncoderConfig& config, Index sensor_channels,
                                       Rng& rng)
    : config_(config), sensor_channels_(sensor_channels) {
  config_.validate();
  require(sensor_channels_ > 0, "inertial encoder: sensor channel count must be positive");
  Index in = sensor_channels_;
  for (Index out : config_.conv_channels) {
    convs_.push_back({Conv2d<Real>(in, out, 1, config_.kernel_size, rng), BatchNorm<Real>(out), {}});
    in = out;
  }
  for (Index b = 0; b < config_.attention_blocks; ++b)
    blocks_.emplace_back(in, config_.attention_heads, config_.ff_dim, rng);
}

template <typename Real>
Tensor<Real> InertialEncoder<Real>::forward(const Tensor<Real>& x) {
  require(x.rank() == 3 && x.dim(1) >= 1 && x.dim(2) == sensor_channels_,
          "inertial encoder: expected N x T x " + std::to_string(sensor_channels_) + ", got " +
              shape_str(x.shape()));
  input_shape_ = x.shape();
  const Index n = x.dim(0), t = x.dim(1);
  Tensor<Real> h = permute4(x.reshaped({n, t, sensor_channels_, 1}), kSensorToConv);
  for (auto& block : convs_) h = block.act.forward(block.norm.forward(block.conv.forward(h)));
  const Index c = h.dim(1);
  Tensor<Real> seq = permute4(h, kConvToSequence);
  seq.reshape({n, t, c});
  add_positional_encoding(seq);
  for (auto& block : blocks_) seq = block.forward(seq);
  return pool_.forward(seq);
}

template <typename Real>
Tensor<Real> InertialEncoder<Real>::backward(const Tensor<Real>& grad_out) {
  const Index n = input_shape_[0], t = input_shape_[1];
  Tensor<Real> g = pool_.backward(grad_out);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = it->backward(g);
  const Index c = g.dim(2);
  g.reshape({n, 1, t, c});
  g = permute4(g, inverse_permutation(kConvToSequence));
  for (auto it = convs_.rbegin(); it != convs_.rend(); ++it)
    g = it->conv.backward(it->norm.backward(it->act.backward(g)));
  g = permute4(g, inverse_permutation(kSensorToConv));
  g.reshape(input_shape_);
  return g;
}

template <typename Real>
void InertialEncoder<Real>::collect(const std::string& prefix, StateList<Real>& out) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const std::string p = prefix + ".conv" + std::to_string(i);
    convs_[i].conv.collect(p, out);
    convs_[i].norm.collect(p + ".bn", out);
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
}

template <typename Real>
void InertialEncoder<Real>::set_training(bool training) {
  for (auto& block : convs_) block.norm.set_training(training);
}

// ---------------------------------------------------------------- skeleton

template <typename Real>
Tensor<Real> SkeletonEncoder<Real>::Stage::forward(const Tensor<Real>& x) {
  Tensor<Real> h = conv.forward(x);
  if (relu) h = act.forward(h);
  if (norm) h = bn.forward(h);
  if (pool) h = pooling.forward(h);
  return h;
}

template <typename Real>
Tensor<Real> SkeletonEncoder<Real>::Stage::backward(const Tensor<Real>& g) {
  Tensor<Real> d = pool ? pooling.backward(g) : g;
  if (norm) d = bn.backward(d);
  if (relu) d = act.backward(d);
  return conv.backward(d);
}

template <typename Real>
SkeletonEncoder<Real>::SkeletonEncoder(const SkeletonEncoderConfig& config, Index frames,
                                       Index joints, Index coords, Rng& rng)
    : config_(config), frames_(frames), joints_(joints), coords_(coords) {
  config_.validate();
  require(frames_ >= 1 && joints_ >= 1 && (coords_ == 2 || coords_ == 3),
          "skeleton encoder: need T >= 1, J >= 1, C in {2,3}");

  auto make_stream = [&]() {
    Stream s;
    Index in = coords_;
    for (std::size_t i = 0; i < config_.point_channels.size(); ++i) {
      Stage st;
      const Index out = config_.point_channels[i];
      st.conv = i == 0 ? Conv2d<Real>(in, out, 1, 1, rng) : Conv2d<Real>(in, out, 3, 1, rng);
      st.relu = i == 0;
      s.point.push_back(std::move(st));
      in = out;
    }
    in = joints_;
    for (std::size_t i = 0; i < config_.cooccurrence_channels.size(); ++i) {
      Stage st;
      const Index out = config_.cooccurrence_channels[i];
      st.conv = Conv2d<Real>(in, out, 3, 3, rng);
      st.pool = true;
      if (i + 1 == config_.cooccurrence_channels.size()) {
        st.norm = true;
        st.bn = BatchNorm<Real>(out);
      }
      s.cooccurrence.push_back(std::move(st));
      in = out;
    }
    return s;
  };
  position_ = make_stream();
  motion_ = make_stream();

  Index height = frames_, width = config_.point_channels.back();
  for (std::size_t i = 0; i < config_.cooccurrence_channels.size(); ++i) {
    height = (height + 1) / 2;
    width = (width + 1) / 2;
  }
  stream_channels_ = config_.cooccurrence_channels.back();
  Index in = 2 * stream_channels_;
  for (Index out : config_.fused_channels) {
    Stage st;
    st.conv = Conv2d<Real>(in, out, 3, 3, rng);
    st.relu = st.norm = st.pool = true;
    st.bn = BatchNorm<Real>(out);
    fused_.push_back(std::move(st));
    in = out;
    height = (height + 1) / 2;
    width = (width + 1) / 2;
  }
  fc_ = Linear<Real>(in * height * width, config_.feature_dim, rng);
  fc_norm_ = BatchNorm<Real>(config_.feature_dim);
}

template <typename Real>
Tensor<Real> SkeletonEncoder<Real>::stream_forward(Stream& s, const Tensor<Real>& x) {
  Tensor<Real> h = x;
  for (auto& st : s.point) h = st.forward(h);
  h = permute4(h, kJointsToChannels);
  for (auto& st : s.cooccurrence) h = st.forward(h);
  return h;
}

template <typename Real>
Tensor<Real> SkeletonEncoder<Real>::stream_backward(Stream& s, const Tensor<Real>& g) {
  Tensor<Real> d = g;
  for (auto it = s.cooccurrence.rbegin(); it != s.cooccurrence.rend(); ++it) d = it->backward(d);
  d = permute4(d, inverse_permutation(kJointsToChannels));
  for (auto it = s.point.rbegin(); it != s.point.rend(); ++it) d = it->backward(d);
  return d;
}

template <typename Real>
Tensor<Real> SkeletonEncoder<Real>::forward(const Tensor<Real>& x) {
  require(x.rank() == 4 && x.dim(1) == frames_ && x.dim(2) == joints_ && x.dim(3) == coords_,
          "skeleton encoder: expected N x " + std::to_string(frames_) + " x " +
              std::to_string(joints_) + " x " + std::to_string(coords_) + ", got " +
              shape_str(x.shape()));
  const Index n = x.dim(0), t = frames_, frame = joints_ * coords_;
  Tensor<Real> motion(x.shape());
  for (Index s = 0; s < n; ++s)
    for (Index f = 0; f + 1 < t; ++f)
      for (Index k = 0; k < frame; ++k)
        motion[(s * t + f) * frame + k] = x[(s * t + f + 1) * frame + k] - x[(s * t + f) * frame + k];

  Tensor<Real> a = stream_forward(position_, permute4(x, kSkeletonToConv));
  Tensor<Real> b = stream_forward(motion_, permute4(motion, kSkeletonToConv));
  Tensor<Real> h = concat_channels(a, b);
  for (auto& st : fused_) h = st.forward(h);
  fused_shape_ = h.shape();
  h.reshape({n, n == 0 ? fc_.in_features() : h.size() / n});
  return fc_norm_.forward(fc_act_.forward(fc_.forward(h)));
}

template <typename Real>
Tensor<Real> SkeletonEncoder<Real>::backward(const Tensor<Real>& grad_out) {
  Tensor<Real> g = fc_.backward(fc_act_.backward(fc_norm_.backward(grad_out)));
  g.reshape(fused_shape_);
  for (auto it = fused_.rbegin(); it != fused_.rend(); ++it) g = it->backward(g);
  auto [ga, gb] = split_channels(g, stream_channels_);
  const auto to_input = inverse_permutation(kSkeletonToConv);
  Tensor<Real> dx = permute4(stream_backward(position_, ga), to_input);
  const Tensor<Real> dm = permute4(stream_backward(motion_, gb), to_input);
  const Index n = dx.dim(0), t = frames_, frame = joints_ * coords_;
  for (Index s = 0; s < n; ++s)
    for (Index f = 0; f + 1 < t; ++f)
      for (Index k = 0; k < frame; ++k) {
        const Real d = dm[(s * t + f) * frame + k];
        dx[(s * t + f + 1) * frame + k] += d;
        dx[(s * t + f) * frame + k] -= d;
      }
  return dx;
}

template <typename Real>
void SkeletonEncoder<Real>::collect(const std::string& prefix, StateList<Real>& out) {
  auto stream = [&](Stream& s, const std::string& p) {
    for (std::size_t i = 0; i < s.point.size(); ++i)
      s.point[i].conv.collect(p + ".point" + std::to_string(i), out);
    for (std::size_t i = 0; i < s.cooccurrence.size(); ++i) {
      const std::string q = p + ".cooc" + std::to_string(i);
      s.cooccurrence[i].conv.collect(q, out);
      if (s.cooccurrence[i].norm) s.cooccurrence[i].bn.collect(q + ".bn", out);
    }
  };
  stream(position_, prefix + ".position");
  stream(motion_, prefix + ".motion");
  for (std::size_t i = 0; i < fused_.size(); ++i) {
    const std::string q = prefix + ".fused" + std::to_string(i);
    fused_[i].conv.collect(q, out);
    fused_[i].bn.collect(q + ".bn", out);
  }
  fc_.collect(prefix + ".fc", out);
  fc_norm_.collect(prefix + ".fc.bn", out);
}

template <typename Real>
void SkeletonEncoder<Real>::set_training(bool training) {
  for (Stream* s : {&position_, &motion_})
    for (auto& st : s->cooccurrence) st.bn.set_training(training);
  for (auto& st : fused_) st.bn.set_training(training);
  fc_norm_.set_training(training);
}

// ---------------------------------------------------------------- heads

template <typename Real>
ProjectionHead<Real>::ProjectionHead(const ProjectionHeadConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  hidden_ = Linear<Real>(config_.input_dim, config_.hidden_dim, rng);
  output_ = Linear<Real>(config_.hidden_dim, config_.output_dim, rng);
}

template <typename Real>
Tensor<Real> ProjectionHead<Real>::forward(const Tensor<Real>& x) {
  require(x.rank() == 2 && x.dim(1) == config_.input_dim,
          "projection head: expected N x " + std::to_string(config_.input_dim) + ", got " +
              shape_str(x.shape()));
  return output_.forward(act_.forward(hidden_.forward(x)));
}

template <typename Real>
Tensor<Real> ProjectionHead<Real>::backward(const Tensor<Real>& grad_out) {
  return hidden_.backward(act_.backward(output_.backward(grad_out)));
}

template <typename Real>
void ProjectionHead<Real>::collect(const std::string& prefix, StateList<Real>& out) {
  hidden_.collect(prefix + ".hidden", out);
  output_.collect(prefix + ".output", out);
}

template <typename Real>
FusionClassifier<Real>::FusionClassifier(Index inertial_dim, Index skeleton_dim,
                                         const FusionHeadConfig& config, Rng& rng)
    : inertial_dim_(inertial_dim), skeleton_dim_(skeleton_dim), config_(config) {
  config_.validate();
  require(inertial_dim_ > 0 && skeleton_dim_ > 0, "fusion head: input dims must be positive");
  inertial_ = {Linear<Real>(inertial_dim_, config_.per_modality_out, rng),
               BatchNorm<Real>(config_.per_modality_out), {}};
  skeleton_ = {Linear<Real>(skeleton_dim_, config_.per_modality_out, rng),
               BatchNorm<Real>(config_.per_modality_out), {}};
  classifier_ = Linear<Real>(2 * config_.per_modality_out, config_.classes, rng);
}

template <typename Real>
Tensor<Real> FusionClassifier<Real>::forward(const Tensor<Real>& inertial,
                                             const Tensor<Real>& skeleton) {
  require(inertial.rank() == 2 && inertial.dim(1) == inertial_dim_,
          "fusion head: inertial features must be N x " + std::to_string(inertial_dim_));
  require(skeleton.rank() == 2 && skeleton.dim(1) == skeleton_dim_,
          "fusion head: skeleton features must be N x " + std::to_string(skeleton_dim_));
  require(inertial.dim(0) == skeleton.dim(0), "fusion head: batch sizes differ");
  const Tensor<Real> a = inertial_.act.forward(inertial_.norm.forward(inertial_.fc.forward(inertial)));
  const Tensor<Real> b = skeleton_.act.forward(skeleton_.norm.forward(skeleton_.fc.forward(skeleton)));
  return classifier_.forward(concat_channels(a, b));
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> FusionClassifier<Real>::backward(
    const Tensor<Real>& grad_logits) {
  auto [ga, gb] = split_channels(classifier_.backward(grad_logits), config_.per_modality_out);
  Tensor<Real> gi = inertial_.fc.backward(inertial_.norm.backward(inertial_.act.backward(ga)));
  Tensor<Real> gs = skeleton_.fc.backward(skeleton_.norm.backward(skeleton_.act.backward(gb)));
  return {std::move(gi), std::move(gs)};
}

template <typename Real>
void FusionClassifier<Real>::collect(const std::string& prefix, StateList<Real>& out) {
  inertial_.fc.collect(prefix + ".inertial", out);
  inertial_.norm.collect(prefix + ".inertial.bn", out);
  skeleton_.fc.collect(prefix + ".skeleton", out);
  skeleton_.norm.collect(prefix + ".skeleton.bn", out);
  classifier_.collect(prefix + ".classifier", out);
}

template <typename Real>
void FusionClassifier<Real>::set_training(bool training) {
  inertial_.norm.set_training(training);
  skeleton_.norm.set_training(training);
}

template <typename Real>
std::vector<Real> snapshot(const StateList<Real>& state) {
  std::vector<Real> out;
  for (const auto& s : state) out.insert(out.end(), s.value->values().begin(), s.value->values().end());
  return out;
}

template <typename Real>
void zero_grad(const StateList<Real>& state) {
  for (const auto& s : state)
    if (s.grad) s.grad->fill(Real(0));
}

#define CMKM_INSTANTIATE(Real)                                          \
  template class InertialEncoder<Real>;                                 \
  template class SkeletonEncoder<Real>;                                 \
  template class ProjectionHead<Real>;                                  \
  template class FusionClassifier<Real>;                                \
  template std::vector<Real> snapshot<Real>(const StateList<Real>&);    \
  template void zero_grad<Real>(const StateList<Real>&);

CMKM_INSTANTIATE(float)
CMKM_INSTANTIATE(double)

#undef CMKM_INSTANTIATE

}  // namespace cmkm::nn
