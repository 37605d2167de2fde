#include "cmkm/models.hpp"

#include <cstring>

#include "cmkm/errors.hpp"
#include "cmkm/tensor_io.hpp"

namespace cmkm {

using nlohmann::json;

void ModelConfig::validate() const {
  inertial.validate();
  skeleton.validate();
  if (projection_dim < 1) throw ConfigError("encoders.projection_dim must be positive");
  if (fusion_dim < 1) throw ConfigError("encoders.fusion_dim must be positive");
}

ModalityEncoder::ModalityEncoder(Modality modality, const ModelConfig& config, const InputDims& dims,
                                 Rng& rng)
    : modality_(modality) {
  if (modality == Modality::inertial)
    inertial_ = std::make_unique<nn::InertialEncoder<float>>(config.inertial, dims.sensor_channels, rng);
  else
    skeleton_ = std::make_unique<nn::SkeletonEncoder<float>>(config.skeleton, dims.frames, dims.joints,
                                                              dims.coords, rng);
}

Index ModalityEncoder::feature_dim() const {
  return inertial_ ? inertial_->feature_dim() : skeleton_->feature_dim();
}

Tensor<float> ModalityEncoder::forward(const Tensor<float>& x) {
  return inertial_ ? inertial_->forward(x) : skeleton_->forward(x);
}

Tensor<float> ModalityEncoder::backward(const Tensor<float>& grad) {
  return inertial_ ? inertial_->backward(grad) : skeleton_->backward(grad);
}

void ModalityEncoder::collect(const std::string& prefix, nn::StateList<float>& out) {
  if (inertial_) inertial_->collect(prefix, out);
  else skeleton_->collect(prefix, out);
}

void ModalityEncoder::set_training(bool training) {
  if (inertial_) inertial_->set_training(training);
  else skeleton_->set_training(training);
}

Tensor<float> ModalityEncoder::batch_input(const std::vector<data::MultimodalSample>& samples,
                                           const std::vector<Index>& rows) const {
  return inertial_ ? data::stack_inertial<float>(samples, rows) : data::stack_skeleton<float>(samples, rows);
}

nn::StateList<float> ModalityNet::state() {
  nn::StateList<float> s;
  encoder.collect("encoder", s);
  head.collect("head", s);
  return s;
}

nn::StateList<float> ModalityNet::encoder_state() {
  nn::StateList<float> s;
  encoder.collect("encoder", s);
  return s;
}

ModalityNet make_net(Modality modality, const ModelConfig& config, const InputDims& dims,
                     std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModalityNet net;
  net.config = config;
  net.dims = dims;
  net.encoder = ModalityEncoder(modality, config, dims, rng);
  const Index d = net.encoder.feature_dim();
  net.head = nn::ProjectionHead<float>({d, d, config.projection_dim}, rng);
  return net;
}

// ---------------------------------------------------------------- json

json to_json(const ModelConfig& c) {
  return {
      {"inertial",
       {{"conv_channels", c.inertial.conv_channels},
        {"kernel_size", c.inertial.kernel_size},
        {"attention_blocks", c.inertial.attention_blocks},
        {"attention_heads", c.inertial.attention_heads},
        {"ff_dim", c.inertial.ff_dim},
        {"feature_dim", c.inertial.feature_dim}}},
      {"skeleton",
       {{"point_channels", c.skeleton.point_channels},
        {"cooccurrence_channels", c.skeleton.cooccurrence_channels},
        {"fused_channels", c.skeleton.fused_channels},
        {"feature_dim", c.skeleton.feature_dim}}},
      {"projection_dim", c.projection_dim},
      {"fusion_dim", c.fusion_dim},
  };
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  const auto& i = j.at("inertial");
  c.inertial.conv_channels = i.at("conv_channels").get<std::vector<Index>>();
  c.inertial.kernel_size = i.at("kernel_size").get<Index>();
  c.inertial.attention_blocks = i.at("attention_blocks").get<Index>();
  c.inertial.attention_heads = i.at("attention_heads").get<Index>();
  c.inertial.ff_dim = i.at("ff_dim").get<Index>();
  c.inertial.feature_dim = i.at("feature_dim").get<Index>();
  const auto& s = j.at("skeleton");
  c.skeleton.point_channels = s.at("point_channels").get<std::vector<Index>>();
  c.skeleton.cooccurrence_channels = s.at("cooccurrence_channels").get<std::vector<Index>>();
  c.skeleton.fused_channels = s.at("fused_channels").get<std::vector<Index>>();
  c.skeleton.feature_dim = s.at("feature_dim").get<Index>();
  c.projection_dim = j.at("projection_dim").get<Index>();
  c.fusion_dim = j.at("fusion_dim").get<Index>();
  return c;
}

json to_json(const InputDims& d) {
  return {{"frames", d.frames}, {"sensor_channels", d.sensor_channels}, {"joints", d.joints}, {"coords", d.coords}};
}

InputDims input_dims_from_json(const json& j) {
  return {j.at("frames").get<Index>(), j.at("sensor_channels").get<Index>(), j.at("joints").get<Index>(),
          j.at("coords").get<Index>()};
}

// ---------------------------------------------------------------- checkpoints

void save_state(const std::filesystem::path& path, const nn::StateList<float>& state, const json& metadata) {
  io::Archive a;
  for (const auto& s : state) a.emplace(s.name, *s.value);
  a.emplace("metadata", metadata.dump());
  io::write_archive(path, a);
}

json load_state(const std::filesystem::path& path, const nn::StateList<float>& state) {
  if (!std::filesystem::exists(path)) throw LoadError("checkpoint not found: " + path.string());
  io::Archive a;
  try {
    a = io::read_archive(path);
  } catch (const std::runtime_error& e) {
    throw LoadError(e.what());
  }
  for (const auto& s : state) {
    const auto it = a.find(s.name);
    if (it == a.end()) throw ValidationError(path.string() + ": missing tensor '" + s.name + "'");
    const auto* t = std::get_if<Tensor<float>>(&it->second);
    if (!t || t->shape() != s.value->shape())
      throw ValidationError(path.string() + ": tensor '" + s.name + "' has the wrong type or shape");
    *s.value = *t;
  }
  try {
    return json::parse(io::get_bytes(a, "metadata", path));
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": bad metadata: " + e.what());
  }
}

void save_net(const std::filesystem::path& path, ModalityNet& net, const json& extra) {
  json meta = extra;
  meta["modality"] = augment::to_string(net.encoder.modality());
  meta["model"] = to_json(net.config);
  meta["dims"] = to_json(net.dims);
  save_state(path, net.state(), meta);
}

ModalityNet load_net(const std::filesystem::path& path, json* metadata) {
  if (!std::filesystem::exists(path)) throw LoadError("checkpoint not found: " + path.string());
  json meta;
  try {
    const io::Archive a = io::read_archive(path);
    meta = json::parse(io::get_bytes(a, "metadata", path));
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": bad metadata: " + e.what());
  } catch (const std::runtime_error& e) {
    throw LoadError(e.what());
  }
  ModalityNet net;
  try {
    net = make_net(augment::parse_modality(meta.at("modality").get<std::string>()),
                   model_config_from_json(meta.at("model")), input_dims_from_json(meta.at("dims")), 0);
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": incomplete metadata: " + e.what());
  }
  load_state(path, net.state());
  net.encoder.set_training(false);
  if (metadata) *metadata = std::move(meta);
  return net;
}

std::uint64_t state_hash(const nn::StateList<float>& state) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& s : state) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(s.value->data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(s.value->size()) * sizeof(float); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace cmkm

namespace cmkm::contrastive {

GuidanceSimilarity<float> guidance_from_encoders(ModalityEncoder& inertial, ModalityEncoder& skeleton,
                                                 const Tensor<float>& inertial_batch,
                                                 const Tensor<float>& skeleton_batch, Exec exec) {
  if (inertial.modality() != Modality::inertial || skeleton.modality() != Modality::skeleton)
    throw std::invalid_argument("guidance encoders must be (inertial, skeleton)");
  if (inertial_batch.dim(0) != skeleton_batch.dim(0))
    throw std::invalid_argument("guidance batches differ in size");
  inertial.set_training(false);
  skeleton.set_training(false);
  const Tensor<float> fi = inertial.forward(inertial_batch);
  const Tensor<float> fs = skeleton.forward(skeleton_batch);
  return guidance_from_features(fi, fs, exec);
}

}  // namespace cmkm::contrastive
