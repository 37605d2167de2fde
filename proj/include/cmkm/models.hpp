#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "cmkm/augment.hpp"
#include "cmkm/contrastive.hpp"
#include "cmkm/data.hpp"
#include "cmkm/nn/encoders.hpp"
#include "json.hpp"

// Float models used by the training and evaluation drivers, and their
// checkpoint files.
namespace cmkm {

using augment::Modality;

struct InputDims {
  Index frames = 50;
  Index sensor_channels = 6;
  Index joints = 20;
  Index coords = 3;
};

struct ModelConfig {
  nn::InertialEncoderConfig inertial;
  nn::SkeletonEncoderConfig skeleton;
  Index projection_dim = 128;
  Index fusion_dim = 256;

  void validate() const;
};

/// One modality's feature encoder behind a common interface.
class ModalityEncoder {
 public:
  ModalityEncoder() = default;
  ModalityEncoder(Modality modality, const ModelConfig& config, const InputDims& dims, Rng& rng);

  Modality modality() const { return modality_; }
  Index feature_dim() const;

  Tensor<float> forward(const Tensor<float>& x);
  Tensor<float> backward(const Tensor<float>& grad);
  void collect(const std::string& prefix, nn::StateList<float>& out);
  void set_training(bool training);

  /// Stacks the modality's tensors of the given samples into a batch.
  Tensor<float> batch_input(const std::vector<data::MultimodalSample>& samples,
                            const std::vector<Index>& rows) const;

 private:
  Modality modality_ = Modality::inertial;
  std::unique_ptr<nn::InertialEncoder<float>> inertial_;
  std::unique_ptr<nn::SkeletonEncoder<float>> skeleton_;
};

/// Encoder plus projection head: what contrastive pre-training optimizes.
struct ModalityNet {
  ModalityEncoder encoder;
  nn::ProjectionHead<float> head;
  ModelConfig config;
  InputDims dims;

  nn::StateList<float> state();          // encoder then head
  nn::StateList<float> encoder_state();  // encoder only
};

ModalityNet make_net(Modality modality, const ModelConfig& config, const InputDims& dims,
                     std::uint64_t seed);

// Checkpoint file: a CMKT archive with one float32 tensor per named
// parameter/buffer ("encoder.*", "head.*") and a "metadata" byte entry
// holding JSON: modality, model config, input dims, plus whatever the caller
// adds (config echo, epoch, seed, loss curve).
void save_net(const std::filesystem::path& path, ModalityNet& net, const nlohmann::json& extra);
ModalityNet load_net(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

void save_state(const std::filesystem::path& path, const nn::StateList<float>& state,
                const nlohmann::json& metadata);
nlohmann::json load_state(const std::filesystem::path& path, const nn::StateList<float>& state);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const InputDims& d);
InputDims input_dims_from_json(const nlohmann::json& j);

/// 64-bit FNV-1a over the raw bytes of every state tensor.
std::uint64_t state_hash(const nn::StateList<float>& state);

}  // namespace cmkm

namespace cmkm::contrastive {

/// Encodes the (augmented) batch with frozen guidance encoders in evaluation
/// mode and returns their intra-modality cosine similarities.
GuidanceSimilarity<float> guidance_from_encoders(ModalityEncoder& inertial, ModalityEncoder& skeleton,
                                                 const Tensor<float>& inertial_batch,
                                                 const Tensor<float>& skeleton_batch,
                                                 Exec exec = default_exec());

}  // namespace cmkm::contrastive
