#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cmkm/config.hpp"
#include "cmkm/models.hpp"
#include "json.hpp"

namespace cmkm::train {

struct EpochRecord {
  std::string framework;
  int epoch = 0;  // 1-based
  double loss = 0;
  double lr = 0;
  double wall_time = 0;  // seconds since the start of training
  double first_to_second = 0;
  double second_to_first = 0;
  double mean_mined_similarity = 0;

  nlohmann::json to_json() const;
};

/// Where a run writes its artifacts. An empty directory keeps everything in memory.
struct RunOutput {
  std::filesystem::path dir;
  bool verbose = false;
};

struct UnimodalResult {
  ModalityNet net;  // final-epoch parameters
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  std::vector<std::filesystem::path> files;
};

struct MultimodalResult {
  ModalityNet inertial, skeleton;  // final-epoch parameters
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  std::vector<std::filesystem::path> files;
};

/// Input geometry of preprocessed samples.
InputDims dims_of(const std::vector<data::MultimodalSample>& samples);

/// Shuffled mini-batches for one epoch. A trailing batch smaller than
/// `min_batch` is dropped.
std::vector<std::vector<Index>> epoch_batches(Index n, Index batch_size, Index min_batch,
                                              std::uint64_t seed, int epoch);

/// Augments each selected sample of one modality with its own seed and stacks
/// the results. Seeds depend on (seed, view, epoch, sample index) only.
Tensor<float> augmented_batch(const std::vector<data::MultimodalSample>& samples,
                              const std::vector<Index>& rows,
                              const augment::AugmentationPipeline& pipeline, std::uint64_t seed,
                              int view, int epoch, Exec exec = default_exec());

/// Stage 1: SimCLR on one modality (framework simclr_inertial / simclr_skeleton).
/// Files: <dir>/<modality>_final.cmkt, <modality>_best.cmkt, train_log.jsonl.
/// Checkpoints hold the encoder and the projection head; guidance loading
/// uses only the encoder.
UnimodalResult pretrain_unimodal(const ExperimentConfig& config,
                                 const std::vector<data::MultimodalSample>& train,
                                 const RunOutput& out = {});

/// Stage 2: CMC or CMC-CMKM. For cmc_cmkm the guidance encoders are loaded
/// from config.guidance_* and stay frozen.
/// Files: inertial_/skeleton_ final and best checkpoints plus train_log.jsonl.
MultimodalResult pretrain_multimodal(const ExperimentConfig& config,
                                     const std::vector<data::MultimodalSample>& train,
                                     const RunOutput& out = {});

/// Same as above with guidance encoders supplied in memory (cmc_cmkm only).
MultimodalResult pretrain_multimodal(const ExperimentConfig& config,
                                     const std::vector<data::MultimodalSample>& train,
                                     ModalityNet* guidance_inertial, ModalityNet* guidance_skeleton,
                                     const RunOutput& out = {});

/// End-to-end supervised model: encoders plus a fusion classifier
/// (multimodal) or a single linear classifier (unimodal).
struct SupervisedModel {
  std::string modality = "multimodal";
  std::optional<ModalityNet> inertial, skeleton;
  nn::FusionClassifier<float> fusion;
  nn::Linear<float> linear;
  std::vector<EpochRecord> log;

  Tensor<float> logits(const std::vector<data::MultimodalSample>& samples, Index batch_size = 64);
  nn::StateList<float> state();
};

/// `modality` is multimodal, inertial or skeleton.
SupervisedModel train_supervised(const ExperimentConfig& config,
                                 const std::vector<data::MultimodalSample>& train, int num_classes,
                                 const std::string& modality, int epochs, const RunOutput& out = {});

void write_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log);
std::vector<EpochRecord> read_log(const std::filesystem::path& path);

}  // namespace cmkm::train
