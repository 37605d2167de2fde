#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cmkm/augment.hpp"
#include "cmkm/contrastive.hpp"
#include "cmkm/data.hpp"
#include "cmkm/models.hpp"
#include "cmkm/nn/optim.hpp"
#include "json.hpp"

// Experiment configuration: one JSON file per experiment. The complete schema
// with defaults is what `default_config_json(family, framework)` returns;
// any key not present there is rejected. Defaults for batch_size, tau, epochs,
// inertial augmentations, protocol and metric depend on `dataset.family`
// ("utd" or "mmact") and `framework`.
//
//   dataset.manifest            path to the dataset manifest
//   dataset.family              "utd" | "mmact"
//   dataset.protocol            utd_cross_subject | mmact_cross_subject | mmact_cross_scene | custom
//   dataset.train_ids/test_ids  subject ids for the custom protocol
//   dataset.frames              resampling length (50)
//   dataset.normalize_skeleton  subtract the frame-0 joint centroid (true)
//   framework                   simclr_inertial | simclr_skeleton | cmc | cmc_cmkm | supervised
//   batch_size, tau, top_k, epochs, seed
//   intra_negatives             add intra-modality negatives in cmc_cmkm (true)
//   reduction                   "mean" | "sum"
//   guidance_checkpoints        {"inertial": path, "skeleton": path} or null
//   warm_start                  initialize stage-2 encoders from the guidance checkpoints (false)
//   augmentations               {inertial: [ops], skeleton: [ops], apply_prob, always_apply{...}, strengths{...}}
//   encoders                    {inertial{...}, skeleton{...}, projection_dim, fusion_dim}
//   optimizer                   {lr, plateau_patience_epochs, reduction_factor, max_reductions, improvement_threshold}
//   evaluation                  {mode, modality, metric, epochs, batch_size, k, fractions, repeats,
//                                k_values, baselines, score_on_train,
//                                checkpoints{inertial, skeleton}}
//   output_dir                  relative paths resolve against $CMKM_OUTPUT_ROOT (default "runs")
//   strict                      serial, bit-reproducible execution (true)
namespace cmkm {

enum class Framework { simclr_inertial, simclr_skeleton, cmc, cmc_cmkm, supervised };

Framework parse_framework(const std::string& s);
std::string to_string(Framework f);

enum class Metric { accuracy, f1_macro };
Metric parse_metric(const std::string& s);
std::string to_string(Metric m);

struct EvaluationConfig {
  std::string mode = "linear";        // linear | retrieve | semisup | topk
  std::string modality = "multimodal";  // multimodal | inertial | skeleton
  Metric metric = Metric::accuracy;
  int epochs = 100;
  Index batch_size = 64;
  Index k = 1;
  std::vector<double> fractions{0.01, 0.02, 0.05, 0.10, 0.25, 0.50};
  int repeats = 10;
  std::vector<Index> k_values{0, 1, 2, 3, 4, 5};
  bool baselines = true;
  bool score_on_train = false;  // sanity check: query the training split instead of the test split
  std::optional<std::string> inertial_checkpoint;
  std::optional<std::string> skeleton_checkpoint;
};

struct ExperimentConfig {
  std::string manifest;
  std::string family = "utd";
  data::SplitSpec split;
  Index frames = 50;
  bool normalize_skeleton = true;

  Framework framework = Framework::cmc_cmkm;
  Index batch_size = 64;
  double tau = 0.1;
  Index top_k = 1;
  int epochs = 100;
  std::uint64_t seed = 0;
  bool intra_negatives = true;
  contrastive::Reduction reduction = contrastive::Reduction::mean;
  std::optional<std::string> guidance_inertial;
  std::optional<std::string> guidance_skeleton;
  bool warm_start = false;

  augment::AugmentationPipeline inertial_augment = augment::default_pipeline(Modality::inertial);
  augment::AugmentationPipeline skeleton_augment = augment::default_pipeline(Modality::skeleton);
  ModelConfig model;
  nn::OptimizerSchedule optimizer;
  EvaluationConfig evaluation;

  std::string output_dir = "run";
  bool strict = true;

  /// Field-level checks (ConfigError). With `check_paths`, referenced files must exist.
  void validate(bool check_paths = true) const;
  nlohmann::json to_json() const;

  /// Resolved output directory: absolute paths as is, relative ones under the
  /// output root.
  std::filesystem::path output_path() const;
};

/// Complete default document for a dataset family and framework.
nlohmann::json default_config_json(const std::string& family, Framework framework);

/// Merges `user` over the defaults selected by its family/framework (after
/// `overrides`, a flat list of dotted-key JSON values), rejecting unknown keys.
ExperimentConfig resolve_config(const nlohmann::json& user,
                                const std::vector<std::pair<std::string, nlohmann::json>>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::pair<std::string, nlohmann::json>>& overrides = {});
ExperimentConfig config_from_json(const nlohmann::json& complete);

/// $CMKM_OUTPUT_ROOT, or "runs" when unset.
std::filesystem::path output_root();

}  // namespace cmkm
