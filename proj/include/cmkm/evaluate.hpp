#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cmkm/config.hpp"
#include "cmkm/models.hpp"
#include "cmkm/train.hpp"
#include "json.hpp"

namespace cmkm::evaluate {

struct EvalResult {
  std::string protocol;  // linear | retrieve | semisup | topk | supervised
  std::string method;    // e.g. cmc_cmkm, random, supervised
  Metric metric = Metric::accuracy;
  double value = 0;
  std::vector<double> per_class;  // per-class F1
  nlohmann::json config_echo;
  std::optional<double> fraction;  // semi-supervised label fraction
  std::optional<Index> top_k;      // top-K ablation row
  std::vector<double> repeats;     // semi-supervised per-run values
  double ci_half_width = 0;        // 95%, Student-t

  nlohmann::json to_json() const;
};

/// Fraction of equal entries.
double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

/// Per-class F1 for classes 0..num_classes-1 (num_classes < 0: inferred as
/// max label/prediction + 1). A class with no true and no predicted samples
/// scores 0.
std::vector<double> per_class_f1(const std::vector<int>& predictions, const std::vector<int>& labels,
                                 int num_classes = -1);

double compute_metric(const std::vector<int>& predictions, const std::vector<int>& labels, Metric metric,
                      int num_classes = -1);

/// Frozen-encoder features of one split. Either modality may be absent.
struct FeatureSet {
  Tensor<float> inertial;  // N x 128
  Tensor<float> skeleton;  // N x 512
  std::vector<int> labels;

  Index size() const { return static_cast<Index>(labels.size()); }
};

/// Runs the encoders in evaluation mode over `samples` (no augmentation).
/// Null encoders leave the corresponding tensor empty. Labels are taken when
/// present (-1 otherwise).
FeatureSet extract_features(ModalityEncoder* inertial, ModalityEncoder* skeleton,
                            const std::vector<data::MultimodalSample>& samples, Index batch_size = 64);

struct ProbeOptions {
  std::string modality = "multimodal";  // multimodal | inertial | skeleton
  int num_classes = 0;
  int epochs = 100;
  Index batch_size = 64;
  Index fusion_dim = 256;
  nn::OptimizerSchedule optimizer;
  std::uint64_t seed = 0;
  Metric metric = Metric::accuracy;
  bool strict = true;
};

ProbeOptions probe_options(const ExperimentConfig& config, int num_classes);

/// Trains fusion layers + linear classifier (multimodal) or a single linear
/// classifier (unimodal) on frozen training features; scores the test features.
EvalResult linear_eval(const FeatureSet& train, const FeatureSet& test, const ProbeOptions& options);

/// Predicted labels by cosine k-nearest neighbour over training features;
/// majority vote for k > 1, ties to the label of the nearest tied neighbour
/// (lowest training index among equal similarities).
std::vector<int> knn_predict(const Tensor<float>& train, const std::vector<int>& train_labels,
                             const Tensor<float>& test, Index k);

EvalResult retrieve(ModalityEncoder& encoder, const std::vector<data::MultimodalSample>& train,
                    const std::vector<data::MultimodalSample>& test, Index k, Metric metric = Metric::accuracy);

/// Mean and 95% Student-t half width (0 for a single value).
std::pair<double, double> mean_and_ci(const std::vector<double>& values);

/// For each fraction, `repeats` runs with seeds seed+r: an index subset of the
/// training features, then a fresh probe. Also runs the random-encoder and
/// end-to-end supervised baselines when the corresponding inputs are given.
struct SweepInputs {
  const FeatureSet* train = nullptr;
  const FeatureSet* test = nullptr;
  const FeatureSet* random_train = nullptr;  // random-encoder baseline, optional
  const FeatureSet* random_test = nullptr;
  const std::vector<data::MultimodalSample>* train_samples = nullptr;  // supervised baseline, optional
  const std::vector<data::MultimodalSample>* test_samples = nullptr;
  const ExperimentConfig* config = nullptr;
};

std::vector<EvalResult> semi_supervised_sweep(const SweepInputs& inputs, const std::vector<double>& fractions,
                                              int repeats, const ProbeOptions& options,
                                              const std::string& method = "ssl");

/// One cmc_cmkm pre-training + linear probe per K (K = 0: intra-modality
/// negatives only). Guidance encoders are shared by all rows.
std::vector<EvalResult> topk_ablation(const ExperimentConfig& config,
                                      const std::vector<data::MultimodalSample>& train,
                                      const std::vector<data::MultimodalSample>& test, int num_classes,
                                      const std::vector<Index>& k_values, ModalityNet& guidance_inertial,
                                      ModalityNet& guidance_skeleton, bool verbose = false);

/// Writes `results` as CSV (one row per configuration).
void write_results_csv(const std::filesystem::path& path, const std::vector<EvalResult>& results);

/// CSV with columns inertial_0.., skeleton_0.., label (labels -1 when absent).
/// Values are printed with 9 significant digits (round-trip exact for float).
void export_embeddings(const FeatureSet& features, const std::filesystem::path& out_path);

}  // namespace cmkm::evaluate
