#include "cmkm/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cmkm/errors.hpp"

namespace cmkm {

using nlohmann::json;
namespace fs = std::filesystem;

Framework parse_framework(const std::string& s) {
  if (s == "simclr_inertial") return Framework::simclr_inertial;
  if (s == "simclr_skeleton") return Framework::simclr_skeleton;
  if (s == "cmc") return Framework::cmc;
  if (s == "cmc_cmkm") return Framework::cmc_cmkm;
  if (s == "supervised") return Framework::supervised;
  throw ConfigError("framework: unknown value '" + s + "'");
}

std::string to_string(Framework f) {
  switch (f) {
    case Framework::simclr_inertial: return "simclr_inertial";
    case Framework::simclr_skeleton: return "simclr_skeleton";
    case Framework::cmc: return "cmc";
    case Framework::cmc_cmkm: return "cmc_cmkm";
    case Framework::supervised: return "supervised";
  }
  return "cmc";
}

Metric parse_metric(const std::string& s) {
  if (s == "accuracy") return Metric::accuracy;
  if (s == "f1_macro") return Metric::f1_macro;
  throw ConfigError("evaluation.metric: unknown value '" + s + "'");
}

std::string to_string(Metric m) { return m == Metric::accuracy ? "accuracy" : "f1_macro"; }

fs::path output_root() {
  const char* env = std::getenv("CMKM_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path ExperimentConfig::output_path() const {
  const fs::path p(output_dir);
  return p.is_absolute() ? p : output_root() / p;
}

namespace {

struct FamilyDefaults {
  Index batch_size;
  double tau;
  int epochs;
};

FamilyDefaults family_defaults(const std::string& family, Framework f) {
  const bool utd = family == "utd";
  switch (f) {
    case Framework::simclr_inertial: return utd ? FamilyDefaults{128, 0.05, 300} : FamilyDefaults{64, 0.2, 300};
    case Framework::simclr_skeleton: return utd ? FamilyDefaults{32, 0.5, 300} : FamilyDefaults{128, 0.2, 300};
    case Framework::cmc:
    case Framework::cmc_cmkm: return utd ? FamilyDefaults{64, 0.1, 100} : FamilyDefaults{128, 0.1, 100};
    case Framework::supervised: return utd ? FamilyDefaults{64, 0.1, 100} : FamilyDefaults{128, 0.1, 100};
  }
  return {64, 0.1, 100};
}

json strengths_json(const augment::Strengths& s) {
  return {{"jitter", s.jitter},
          {"scale", s.scale},
          {"crop_min_fraction", s.crop_min_fraction},
          {"shear", s.shear},
          {"permute_segments", s.permute_segments}};
}

json optional_path(const std::optional<std::string>& p) { return p ? json(*p) : json(nullptr); }

// Recursively rejects keys of `user` that `schema` does not have.
void check_keys(const json& user, const json& schema, const std::string& where) {
  if (!user.is_object()) return;
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!schema.contains(key)) throw ConfigError("unknown config key: " + path);
    const json& s = schema.at(key);
    if (s.is_object()) {
      if (!value.is_object() && !value.is_null())
        throw ConfigError(path + ": expected an object");
      check_keys(value, s, path);
    }
  }
}

void merge_into(json& base, const json& user) {
  for (const auto& [key, value] : user.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object()) merge_into(base[key], value);
    else if (!value.is_null() || !base[key].is_object()) base[key] = value;
  }
}

void set_dotted(json& doc, const std::string& key, const json& value) {
  json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("empty override key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError("override " + key + ": " + parts[i] + " is not an object");
    node = &next;
  }
  (*node)[parts.back()] = value;
}

template <typename T>
T field(const json& doc, const std::string& dotted) {
  const json* node = &doc;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw ConfigError("missing config key: " + dotted);
    node = &node->at(part);
  }
  try {
    return node->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(dotted + ": wrong type (" + std::string(e.what()) + ")");
  }
}

std::optional<std::string> optional_field(const json& doc, const std::string& dotted) {
  const json v = field<json>(doc, dotted);
  if (v.is_null()) return std::nullopt;
  if (!v.is_string()) throw ConfigError(dotted + ": expected a path string or null");
  return v.get<std::string>();
}

augment::AugmentationPipeline pipeline_from(const json& doc, Modality m) {
  const std::string name = augment::to_string(m);
  augment::AugmentationPipeline p;
  p.modality = m;
  p.ops = field<std::vector<std::string>>(doc, "augmentations." + name);
  p.apply_prob = field<double>(doc, "augmentations.apply_prob");
  const auto always = field<std::vector<std::string>>(doc, "augmentations.always_apply." + name);
  p.always_apply = {always.begin(), always.end()};
  p.strengths.jitter = field<double>(doc, "augmentations.strengths.jitter");
  p.strengths.scale = field<double>(doc, "augmentations.strengths.scale");
  p.strengths.crop_min_fraction = field<double>(doc, "augmentations.strengths.crop_min_fraction");
  p.strengths.shear = field<double>(doc, "augmentations.strengths.shear");
  p.strengths.permute_segments = field<Index>(doc, "augmentations.strengths.permute_segments");
  return p;
}

}  // namespace

json default_config_json(const std::string& family, Framework framework) {
  if (family != "utd" && family != "mmact")
    throw ConfigError("dataset.family: expected \"utd\" or \"mmact\", got '" + family + "'");
  const bool utd = family == "utd";
  const FamilyDefaults d = family_defaults(family, framework);
  ExperimentConfig c;
  c.family = family;
  c.split.protocol = utd ? data::Protocol::utd_cross_subject : data::Protocol::mmact_cross_subject;
  c.framework = framework;
  c.batch_size = d.batch_size;
  c.tau = d.tau;
  c.epochs = d.epochs;
  if (!utd) c.inertial_augment.ops = {"jitter", "scale", "permute", "channel_shuffle"};
  c.evaluation.metric = utd ? Metric::accuracy : Metric::f1_macro;
  c.evaluation.batch_size = d.batch_size;
  return c.to_json();
}

json ExperimentConfig::to_json() const {
  json j;
  j["dataset"] = {{"manifest", manifest},
                  {"family", family},
                  {"protocol", data::to_string(split.protocol)},
                  {"train_ids", split.train_ids},
                  {"test_ids", split.test_ids},
                  {"frames", frames},
                  {"normalize_skeleton", normalize_skeleton}};
  j["framework"] = to_string(framework);
  j["batch_size"] = batch_size;
  j["tau"] = tau;
  j["top_k"] = top_k;
  j["epochs"] = epochs;
  j["seed"] = seed;
  j["intra_negatives"] = intra_negatives;
  j["reduction"] = reduction == contrastive::Reduction::mean ? "mean" : "sum";
  j["guidance_checkpoints"] = {{"inertial", optional_path(guidance_inertial)},
                               {"skeleton", optional_path(guidance_skeleton)}};
  j["warm_start"] = warm_start;
  j["augmentations"] = {
      {"inertial", inertial_augment.ops},
      {"skeleton", skeleton_augment.ops},
      {"apply_prob", inertial_augment.apply_prob},
      {"always_apply", {{"inertial", inertial_augment.always_apply}, {"skeleton", skeleton_augment.always_apply}}},
      {"strengths", strengths_json(inertial_augment.strengths)}};
  j["encoders"] = cmkm::to_json(model);
  j["optimizer"] = {{"lr", optimizer.lr},
                    {"plateau_patience_epochs", optimizer.plateau_patience_epochs},
                    {"reduction_factor", optimizer.reduction_factor},
                    {"max_reductions", optimizer.max_reductions},
                    {"improvement_threshold", optimizer.improvement_threshold}};
  j["evaluation"] = {{"mode", evaluation.mode},
                     {"modality", evaluation.modality},
                     {"metric", to_string(evaluation.metric)},
                     {"epochs", evaluation.epochs},
                     {"batch_size", evaluation.batch_size},
                     {"k", evaluation.k},
                     {"fractions", evaluation.fractions},
                     {"repeats", evaluation.repeats},
                     {"k_values", evaluation.k_values},
                     {"baselines", evaluation.baselines},
                     {"score_on_train", evaluation.score_on_train},
                     {"checkpoints",
                      {{"inertial", optional_path(evaluation.inertial_checkpoint)},
                       {"skeleton", optional_path(evaluation.skeleton_checkpoint)}}}};
  j["output_dir"] = output_dir;
  j["strict"] = strict;
  return j;
}

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig c;
  c.manifest = field<std::string>(doc, "dataset.manifest");
  c.family = field<std::string>(doc, "dataset.family");
  try {
    c.split.protocol = data::parse_protocol(field<std::string>(doc, "dataset.protocol"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("dataset.protocol: ") + e.what());
  }
  const auto train_ids = field<std::vector<int>>(doc, "dataset.train_ids");
  const auto test_ids = field<std::vector<int>>(doc, "dataset.test_ids");
  c.split.train_ids = {train_ids.begin(), train_ids.end()};
  c.split.test_ids = {test_ids.begin(), test_ids.end()};
  c.frames = field<Index>(doc, "dataset.frames");
  c.normalize_skeleton = field<bool>(doc, "dataset.normalize_skeleton");

  c.framework = parse_framework(field<std::string>(doc, "framework"));
  c.batch_size = field<Index>(doc, "batch_size");
  c.tau = field<double>(doc, "tau");
  c.top_k = field<Index>(doc, "top_k");
  c.epochs = field<int>(doc, "epochs");
  c.seed = field<std::uint64_t>(doc, "seed");
  c.intra_negatives = field<bool>(doc, "intra_negatives");
  const auto reduction = field<std::string>(doc, "reduction");
  if (reduction != "mean" && reduction != "sum") throw ConfigError("reduction: expected \"mean\" or \"sum\"");
  c.reduction = reduction == "mean" ? contrastive::Reduction::mean : contrastive::Reduction::sum;
  c.guidance_inertial = optional_field(doc, "guidance_checkpoints.inertial");
  c.guidance_skeleton = optional_field(doc, "guidance_checkpoints.skeleton");
  c.warm_start = field<bool>(doc, "warm_start");

  c.inertial_augment = pipeline_from(doc, Modality::inertial);
  c.skeleton_augment = pipeline_from(doc, Modality::skeleton);
  try {
    c.model = model_config_from_json(field<json>(doc, "encoders"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("encoders: ") + e.what());
  }
  c.optimizer.lr = field<double>(doc, "optimizer.lr");
  c.optimizer.plateau_patience_epochs = field<int>(doc, "optimizer.plateau_patience_epochs");
  c.optimizer.reduction_factor = field<double>(doc, "optimizer.reduction_factor");
  c.optimizer.max_reductions = field<int>(doc, "optimizer.max_reductions");
  c.optimizer.improvement_threshold = field<double>(doc, "optimizer.improvement_threshold");

  auto& e = c.evaluation;
  e.mode = field<std::string>(doc, "evaluation.mode");
  e.modality = field<std::string>(doc, "evaluation.modality");
  e.metric = parse_metric(field<std::string>(doc, "evaluation.metric"));
  e.epochs = field<int>(doc, "evaluation.epochs");
  e.batch_size = field<Index>(doc, "evaluation.batch_size");
  e.k = field<Index>(doc, "evaluation.k");
  e.fractions = field<std::vector<double>>(doc, "evaluation.fractions");
  e.repeats = field<int>(doc, "evaluation.repeats");
  e.k_values = field<std::vector<Index>>(doc, "evaluation.k_values");
  e.baselines = field<bool>(doc, "evaluation.baselines");
  e.score_on_train = field<bool>(doc, "evaluation.score_on_train");
  e.inertial_checkpoint = optional_field(doc, "evaluation.checkpoints.inertial");
  e.skeleton_checkpoint = optional_field(doc, "evaluation.checkpoints.skeleton");

  c.output_dir = field<std::string>(doc, "output_dir");
  c.strict = field<bool>(doc, "strict");
  return c;
}

ExperimentConfig resolve_config(const json& user_in, const std::vector<std::pair<std::string, json>>& overrides) {
  json user = user_in.is_null() ? json::object() : user_in;
  if (!user.is_object()) throw ConfigError("config root must be an object");
  for (const auto& [key, value] : overrides) set_dotted(user, key, value);

  std::string family = "utd";
  Framework framework = Framework::cmc_cmkm;
  if (user.contains("dataset") && user["dataset"].is_object() && user["dataset"].contains("family"))
    family = field<std::string>(user, "dataset.family");
  if (user.contains("framework")) framework = parse_framework(field<std::string>(user, "framework"));

  json merged = default_config_json(family, framework);
  check_keys(user, merged, "");
  merge_into(merged, user);
  return config_from_json(merged);
}

ExperimentConfig load_config(const fs::path& path, const std::vector<std::pair<std::string, json>>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  json user;
  try {
    in >> user;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return resolve_config(user, overrides);
}

void ExperimentConfig::validate(bool check_paths) const {
  if (check_paths) {
    if (manifest.empty()) throw ConfigError("dataset.manifest is required");
    if (!fs::exists(manifest)) throw ConfigError("dataset.manifest not found: " + manifest);
  }
  if (frames < 1) throw ConfigError("dataset.frames must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if ((framework == Framework::simclr_inertial || framework == Framework::simclr_skeleton) && batch_size < 2)
    throw ConfigError("batch_size must be >= 2 for " + to_string(framework) + " (NT-Xent needs negatives)");
  if (!(tau > 0)) throw ConfigError("tau must be > 0");
  if (top_k < 0) throw ConfigError("top_k must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (framework == Framework::cmc_cmkm) {
    if (!guidance_inertial || !guidance_skeleton) throw ConfigError("cmc_cmkm requires guidance_checkpoints");
    if (check_paths) {
      if (!fs::exists(*guidance_inertial))
        throw ConfigError("guidance_checkpoints.inertial not found: " + *guidance_inertial);
      if (!fs::exists(*guidance_skeleton))
        throw ConfigError("guidance_checkpoints.skeleton not found: " + *guidance_skeleton);
    }
  }
  if (warm_start && (!guidance_inertial || !guidance_skeleton))
    throw ConfigError("warm_start requires guidance_checkpoints");
  try {
    optimizer.validate();
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  inertial_augment.validate();
  skeleton_augment.validate();
  const auto& e = evaluation;
  if (e.mode != "linear" && e.mode != "retrieve" && e.mode != "semisup" && e.mode != "topk")
    throw ConfigError("evaluation.mode: expected linear, retrieve, semisup or topk");
  if (e.modality != "multimodal" && e.modality != "inertial" && e.modality != "skeleton")
    throw ConfigError("evaluation.modality: expected multimodal, inertial or skeleton");
  if (e.epochs < 1) throw ConfigError("evaluation.epochs must be >= 1");
  if (e.batch_size < 1) throw ConfigError("evaluation.batch_size must be >= 1");
  if (e.k < 1) throw ConfigError("evaluation.k must be >= 1");
  if (e.repeats < 1) throw ConfigError("evaluation.repeats must be >= 1");
  for (double f : e.fractions)
    if (!(f > 0 && f <= 1)) throw ConfigError("evaluation.fractions must lie in (0, 1]");
  for (Index k : e.k_values)
    if (k < 0) throw ConfigError("evaluation.k_values must be >= 0");
}

}  // namespace cmkm
