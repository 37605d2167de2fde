// cmkm: command-line driver for pre-training, evaluation and dataset tooling.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmkm/config.hpp"
#include "cmkm/convert.hpp"
#include "cmkm/errors.hpp"
#include "cmkm/evaluate.hpp"
#include "cmkm/models.hpp"
#include "cmkm/parallel.hpp"
#include "cmkm/plot.hpp"
#include "cmkm/random.hpp"
#include "cmkm/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cmkm;

namespace {

constexpr std::uint64_t kInitStream = 303;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string manifest;
  std::string output_dir;
  std::optional<int> epochs;
  std::vector<std::string> sets;
  bool verbose = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config, "experiment config (JSON)");
  cmd->add_option("--seed", o.seed, "random seed (overrides the config)");
  cmd->add_option("--manifest", o.manifest, "dataset manifest (overrides dataset.manifest)");
  cmd->add_option("-o,--output-dir", o.output_dir, "output directory (overrides output_dir)");
  cmd->add_option("--epochs", o.epochs, "training epochs (overrides epochs)");
  cmd->add_option("--set", o.sets, "override a config field: dotted.key=value (value parsed as JSON)");
  cmd->add_flag("-v,--verbose", o.verbose, "print one line per epoch");
}

using Overrides = std::vector<std::pair<std::string, json>>;

Overrides overrides_of(const CommonOptions& o) {
  Overrides out;
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    const std::string value = s.substr(eq + 1);
    json v = json::parse(value, nullptr, false);
    if (v.is_discarded()) v = value;
    out.emplace_back(s.substr(0, eq), v);
  }
  if (!o.manifest.empty()) out.emplace_back("dataset.manifest", o.manifest);
  if (!o.output_dir.empty()) out.emplace_back("output_dir", o.output_dir);
  if (o.epochs) out.emplace_back("epochs", *o.epochs);
  if (o.seed) out.emplace_back("seed", *o.seed);
  return out;
}

ExperimentConfig resolve(const CommonOptions& o, Overrides extra = {}) {
  Overrides all = overrides_of(o);
  all.insert(all.begin(), extra.begin(), extra.end());
  if (o.config.empty()) return resolve_config(json::object(), all);
  if (!fs::exists(o.config)) throw ConfigError("config file not found: " + o.config);
  return load_config(o.config, all);
}

struct Prepared {
  data::DatasetInfo info;
  data::Split split;
};

Prepared prepare(const ExperimentConfig& c) {
  data::Dataset ds = data::load_dataset(c.manifest);
  data::preprocess(ds, c.frames, c.normalize_skeleton);
  return {ds.info, data::make_split(ds.samples, c.split)};
}

fs::path start_run(const ExperimentConfig& c) {
  const fs::path dir = c.output_path();
  fs::create_directories(dir);
  std::ofstream out(dir / "config.json");
  out << c.to_json().dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + (dir / "config.json").string());
  return dir;
}

void require_files(const std::vector<fs::path>& files) {
  for (const auto& f : files)
    if (!fs::exists(f)) throw std::runtime_error("expected artifact missing: " + f.string());
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

// Loads a pre-trained encoder and checks it against the slot and the data.
ModalityNet load_encoder(const std::optional<std::string>& path, Modality m, const InputDims& dims,
                         const std::string& key, json* metadata = nullptr) {
  if (!path) throw ConfigError(key + " is required for this evaluation");
  if (!fs::exists(*path)) throw ConfigError(key + " not found: " + *path);
  ModalityNet net = load_net(*path, metadata);
  if (net.encoder.modality() != m)
    throw ValidationError(key + ": checkpoint holds a " + augment::to_string(net.encoder.modality()) +
                          " encoder, expected " + augment::to_string(m));
  const bool ok = net.dims.frames == dims.frames &&
                  (m == Modality::inertial ? net.dims.sensor_channels == dims.sensor_channels
                                           : net.dims.joints == dims.joints && net.dims.coords == dims.coords);
  if (!ok)
    throw ValidationError(key + ": checkpoint input shape " + to_json(net.dims).dump() +
                          " does not match the dataset " + to_json(dims).dump());
  return net;
}

int cmd_pretrain_unimodal(const CommonOptions& o, const std::string& modality) {
  Overrides extra;
  if (!modality.empty()) extra.emplace_back("framework", "simclr_" + modality);
  ExperimentConfig c = resolve(o, extra);
  if (c.framework != Framework::simclr_inertial && c.framework != Framework::simclr_skeleton)
    throw ConfigError("framework: pretrain-unimodal expects simclr_inertial or simclr_skeleton, got " +
                      to_string(c.framework));
  c.validate();
  const Prepared p = prepare(c);
  const fs::path dir = start_run(c);
  auto r = train::pretrain_unimodal(c, p.split.train, {dir, o.verbose});
  require_files(r.files);
  std::printf("final loss %.6f (best epoch %d) -> %s\n", r.log.back().loss, r.best_epoch, dir.string().c_str());
  return 0;
}

int cmd_pretrain_multimodal(const CommonOptions& o) {
  ExperimentConfig c = resolve(o);
  if (c.framework != Framework::cmc && c.framework != Framework::cmc_cmkm)
    throw ConfigError("framework: pretrain-multimodal expects cmc or cmc_cmkm, got " + to_string(c.framework));
  c.validate();
  const Prepared p = prepare(c);
  const fs::path dir = start_run(c);
  auto r = train::pretrain_multimodal(c, p.split.train, {dir, o.verbose});
  require_files(r.files);
  std::printf("final loss %.6f (best epoch %d) -> %s\n", r.log.back().loss, r.best_epoch, dir.string().c_str());
  return 0;
}

int cmd_train_supervised(const CommonOptions& o) {
  ExperimentConfig c = resolve(o, {{"framework", "supervised"}});
  c.validate();
  const Prepared p = prepare(c);
  const fs::path dir = start_run(c);
  const std::string& modality = c.evaluation.modality;
  auto model = train::train_supervised(c, p.split.train, p.info.num_classes, modality, c.epochs, {dir, o.verbose});
  const Tensor<float> logits = model.logits(p.split.test, c.evaluation.batch_size);
  std::vector<int> pred(static_cast<std::size_t>(logits.dim(0)));
  for (Index i = 0; i < logits.dim(0); ++i) {
    Index best = 0;
    for (Index k = 1; k < logits.dim(1); ++k)
      if (logits(i, k) > logits(i, best)) best = k;
    pred[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  evaluate::EvalResult r;
  r.protocol = "supervised";
  r.method = "supervised_" + modality;
  r.metric = c.evaluation.metric;
  const auto labels = data::labels_of(p.split.test);
  r.value = evaluate::compute_metric(pred, labels, r.metric, p.info.num_classes);
  r.per_class = evaluate::per_class_f1(pred, labels, p.info.num_classes);
  r.config_echo = c.to_json();
  evaluate::write_results_csv(dir / "results.csv", {r});
  write_json(dir / "results.json", json::array({r.to_json()}));
  require_files({dir / ("supervised_" + modality + ".cmkt"), dir / "train_log.jsonl", dir / "results.csv"});
  std::printf("%s %s = %.4f -> %s\n", r.method.c_str(), to_string(r.metric).c_str(), r.value, dir.string().c_str());
  return 0;
}

int cmd_evaluate(const CommonOptions& o, const std::string& mode) {
  Overrides extra;
  if (!mode.empty()) extra.emplace_back("evaluation.mode", mode);
  ExperimentConfig c = resolve(o, extra);
  const auto& e = c.evaluation;
  {
    // Guidance checkpoints only matter to the top-K sweep.
    ExperimentConfig check = c;
    if (e.mode != "topk" && check.framework == Framework::cmc_cmkm) check.framework = Framework::cmc;
    check.validate();
  }
  const Prepared p = prepare(c);
  const std::vector<data::MultimodalSample>& test = e.score_on_train ? p.split.train : p.split.test;
  const InputDims dims = train::dims_of(p.split.train);
  const int classes = p.info.num_classes;
  const bool need_i = e.modality != "skeleton", need_s = e.modality != "inertial";
  std::optional<ModalityNet> net_i, net_s;
  json meta;
  if (e.mode != "topk") {
    if (need_i)
      net_i = load_encoder(e.inertial_checkpoint, Modality::inertial, dims, "evaluation.checkpoints.inertial", &meta);
    if (need_s)
      net_s = load_encoder(e.skeleton_checkpoint, Modality::skeleton, dims, "evaluation.checkpoints.skeleton",
                           need_i ? nullptr : &meta);
  }
  const fs::path dir = start_run(c);
  std::vector<evaluate::EvalResult> rows;
  std::vector<fs::path> files{dir / "results.csv", dir / "results.json"};
  // Rows are labelled with the framework that trained the checkpoints.
  std::string method = to_string(c.framework);
  if (meta.contains("config") && meta["config"].contains("framework")) method = meta["config"]["framework"];

  if (e.mode == "linear" || e.mode == "semisup") {
    auto ftr = evaluate::extract_features(net_i ? &net_i->encoder : nullptr, net_s ? &net_s->encoder : nullptr,
                                          p.split.train, e.batch_size);
    auto fte = evaluate::extract_features(net_i ? &net_i->encoder : nullptr, net_s ? &net_s->encoder : nullptr,
                                          test, e.batch_size);
    const auto opts = evaluate::probe_options(c, classes);
    if (e.mode == "linear") {
      auto r = evaluate::linear_eval(ftr, fte, opts);
      r.method = method;
      r.config_echo = c.to_json();
      rows.push_back(r);
    } else {
      evaluate::SweepInputs in;
      in.train = &ftr;
      in.test = &fte;
      evaluate::FeatureSet rtr, rte;
      std::optional<ModalityNet> ri, rs;
      if (e.baselines) {
        if (need_i) ri = make_net(Modality::inertial, c.model, dims, derive_seed(c.seed, kInitStream + 10));
        if (need_s) rs = make_net(Modality::skeleton, c.model, dims, derive_seed(c.seed, kInitStream + 11));
        rtr = evaluate::extract_features(ri ? &ri->encoder : nullptr, rs ? &rs->encoder : nullptr, p.split.train,
                                         e.batch_size);
        rte = evaluate::extract_features(ri ? &ri->encoder : nullptr, rs ? &rs->encoder : nullptr, test,
                                         e.batch_size);
        in.random_train = &rtr;
        in.random_test = &rte;
        in.train_samples = &p.split.train;
        in.test_samples = &test;
        in.config = &c;
      }
      rows = evaluate::semi_supervised_sweep(in, e.fractions, e.repeats, opts, method);
      plot::write_semisup_table(dir / "semisup_plot.csv", rows);
      plot::write_semisup_svg(dir / "semisup.svg", rows, "Semi-supervised " + to_string(e.metric));
      files.push_back(dir / "semisup_plot.csv");
      files.push_back(dir / "semisup.svg");
    }
  } else if (e.mode == "retrieve") {
    for (auto* net : {net_i ? &*net_i : nullptr, net_s ? &*net_s : nullptr}) {
      if (!net) continue;
      auto r = evaluate::retrieve(net->encoder, p.split.train, test, e.k, e.metric);
      r.method = method + "_" + augment::to_string(net->encoder.modality());
      r.config_echo = c.to_json();
      rows.push_back(r);
    }
  } else {  // topk
    ModalityNet gi = load_encoder(c.guidance_inertial, Modality::inertial, dims, "guidance_checkpoints.inertial");
    ModalityNet gs = load_encoder(c.guidance_skeleton, Modality::skeleton, dims, "guidance_checkpoints.skeleton");
    rows = evaluate::topk_ablation(c, p.split.train, test, classes, e.k_values, gi, gs, o.verbose);
  }

  evaluate::write_results_csv(dir / "results.csv", rows);
  json all = json::array();
  for (const auto& r : rows) all.push_back(r.to_json());
  write_json(dir / "results.json", all);
  require_files(files);
  for (const auto& r : rows) {
    std::printf("%-10s %-24s", r.protocol.c_str(), r.method.c_str());
    if (r.fraction) std::printf(" fraction=%-6g", *r.fraction);
    if (r.top_k) std::printf(" K=%td", *r.top_k);
    std::printf(" %s=%.4f", to_string(r.metric).c_str(), r.value);
    if (r.fraction) std::printf(" +/- %.4f", r.ci_half_width);
    std::printf("\n");
  }
  std::printf("-> %s\n", dir.string().c_str());
  return 0;
}

int cmd_export(const CommonOptions& o, const std::string& split, const std::string& out_path) {
  ExperimentConfig c = resolve(o);
  {
    ExperimentConfig check = c;
    if (check.framework == Framework::cmc_cmkm) check.framework = Framework::cmc;
    check.validate();
  }
  if (split != "train" && split != "test" && split != "all")
    throw ConfigError("--split: expected train, test or all");
  const Prepared p = prepare(c);
  const InputDims dims = train::dims_of(p.split.train);
  const auto& e = c.evaluation;
  std::optional<ModalityNet> net_i, net_s;
  if (e.modality != "skeleton")
    net_i = load_encoder(e.inertial_checkpoint, Modality::inertial, dims, "evaluation.checkpoints.inertial");
  if (e.modality != "inertial")
    net_s = load_encoder(e.skeleton_checkpoint, Modality::skeleton, dims, "evaluation.checkpoints.skeleton");
  std::vector<data::MultimodalSample> samples;
  if (split != "test") samples = p.split.train;
  if (split != "train") samples.insert(samples.end(), p.split.test.begin(), p.split.test.end());
  const fs::path dir = start_run(c);
  const fs::path target = out_path.empty() ? dir / ("embeddings_" + split + ".csv") : fs::path(out_path);
  auto f = evaluate::extract_features(net_i ? &net_i->encoder : nullptr, net_s ? &net_s->encoder : nullptr, samples,
                                      e.batch_size);
  evaluate::export_embeddings(f, target);
  require_files({target});
  std::printf("%zu embeddings -> %s\n", samples.size(), target.string().c_str());
  return 0;
}

int cmd_generate(const data::SyntheticSpec& spec, const std::string& out) {
  const data::Dataset ds = data::generate_synthetic(spec);
  data::save_dataset(ds, out);
  require_files({out});
  std::printf("%zu samples -> %s\n", ds.samples.size(), out.c_str());
  return 0;
}

int cmd_convert(const std::string& format, const std::string& source, const std::string& out, Index coords,
                int classes, const std::string& name) {
  data::Dataset ds;
  if (format == "utd_mhad")
    ds = convert::convert_utd_mhad(source);
  else if (format == "csv")
    ds = convert::convert_csv(source, coords, classes, name);
  else
    throw ConfigError("--format: expected utd_mhad or csv");
  data::save_dataset(ds, out);
  require_files({out});
  std::printf("%zu samples -> %s\n", ds.samples.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised multimodal HAR: SimCLR, CMC and CMC-CMKM pre-training and evaluation.\n"
               "Relative output directories resolve under $CMKM_OUTPUT_ROOT (default ./runs)."};
  app.require_subcommand(1);

  CommonOptions uni_o, multi_o, sup_o, eval_o, exp_o;
  std::string uni_modality, eval_mode, exp_split = "test", exp_out;

  auto* uni = app.add_subcommand("pretrain-unimodal", "stage 1: SimCLR on one modality");
  add_common(uni, uni_o);
  uni->add_option("--modality", uni_modality, "inertial or skeleton (sets framework=simclr_<modality>)")
      ->check(CLI::IsMember({"inertial", "skeleton"}));

  auto* multi = app.add_subcommand("pretrain-multimodal", "stage 2: CMC or CMC-CMKM");
  add_common(multi, multi_o);

  auto* sup = app.add_subcommand("train-supervised", "end-to-end supervised baseline");
  add_common(sup, sup_o);

  auto* ev = app.add_subcommand("evaluate", "linear probe, retrieval, semi-supervised sweep or top-K ablation");
  ev->alias("finetune");
  add_common(ev, eval_o);
  ev->add_option("--mode", eval_mode, "linear | retrieve | semisup | topk (overrides evaluation.mode)")
      ->check(CLI::IsMember({"linear", "retrieve", "semisup", "topk"}));

  auto* ex = app.add_subcommand("export-embeddings", "write frozen-encoder features as CSV");
  add_common(ex, exp_o);
  ex->add_option("--split", exp_split, "train | test | all");
  ex->add_option("--out", exp_out, "CSV path (default <output>/embeddings_<split>.csv)");

  data::SyntheticSpec syn;
  std::string syn_out, syn_config;
  auto* gen = app.add_subcommand("generate-synthetic", "write a synthetic multimodal dataset");
  gen->add_option("--out", syn_out, "manifest path to write")->required();
  gen->add_option("-c,--config", syn_config, "JSON object with any of the options below");
  gen->add_option("--seed", syn.seed, "generator seed");
  gen->add_option("--classes", syn.num_classes, "number of classes");
  gen->add_option("--per-class", syn.per_class, "samples per class");
  gen->add_option("--frames", syn.frames, "frames per recording");
  gen->add_option("--sensor-channels", syn.sensor_channels, "inertial channels");
  gen->add_option("--joints", syn.joints, "skeleton joints");
  gen->add_option("--coords", syn.coords, "coordinates per joint (2 or 3)");
  gen->add_option("--noise", syn.noise, "gaussian noise std");
  gen->add_option("--phase-jitter", syn.phase_jitter, "max random phase offset (radians)");
  gen->add_option("--subjects", syn.subjects, "subjects, assigned round-robin");
  gen->add_option("--amplitude", syn.amplitude, "class-signal scale");

  std::string conv_format, conv_source, conv_out, conv_name = "custom", conv_config;
  Index conv_coords = 3;
  int conv_classes = 0;
  std::uint64_t conv_seed = 0;
  auto* conv = app.add_subcommand("convert-dataset", "convert raw recordings into a manifest");
  conv->add_option("--format", conv_format, "utd_mhad | csv")->required();
  conv->add_option("--source", conv_source, "UTD-MHAD directory or CSV index")->required();
  conv->add_option("--out", conv_out, "manifest path to write")->required();
  conv->add_option("--coords", conv_coords, "skeleton coordinates per joint (csv)");
  conv->add_option("--classes", conv_classes, "number of classes (csv)");
  conv->add_option("--name", conv_name, "dataset name (csv)");
  conv->add_option("-c,--config", conv_config, "unused; accepted for a uniform interface");
  conv->add_option("--seed", conv_seed, "unused; conversion is deterministic");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*uni) return cmd_pretrain_unimodal(uni_o, uni_modality);
    if (*multi) return cmd_pretrain_multimodal(multi_o);
    if (*sup) return cmd_train_supervised(sup_o);
    if (*ev) return cmd_evaluate(eval_o, eval_mode);
    if (*ex) return cmd_export(exp_o, exp_split, exp_out);
    if (*gen) {
      data::SyntheticSpec spec;
      if (!syn_config.empty()) {
        std::ifstream in(syn_config);
        if (!in) throw ConfigError("config file not found: " + syn_config);
        const json j = json::parse(in);
        for (const auto& [k, v] : j.items()) {
          if (k == "seed") spec.seed = v.get<std::uint64_t>();
          else if (k == "num_classes") spec.num_classes = v.get<int>();
          else if (k == "per_class") spec.per_class = v.get<int>();
          else if (k == "frames") spec.frames = v.get<Index>();
          else if (k == "sensor_channels") spec.sensor_channels = v.get<Index>();
          else if (k == "joints") spec.joints = v.get<Index>();
          else if (k == "coords") spec.coords = v.get<Index>();
          else if (k == "noise") spec.noise = v.get<double>();
          else if (k == "phase_jitter") spec.phase_jitter = v.get<double>();
          else if (k == "subjects") spec.subjects = v.get<int>();
          else if (k == "amplitude") spec.amplitude = v.get<double>();
          else throw ConfigError("unknown config key: " + k);
        }
      }
      // Flags given on the command line win over the file.
      if (gen->count("--seed")) spec.seed = syn.seed;
      if (gen->count("--classes")) spec.num_classes = syn.num_classes;
      if (gen->count("--per-class")) spec.per_class = syn.per_class;
      if (gen->count("--frames")) spec.frames = syn.frames;
      if (gen->count("--sensor-channels")) spec.sensor_channels = syn.sensor_channels;
      if (gen->count("--joints")) spec.joints = syn.joints;
      if (gen->count("--coords")) spec.coords = syn.coords;
      if (gen->count("--noise")) spec.noise = syn.noise;
      if (gen->count("--phase-jitter")) spec.phase_jitter = syn.phase_jitter;
      if (gen->count("--subjects")) spec.subjects = syn.subjects;
      if (gen->count("--amplitude")) spec.amplitude = syn.amplitude;
      return cmd_generate(spec, syn_out);
    }
    if (*conv) return cmd_convert(conv_format, conv_source, conv_out, conv_coords, conv_classes, conv_name);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
