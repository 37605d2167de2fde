#include "cmkm/train.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <limits>

#include "cmkm/errors.hpp"
#include "cmkm/nn/optim.hpp"

namespace cmkm::train {

using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kShuffleStream = 101;
constexpr std::uint64_t kAugmentStream = 202;
constexpr std::uint64_t kInitStream = 303;

Exec exec_of(const ExperimentConfig& c) { return c.strict ? Exec::serial : Exec::parallel; }

Tensor<float> concat_rows(const Tensor<float>& a, const Tensor<float>& b) {
  Shape s = a.shape();
  s[0] += b.dim(0);
  Tensor<float> out(s);
  std::copy(a.values().begin(), a.values().end(), out.data());
  std::copy(b.values().begin(), b.values().end(), out.data() + a.size());
  return out;
}

template <typename T>
void append(std::vector<T>& a, const std::vector<T>& b) {
  a.insert(a.end(), b.begin(), b.end());
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(const RunOutput& out, const EpochRecord& r) {
  if (out.verbose)
    std::fprintf(stderr, "[%s] epoch %d loss %.6f lr %.2e (%.1fs)\n", r.framework.c_str(), r.epoch, r.loss,
                 r.lr, r.wall_time);
}

json run_metadata(const ExperimentConfig& config, int epoch, const std::vector<EpochRecord>& log) {
  std::vector<double> curve;
  for (const auto& r : log) curve.push_back(r.loss);
  return {{"config", config.to_json()}, {"epoch", epoch}, {"seed", config.seed}, {"loss_curve", curve}};
}

void copy_state(const nn::StateList<float>& from, const nn::StateList<float>& to) {
  if (from.size() != to.size()) throw ValidationError("warm start: parameter lists differ");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].name != to[i].name || from[i].value->shape() != to[i].value->shape())
      throw ValidationError("warm start: parameter '" + to[i].name + "' does not match");
    *to[i].value = *from[i].value;
  }
}

// Epoch bookkeeping shared by the training loops.
class EpochTracker {
 public:
  EpochTracker(const ExperimentConfig& config, std::string framework)
      : scheduler_(config.optimizer), framework_(std::move(framework)), start_(Clock::now()) {}

  // Records the epoch, advances the schedule; returns true when this epoch is the best so far.
  bool finish(int epoch, double loss_sum, double count, double lr, double f2s, double s2f, double mined) {
    EpochRecord r;
    r.framework = framework_;
    r.epoch = epoch;
    r.loss = count > 0 ? loss_sum / count : 0.0;
    r.lr = lr;
    r.wall_time = seconds_since(start_);
    r.first_to_second = count > 0 ? f2s / count : 0.0;
    r.second_to_first = count > 0 ? s2f / count : 0.0;
    r.mean_mined_similarity = count > 0 ? mined / count : 0.0;
    log.push_back(r);
    scheduler_.step(r.loss);
    const bool best = r.loss < best_loss_;
    if (best) {
      best_loss_ = r.loss;
      best_epoch = epoch;
    }
    return best;
  }
  double next_lr() const { return scheduler_.lr(); }

  std::vector<EpochRecord> log;
  int best_epoch = 0;

 private:
  nn::PlateauScheduler scheduler_;
  std::string framework_;
  Clock::time_point start_;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

}  // namespace

json EpochRecord::to_json() const {
  return {{"framework", framework},
          {"epoch", epoch},
          {"loss", loss},
          {"lr", lr},
          {"wall_time", wall_time},
          {"first_to_second", first_to_second},
          {"second_to_first", second_to_first},
          {"mean_mined_similarity", mean_mined_similarity}};
}

void write_log(const fs::path& path, const std::vector<EpochRecord>& log) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write log: " + path.string());
  for (const auto& r : log) out << r.to_json().dump() << '\n';
}

std::vector<EpochRecord> read_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open log: " + path.string());
  std::vector<EpochRecord> log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    EpochRecord r;
    r.framework = j.at("framework").get<std::string>();
    r.epoch = j.at("epoch").get<int>();
    r.loss = j.at("loss").get<double>();
    r.lr = j.at("lr").get<double>();
    r.wall_time = j.at("wall_time").get<double>();
    r.first_to_second = j.value("first_to_second", 0.0);
    r.second_to_first = j.value("second_to_first", 0.0);
    r.mean_mined_similarity = j.value("mean_mined_similarity", 0.0);
    log.push_back(r);
  }
  return log;
}

InputDims dims_of(const std::vector<data::MultimodalSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("empty sample list");
  const auto& s = samples.front();
  return {s.inertial.frames(), s.inertial.channels(), s.skeleton.joints(), s.skeleton.coords()};
}

std::vector<std::vector<Index>> epoch_batches(Index n, Index batch_size, Index min_batch, std::uint64_t seed,
                                              int epoch) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(derive_seed(derive_seed(seed, kShuffleStream), static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<Index>> out;
  for (Index b = 0; b < n; b += batch_size) {
    const Index e = std::min(n, b + batch_size);
    if (e - b < min_batch) break;
    out.emplace_back(order.begin() + b, order.begin() + e);
  }
  return out;
}

Tensor<float> augmented_batch(const std::vector<data::MultimodalSample>& samples, const std::vector<Index>& rows,
                              const augment::AugmentationPipeline& pipeline, std::uint64_t seed, int view,
                              int epoch, Exec exec) {
  pipeline.validate();
  const bool inertial = pipeline.modality == Modality::inertial;
  Tensor<float> out = inertial ? data::stack_inertial<float>(samples, rows) : data::stack_skeleton<float>(samples, rows);
  if (rows.empty()) return out;
  const Index stride = out.size() / out.dim(0);
  const std::uint64_t base =
      derive_seed(derive_seed(derive_seed(seed, kAugmentStream + static_cast<std::uint64_t>(view)),
                              static_cast<std::uint64_t>(epoch)),
                  inertial ? 0 : 1);
  parallel_for(exec, static_cast<Index>(rows.size()), [&](Index r) {
    const auto& s = samples[static_cast<std::size_t>(rows[r])];
    const Tensor<float>& x = inertial ? s.inertial.values : s.skeleton.values;
    const Tensor<float> y = pipeline.apply(x, derive_seed(base, static_cast<std::uint64_t>(rows[r])));
    std::copy(y.values().begin(), y.values().end(), out.data() + r * stride);
  });
  return out;
}

// ---------------------------------------------------------------- stage 1

UnimodalResult pretrain_unimodal(const ExperimentConfig& config, const std::vector<data::MultimodalSample>& train,
                                 const RunOutput& out) {
  if (config.framework != Framework::simclr_inertial && config.framework != Framework::simclr_skeleton)
    throw ConfigError("pretrain_unimodal needs framework simclr_inertial or simclr_skeleton");
  if (config.batch_size < 2) throw ConfigError("batch_size must be >= 2 for NT-Xent");
  if (config.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (train.size() < 2) throw ConfigError("NT-Xent needs at least 2 training samples");
  const Exec exec = exec_of(config);
  ExecScope scope(exec);

  const Modality m = config.framework == Framework::simclr_inertial ? Modality::inertial : Modality::skeleton;
  const auto& pipeline = m == Modality::inertial ? config.inertial_augment : config.skeleton_augment;
  const std::string name = augment::to_string(m);

  UnimodalResult result;
  result.net = make_net(m, config.model, dims_of(train), derive_seed(config.seed, kInitStream + (m == Modality::inertial ? 0 : 1)));
  ModalityNet& net = result.net;
  nn::Adam<float> adam(net.state(), config.optimizer.lr);
  EpochTracker tracker(config, to_string(config.framework));
  const contrastive::Temperature tau(config.tau);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    net.encoder.set_training(true);
    double loss_sum = 0, f2s = 0, s2f = 0, count = 0;
    for (const auto& rows : epoch_batches(static_cast<Index>(train.size()), config.batch_size, 2, config.seed, epoch)) {
      const Index n = static_cast<Index>(rows.size());
      const Tensor<float> x = concat_rows(augmented_batch(train, rows, pipeline, config.seed, 0, epoch, exec),
                                          augmented_batch(train, rows, pipeline, config.seed, 1, epoch, exec));
      const Tensor<float> z = net.head.forward(net.encoder.forward(x));
      const auto r = contrastive::nt_xent(z.slice_rows(0, n), z.slice_rows(n, 2 * n), tau, config.reduction, exec);
      adam.zero_grad();
      net.encoder.backward(net.head.backward(concat_rows(r.grad_first, r.grad_second)));
      adam.step();
      loss_sum += static_cast<double>(r.loss) * static_cast<double>(n);
      f2s += static_cast<double>(r.first_to_second) * static_cast<double>(n);
      s2f += static_cast<double>(r.second_to_first) * static_cast<double>(n);
      count += static_cast<double>(n);
    }
    const bool best = tracker.finish(epoch, loss_sum, count, adam.lr(), f2s, s2f, 0.0);
    adam.set_lr(tracker.next_lr());
    report(out, tracker.log.back());
    if (best && !out.dir.empty()) {
      net.encoder.set_training(false);
      save_net(out.dir / (name + "_best.cmkt"), net, run_metadata(config, epoch, tracker.log));
    }
  }
  net.encoder.set_training(false);
  result.log = tracker.log;
  result.best_epoch = tracker.best_epoch;
  if (!out.dir.empty()) {
    const fs::path final_path = out.dir / (name + "_final.cmkt");
    save_net(final_path, net, run_metadata(config, config.epochs, result.log));
    write_log(out.dir / "train_log.jsonl", result.log);
    result.files = {final_path, out.dir / (name + "_best.cmkt"), out.dir / "train_log.jsonl"};
  }
  return result;
}

// ---------------------------------------------------------------- stage 2

MultimodalResult pretrain_multimodal(const ExperimentConfig& config, const std::vector<data::MultimodalSample>& train,
                                     const RunOutput& out) {
  if (config.framework != Framework::cmc_cmkm) return pretrain_multimodal(config, train, nullptr, nullptr, out);
  if (!config.guidance_inertial || !config.guidance_skeleton)
    throw ConfigError("cmc_cmkm requires guidance_checkpoints");
  ModalityNet gi = load_net(*config.guidance_inertial);
  ModalityNet gs = load_net(*config.guidance_skeleton);
  return pretrain_multimodal(config, train, &gi, &gs, out);
}

MultimodalResult pretrain_multimodal(const ExperimentConfig& config, const std::vector<data::MultimodalSample>& train,
                                     ModalityNet* guidance_inertial, ModalityNet* guidance_skeleton,
                                     const RunOutput& out) {
  const bool cmkm = config.framework == Framework::cmc_cmkm;
  if (!cmkm && config.framework != Framework::cmc)
    throw ConfigError("pretrain_multimodal needs framework cmc or cmc_cmkm");
  if (cmkm && (!guidance_inertial || !guidance_skeleton))
    throw ConfigError("cmc_cmkm requires guidance_checkpoints");
  if (config.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (train.empty()) throw ConfigError("empty training set");
  const Exec exec = exec_of(config);
  ExecScope scope(exec);
  const InputDims dims = dims_of(train);

  if (cmkm) {
    if (guidance_inertial->encoder.modality() != Modality::inertial ||
        guidance_skeleton->encoder.modality() != Modality::skeleton)
      throw ConfigError("guidance_checkpoints: expected an inertial and a skeleton encoder");
    const InputDims gi = guidance_inertial->dims, gs = guidance_skeleton->dims;
    if (gi.sensor_channels != dims.sensor_channels || gs.frames != dims.frames || gs.joints != dims.joints ||
        gs.coords != dims.coords)
      throw ConfigError("guidance_checkpoints: encoder input shapes do not match the dataset");
    guidance_inertial->encoder.set_training(false);
    guidance_skeleton->encoder.set_training(false);
  }

  MultimodalResult result;
  result.inertial = make_net(Modality::inertial, config.model, dims, derive_seed(config.seed, kInitStream + 10));
  result.skeleton = make_net(Modality::skeleton, config.model, dims, derive_seed(config.seed, kInitStream + 11));
  ModalityNet& ni = result.inertial;
  ModalityNet& ns = result.skeleton;
  if (config.warm_start) {
    if (!guidance_inertial || !guidance_skeleton) {
      if (!config.guidance_inertial || !config.guidance_skeleton)
        throw ConfigError("warm_start requires guidance_checkpoints");
      load_state(*config.guidance_inertial, ni.state());
      load_state(*config.guidance_skeleton, ns.state());
    } else {
      copy_state(guidance_inertial->state(), ni.state());
      copy_state(guidance_skeleton->state(), ns.state());
    }
  }

  nn::StateList<float> params = ni.state();
  append(params, ns.state());
  nn::Adam<float> adam(params, config.optimizer.lr);
  EpochTracker tracker(config, to_string(config.framework));
  const contrastive::Temperature tau(config.tau);
  Index min_batch = 1;
  if (cmkm && (config.top_k >= 1 || config.intra_negatives)) min_batch = std::max<Index>(2, config.top_k + 1);
  const auto n_train = static_cast<Index>(train.size());
  if (n_train < min_batch)
    throw ConfigError("top_k = " + std::to_string(config.top_k) + " needs at least " + std::to_string(min_batch) +
                      " training samples");

  auto save_pair = [&](const std::string& tag, int epoch) {
    ni.encoder.set_training(false);
    ns.encoder.set_training(false);
    const json meta = run_metadata(config, epoch, tracker.log);
    save_net(out.dir / ("inertial_" + tag + ".cmkt"), ni, meta);
    save_net(out.dir / ("skeleton_" + tag + ".cmkt"), ns, meta);
  };

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    ni.encoder.set_training(true);
    ns.encoder.set_training(true);
    double loss_sum = 0, f2s = 0, s2f = 0, mined = 0, count = 0;
    for (const auto& rows : epoch_batches(n_train, config.batch_size, min_batch, config.seed, epoch)) {
      const Index n = static_cast<Index>(rows.size());
      const Tensor<float> xi = augmented_batch(train, rows, config.inertial_augment, config.seed, 0, epoch, exec);
      const Tensor<float> xs = augmented_batch(train, rows, config.skeleton_augment, config.seed, 1, epoch, exec);
      contrastive::ProjectionBatch<float> batch{ni.head.forward(ni.encoder.forward(xi)),
                                                ns.head.forward(ns.encoder.forward(xs))};
      contrastive::LossResult<float> r;
      if (cmkm) {
        const auto guidance = contrastive::guidance_from_encoders(guidance_inertial->encoder,
                                                                  guidance_skeleton->encoder, xi, xs, exec);
        r = contrastive::cmkm_loss(batch, guidance, config.top_k, tau, config.intra_negatives, config.reduction, exec);
      } else {
        r = contrastive::cmc_loss(batch, tau, config.reduction, exec);
      }
      adam.zero_grad();
      ni.encoder.backward(ni.head.backward(r.grad_first));
      ns.encoder.backward(ns.head.backward(r.grad_second));
      adam.step();
      const double w = static_cast<double>(n);
      loss_sum += static_cast<double>(r.loss) * w;
      f2s += static_cast<double>(r.first_to_second) * w;
      s2f += static_cast<double>(r.second_to_first) * w;
      mined += static_cast<double>(r.mean_mined_similarity) * w;
      count += w;
    }
    const bool best = tracker.finish(epoch, loss_sum, count, adam.lr(), f2s, s2f, mined);
    adam.set_lr(tracker.next_lr());
    report(out, tracker.log.back());
    if (best && !out.dir.empty()) save_pair("best", epoch);
  }
  ni.encoder.set_training(false);
  ns.encoder.set_training(false);
  result.log = tracker.log;
  result.best_epoch = tracker.best_epoch;
  if (!out.dir.empty()) {
    save_pair("final", config.epochs);
    write_log(out.dir / "train_log.jsonl", result.log);
    for (const char* f : {"inertial_final.cmkt", "skeleton_final.cmkt", "inertial_best.cmkt", "skeleton_best.cmkt",
                          "train_log.jsonl"})
      result.files.push_back(out.dir / f);
  }
  return result;
}

// ---------------------------------------------------------------- supervised

nn::StateList<float> SupervisedModel::state() {
  nn::StateList<float> s;
  if (inertial) inertial->encoder.collect("inertial.encoder", s);
  if (skeleton) skeleton->encoder.collect("skeleton.encoder", s);
  if (modality == "multimodal") fusion.collect("fusion", s);
  else linear.collect("classifier", s);
  return s;
}

namespace {

Tensor<float> supervised_forward(SupervisedModel& m, const std::vector<data::MultimodalSample>& samples,
                                 const std::vector<Index>& rows) {
  if (m.modality == "multimodal")
    return m.fusion.forward(m.inertial->encoder.forward(data::stack_inertial<float>(samples, rows)),
                            m.skeleton->encoder.forward(data::stack_skeleton<float>(samples, rows)));
  ModalityNet& net = m.inertial ? *m.inertial : *m.skeleton;
  return m.linear.forward(net.encoder.forward(net.encoder.batch_input(samples, rows)));
}

void set_supervised_training(SupervisedModel& m, bool on) {
  if (m.inertial) m.inertial->encoder.set_training(on);
  if (m.skeleton) m.skeleton->encoder.set_training(on);
  m.fusion.set_training(on);
}

// Adam keeps moving the weights at full step size even once the loss is tiny, so the
// batch-norm running averages trail the final parameters. Forward-only passes over the
// clean training set bring them up to date (0.9^50 of the stale value remains).
void refresh_running_stats(SupervisedModel& m, const std::vector<data::MultimodalSample>& train,
                           Index batch_size) {
  const auto n = static_cast<Index>(train.size());
  if (n < 2) return;
  set_supervised_training(m, true);
  int forwards = 0;
  while (forwards < 50)
    for (Index b = 0; b < n && forwards < 50; b += batch_size) {
      std::vector<Index> rows(static_cast<std::size_t>(std::min(batch_size, n - b)));
      std::iota(rows.begin(), rows.end(), b);
      if (rows.size() < 2) continue;
      supervised_forward(m, train, rows);
      ++forwards;
    }
  set_supervised_training(m, false);
}

}  // namespace

Tensor<float> SupervisedModel::logits(const std::vector<data::MultimodalSample>& samples, Index batch_size) {
  set_supervised_training(*this, false);
  const Index n = static_cast<Index>(samples.size());
  Tensor<float> out;
  for (Index b = 0; b < n; b += batch_size) {
    std::vector<Index> rows(static_cast<std::size_t>(std::min(batch_size, n - b)));
    std::iota(rows.begin(), rows.end(), b);
    const Tensor<float> l = supervised_forward(*this, samples, rows);
    out = b == 0 ? l : concat_rows(out, l);
  }
  return out;
}

SupervisedModel train_supervised(const ExperimentConfig& config, const std::vector<data::MultimodalSample>& train,
                                 int num_classes, const std::string& modality, int epochs, const RunOutput& out) {
  if (modality != "multimodal" && modality != "inertial" && modality != "skeleton")
    throw ConfigError("supervised modality must be multimodal, inertial or skeleton");
  if (train.empty()) throw ConfigError("empty training set");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  const std::vector<int> labels = data::labels_of(train);
  const Exec exec = exec_of(config);
  ExecScope scope(exec);
  const InputDims dims = dims_of(train);

  SupervisedModel model;
  model.modality = modality;
  Rng rng(derive_seed(config.seed, kInitStream + 20));
  if (modality != "skeleton")
    model.inertial = make_net(Modality::inertial, config.model, dims, derive_seed(config.seed, kInitStream + 21));
  if (modality != "inertial")
    model.skeleton = make_net(Modality::skeleton, config.model, dims, derive_seed(config.seed, kInitStream + 22));
  if (modality == "multimodal")
    model.fusion = nn::FusionClassifier<float>(model.inertial->encoder.feature_dim(),
                                                model.skeleton->encoder.feature_dim(),
                                                {config.model.fusion_dim, num_classes}, rng);
  else
    model.linear = nn::Linear<float>((model.inertial ? *model.inertial : *model.skeleton).encoder.feature_dim(),
                                     num_classes, rng);

  nn::Adam<float> adam(model.state(), config.optimizer.lr);
  EpochTracker tracker(config, "supervised_" + modality);
  const auto n_train = static_cast<Index>(train.size());
  const Index min_batch = n_train >= 2 ? 2 : 1;

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    if (model.inertial) model.inertial->encoder.set_training(true);
    if (model.skeleton) model.skeleton->encoder.set_training(true);
    model.fusion.set_training(true);
    double loss_sum = 0, count = 0;
    for (const auto& rows : epoch_batches(n_train, config.batch_size, min_batch, config.seed, epoch)) {
      std::vector<int> y;
      for (Index r : rows) y.push_back(labels[static_cast<std::size_t>(r)]);
      Tensor<float> grad;
      float loss;
      adam.zero_grad();
      if (modality == "multimodal") {
        const Tensor<float> fi = model.inertial->encoder.forward(
            augmented_batch(train, rows, config.inertial_augment, config.seed, 0, epoch, exec));
        const Tensor<float> fs = model.skeleton->encoder.forward(
            augmented_batch(train, rows, config.skeleton_augment, config.seed, 1, epoch, exec));
        loss = nn::cross_entropy(model.fusion.forward(fi, fs), y, &grad);
        auto [gi, gs] = model.fusion.backward(grad);
        model.inertial->encoder.backward(gi);
        model.skeleton->encoder.backward(gs);
      } else {
        ModalityNet& net = model.inertial ? *model.inertial : *model.skeleton;
        const auto& pipeline = model.inertial ? config.inertial_augment : config.skeleton_augment;
        const Tensor<float> f =
            net.encoder.forward(augmented_batch(train, rows, pipeline, config.seed, 0, epoch, exec));
        loss = nn::cross_entropy(model.linear.forward(f), y, &grad);
        net.encoder.backward(model.linear.backward(grad));
      }
      adam.step();
      loss_sum += static_cast<double>(loss) * static_cast<double>(rows.size());
      count += static_cast<double>(rows.size());
    }
    tracker.finish(epoch, loss_sum, count, adam.lr(), 0, 0, 0);
    adam.set_lr(tracker.next_lr());
    report(out, tracker.log.back());
  }
  model.log = tracker.log;
  refresh_running_stats(model, train, std::max<Index>(config.batch_size, 2));
  if (!out.dir.empty()) {
    save_state(out.dir / ("supervised_" + modality + ".cmkt"), model.state(),
               run_metadata(config, epochs, model.log));
    write_log(out.dir / "train_log.jsonl", model.log);
  }
  return model;
}

}  // namespace cmkm::train
