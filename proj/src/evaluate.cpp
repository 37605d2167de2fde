#include "cmkm/evaluate.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "cmkm/contrastive.hpp"
#include "cmkm/errors.hpp"
#include "cmkm/kernels.hpp"

namespace cmkm::evaluate {

using nlohmann::json;
namespace fs = std::filesystem;

json EvalResult::to_json() const {
  json j = {{"protocol", protocol},         {"method", method},   {"metric", to_string(metric)},
            {"value", value},               {"per_class", per_class}, {"repeats", repeats},
            {"ci_half_width", ci_half_width}, {"config", config_echo}};
  j["fraction"] = fraction ? json(*fraction) : json(nullptr);
  j["top_k"] = top_k ? json(*top_k) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------- metrics

namespace {

void check_lengths(const std::vector<int>& p, const std::vector<int>& l) {
  if (p.size() != l.size()) throw std::invalid_argument("metric: predictions and labels differ in length");
  if (p.empty()) throw std::invalid_argument("metric: empty input");
}

}  // namespace

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  check_lengths(predictions, labels);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<double> per_class_f1(const std::vector<int>& predictions, const std::vector<int>& labels,
                                 int num_classes) {
  check_lengths(predictions, labels);
  if (num_classes < 0) {
    num_classes = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      num_classes = std::max({num_classes, labels[i] + 1, predictions[i] + 1});
  }
  std::vector<double> tp(static_cast<std::size_t>(num_classes)), fp(tp), fn(tp);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], l = labels[i];
    if (p < 0 || p >= num_classes || l < 0 || l >= num_classes)
      throw std::invalid_argument("metric: class id out of range");
    if (p == l) tp[static_cast<std::size_t>(p)] += 1;
    else {
      fp[static_cast<std::size_t>(p)] += 1;
      fn[static_cast<std::size_t>(l)] += 1;
    }
  }
  std::vector<double> f1(static_cast<std::size_t>(num_classes), 0.0);
  for (std::size_t c = 0; c < f1.size(); ++c) {
    const double denom = 2 * tp[c] + fp[c] + fn[c];
    f1[c] = denom > 0 ? 2 * tp[c] / denom : 0.0;
  }
  return f1;
}

double compute_metric(const std::vector<int>& predictions, const std::vector<int>& labels, Metric metric,
                      int num_classes) {
  if (metric == Metric::accuracy) return accuracy(predictions, labels);
  const auto f1 = per_class_f1(predictions, labels, num_classes);
  return std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(f1.size());
}

// ---------------------------------------------------------------- features

FeatureSet extract_features(ModalityEncoder* inertial, ModalityEncoder* skeleton,
                            const std::vector<data::MultimodalSample>& samples, Index batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  FeatureSet out;
  const Index n = static_cast<Index>(samples.size());
  for (const auto& s : samples) out.labels.push_back(s.label.value_or(-1));
  auto run = [&](ModalityEncoder* enc) {
    if (!enc) return Tensor<float>();
    enc->set_training(false);
    Tensor<float> f({n, enc->feature_dim()});
    for (Index b = 0; b < n; b += batch_size) {
      std::vector<Index> rows(static_cast<std::size_t>(std::min(batch_size, n - b)));
      std::iota(rows.begin(), rows.end(), b);
      const Tensor<float> y = enc->forward(enc->batch_input(samples, rows));
      std::copy(y.values().begin(), y.values().end(), f.data() + b * enc->feature_dim());
    }
    return f;
  };
  out.inertial = run(inertial);
  out.skeleton = run(skeleton);
  return out;
}

// ---------------------------------------------------------------- linear probe

ProbeOptions probe_options(const ExperimentConfig& config, int num_classes) {
  ProbeOptions o;
  o.modality = config.evaluation.modality;
  o.num_classes = num_classes;
  o.epochs = config.evaluation.epochs;
  o.batch_size = config.evaluation.batch_size;
  o.fusion_dim = config.model.fusion_dim;
  o.optimizer = config.optimizer;
  o.seed = config.seed;
  o.metric = config.evaluation.metric;
  o.strict = config.strict;
  return o;
}

EvalResult linear_eval(const FeatureSet& train, const FeatureSet& test, const ProbeOptions& o) {
  const bool multimodal = o.modality == "multimodal";
  if (!multimodal && o.modality != "inertial" && o.modality != "skeleton")
    throw ConfigError("evaluation.modality: expected multimodal, inertial or skeleton");
  if (o.num_classes < 1) throw ConfigError("linear_eval: num_classes must be positive");
  if (train.size() < 1 || test.size() < 1) throw std::invalid_argument("linear_eval: empty split");
  for (const auto* set : {&train, &test})
    for (int l : set->labels)
      if (l < 0 || l >= o.num_classes)
        throw ConfigError("classifier has " + std::to_string(o.num_classes) + " classes but the data has label " +
                          std::to_string(l));
  const bool use_i = multimodal || o.modality == "inertial";
  const bool use_s = multimodal || o.modality == "skeleton";
  if ((use_i && (train.inertial.empty() || test.inertial.empty())) ||
      (use_s && (train.skeleton.empty() || test.skeleton.empty())))
    throw std::invalid_argument("linear_eval: missing features for modality " + o.modality);
  ExecScope scope(o.strict ? Exec::serial : Exec::parallel);

  Rng rng(derive_seed(o.seed, 404));
  nn::FusionClassifier<float> fusion;
  nn::Linear<float> linear;
  nn::StateList<float> params;
  const Tensor<float>& uni_train = use_i ? train.inertial : train.skeleton;
  const Tensor<float>& uni_test = use_i ? test.inertial : test.skeleton;
  if (multimodal) {
    fusion = nn::FusionClassifier<float>(train.inertial.dim(1), train.skeleton.dim(1), {o.fusion_dim, o.num_classes}, rng);
    fusion.collect("fusion", params);
  } else {
    linear = nn::Linear<float>(uni_train.dim(1), o.num_classes, rng);
    linear.collect("classifier", params);
  }
  nn::Adam<float> adam(params, o.optimizer.lr);
  nn::PlateauScheduler scheduler(o.optimizer);

  const Index n = train.size();
  for (int epoch = 1; epoch <= o.epochs; ++epoch) {
    fusion.set_training(true);
    double loss_sum = 0, count = 0;
    for (const auto& rows : train::epoch_batches(n, o.batch_size, n >= 2 ? 2 : 1, o.seed, epoch)) {
      std::vector<int> y;
      for (Index r : rows) y.push_back(train.labels[static_cast<std::size_t>(r)]);
      Tensor<float> grad;
      float loss;
      adam.zero_grad();
      if (multimodal) {
        loss = nn::cross_entropy(fusion.forward(gather_rows(train.inertial, std::span<const Index>(rows)),
                                                gather_rows(train.skeleton, std::span<const Index>(rows))),
                                 y, &grad);
        fusion.backward(grad);
      } else {
        loss = nn::cross_entropy(linear.forward(gather_rows(uni_train, std::span<const Index>(rows))), y, &grad);
        linear.backward(grad);
      }
      adam.step();
      loss_sum += static_cast<double>(loss) * static_cast<double>(rows.size());
      count += static_cast<double>(rows.size());
    }
    scheduler.step(loss_sum / count);
    adam.set_lr(scheduler.lr());
  }

  fusion.set_training(false);
  const Tensor<float> logits = multimodal ? fusion.forward(test.inertial, test.skeleton) : linear.forward(uni_test);
  const std::vector<int> pred = nn::argmax_rows(logits);
  EvalResult r;
  r.protocol = "linear";
  r.metric = o.metric;
  r.value = compute_metric(pred, test.labels, o.metric, o.num_classes);
  r.per_class = per_class_f1(pred, test.labels, o.num_classes);
  return r;
}

// ---------------------------------------------------------------- retrieval

std::vector<int> knn_predict(const Tensor<float>& train, const std::vector<int>& train_labels,
                             const Tensor<float>& test, Index k) {
  if (train.rank() != 2 || train.dim(0) < 1) throw std::invalid_argument("retrieve: empty training set");
  if (static_cast<Index>(train_labels.size()) != train.dim(0))
    throw std::invalid_argument("retrieve: label count does not match training features");
  if (test.rank() != 2 || test.dim(1) != train.dim(1)) throw std::invalid_argument("retrieve: feature width mismatch");
  if (k < 1) throw std::invalid_argument("retrieve: k must be >= 1");
  const Index n = train.dim(0), m = test.dim(0);
  k = std::min(k, n);
  // One plain dot product per pair: a blocked product rounds by column position, which would let
  // identical training rows rank differently.
  const Index d = train.dim(1);
  const Tensor<double> ua = kernels::normalize_rows(default_exec(), test.cast<double>());
  const Tensor<double> ub = kernels::normalize_rows(default_exec(), train.cast<double>());
  std::vector<int> out(static_cast<std::size_t>(m));
  parallel_for(m, [&](Index q) {
    std::vector<double> row(static_cast<std::size_t>(n));
    const double* a = ua.data() + q * d;
    for (Index l = 0; l < n; ++l) row[static_cast<std::size_t>(l)] = std::inner_product(a, a + d, ub.data() + l * d, 0.0);
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
      return row[static_cast<std::size_t>(a)] > row[static_cast<std::size_t>(b)] ||
             (row[static_cast<std::size_t>(a)] == row[static_cast<std::size_t>(b)] && a < b);
    });
    std::map<int, Index> votes;
    for (Index i = 0; i < k; ++i) ++votes[train_labels[static_cast<std::size_t>(order[i])]];
    Index best = 0;
    for (const auto& [label, count] : votes) best = std::max(best, count);
    for (Index i = 0; i < k; ++i) {
      const int label = train_labels[static_cast<std::size_t>(order[i])];
      if (votes[label] == best) {
        out[static_cast<std::size_t>(q)] = label;
        break;
      }
    }
  });
  return out;
}

EvalResult retrieve(ModalityEncoder& encoder, const std::vector<data::MultimodalSample>& train,
                    const std::vector<data::MultimodalSample>& test, Index k, Metric metric) {
  if (train.empty()) throw std::invalid_argument("retrieve: empty training set");
  if (test.empty()) throw std::invalid_argument("retrieve: empty test set");
  const bool inertial = encoder.modality() == Modality::inertial;
  const FeatureSet tr = extract_features(inertial ? &encoder : nullptr, inertial ? nullptr : &encoder, train);
  const FeatureSet te = extract_features(inertial ? &encoder : nullptr, inertial ? nullptr : &encoder, test);
  const auto pred = knn_predict(inertial ? tr.inertial : tr.skeleton, tr.labels, inertial ? te.inertial : te.skeleton, k);
  EvalResult r;
  r.protocol = "retrieve";
  r.metric = metric;
  r.value = compute_metric(pred, te.labels, metric);
  r.per_class = per_class_f1(pred, te.labels);
  return r;
}

// ---------------------------------------------------------------- semi-supervised

std::pair<double, double> mean_and_ci(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("mean_and_ci: no values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1));
  const boost::math::students_t dist(n - 1);
  const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
  return {mean, t * sd / std::sqrt(n)};
}

namespace {

FeatureSet subset(const FeatureSet& f, const std::vector<Index>& idx) {
  FeatureSet out;
  const std::span<const Index> rows(idx);
  if (!f.inertial.empty()) out.inertial = gather_rows(f.inertial, rows);
  if (!f.skeleton.empty()) out.skeleton = gather_rows(f.skeleton, rows);
  for (Index i : idx) out.labels.push_back(f.labels[static_cast<std::size_t>(i)]);
  return out;
}

EvalResult summarize(std::string method, double fraction, std::vector<double> values, Metric metric) {
  EvalResult r;
  r.protocol = "semisup";
  r.method = std::move(method);
  r.metric = metric;
  r.fraction = fraction;
  const auto [mean, half] = mean_and_ci(values);
  r.value = mean;
  r.ci_half_width = half;
  r.repeats = std::move(values);
  return r;
}

}  // namespace

std::vector<EvalResult> semi_supervised_sweep(const SweepInputs& in, const std::vector<double>& fractions,
                                              int repeats, const ProbeOptions& options, const std::string& method) {
  if (!in.train || !in.test) throw std::invalid_argument("semi_supervised_sweep: missing features");
  if (repeats < 1) throw std::invalid_argument("semi_supervised_sweep: repeats must be >= 1");
  const Index n = in.train->size();
  for (double f : fractions) {
    if (!(f > 0 && f <= 1)) throw std::invalid_argument("semi_supervised_sweep: fraction must lie in (0, 1]");
    if (std::llround(f * static_cast<double>(n)) < 1)
      throw std::invalid_argument("semi_supervised_sweep: fraction " + std::to_string(f) + " of " +
                                  std::to_string(n) + " training samples selects no sample");
  }
  const bool supervised = in.train_samples && in.test_samples && in.config;
  std::vector<EvalResult> out;
  for (double f : fractions) {
    std::vector<double> ssl, random, sup;
    for (int r = 0; r < repeats; ++r) {
      const std::uint64_t seed = options.seed + static_cast<std::uint64_t>(r);
      const std::vector<Index> idx = data::subsample_indices(n, f, seed);
      ProbeOptions o = options;
      o.seed = seed;
      ssl.push_back(linear_eval(subset(*in.train, idx), *in.test, o).value);
      if (in.random_train && in.random_test)
        random.push_back(linear_eval(subset(*in.random_train, idx), *in.random_test, o).value);
      if (supervised) {
        std::vector<data::MultimodalSample> picked;
        for (Index i : idx) picked.push_back((*in.train_samples)[static_cast<std::size_t>(i)]);
        ExperimentConfig c = *in.config;
        c.seed = seed;
        auto model = train::train_supervised(c, picked, options.num_classes, options.modality, options.epochs);
        const auto pred = nn::argmax_rows(model.logits(*in.test_samples));
        sup.push_back(compute_metric(pred, data::labels_of(*in.test_samples), options.metric, options.num_classes));
      }
    }
    out.push_back(summarize(method, f, ssl, options.metric));
    if (!random.empty()) out.push_back(summarize("random", f, random, options.metric));
    if (!sup.empty()) out.push_back(summarize("supervised", f, sup, options.metric));
  }
  return out;
}

// ---------------------------------------------------------------- top-K ablation

std::vector<EvalResult> topk_ablation(const ExperimentConfig& config, const std::vector<data::MultimodalSample>& train,
                                      const std::vector<data::MultimodalSample>& test, int num_classes,
                                      const std::vector<Index>& k_values, ModalityNet& guidance_inertial,
                                      ModalityNet& guidance_skeleton, bool verbose) {
  std::vector<EvalResult> rows;
  for (Index k : k_values) {
    ExperimentConfig c = config;
    c.framework = Framework::cmc_cmkm;
    c.top_k = k;
    c.intra_negatives = true;
    auto trained = train::pretrain_multimodal(c, train, &guidance_inertial, &guidance_skeleton, {{}, verbose});
    const FeatureSet tr = extract_features(&trained.inertial.encoder, &trained.skeleton.encoder, train);
    const FeatureSet te = extract_features(&trained.inertial.encoder, &trained.skeleton.encoder, test);
    ProbeOptions o = probe_options(c, num_classes);
    o.modality = "multimodal";
    EvalResult r = linear_eval(tr, te, o);
    r.protocol = "topk";
    r.method = "cmc_cmkm";
    r.top_k = k;
    r.config_echo = c.to_json();
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------- output

void write_results_csv(const fs::path& path, const std::vector<EvalResult>& results) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write results: " + path.string());
  out << "protocol,method,metric,value,fraction,top_k,repeats,ci_half_width,ci_low,ci_high\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  for (const auto& r : results) {
    out << r.protocol << ',' << r.method << ',' << to_string(r.metric) << ',' << num(r.value) << ','
        << (r.fraction ? num(*r.fraction) : "") << ',' << (r.top_k ? std::to_string(*r.top_k) : "") << ','
        << r.repeats.size() << ',' << num(r.ci_half_width) << ',' << num(r.value - r.ci_half_width) << ','
        << num(r.value + r.ci_half_width) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void export_embeddings(const FeatureSet& f, const fs::path& out_path) {
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write embeddings: " + out_path.string());
  const Index di = f.inertial.empty() ? 0 : f.inertial.dim(1);
  const Index ds = f.skeleton.empty() ? 0 : f.skeleton.dim(1);
  for (Index c = 0; c < di; ++c) out << "inertial_" << c << ',';
  for (Index c = 0; c < ds; ++c) out << "skeleton_" << c << ',';
  out << "label\n";
  char buf[32];
  for (Index r = 0; r < f.size(); ++r) {
    for (Index c = 0; c < di; ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g,", static_cast<double>(f.inertial(r, c)));
      out << buf;
    }
    for (Index c = 0; c < ds; ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g,", static_cast<double>(f.skeleton(r, c)));
      out << buf;
    }
    out << f.labels[static_cast<std::size_t>(r)] << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + out_path.string());
}

}  // namespace cmkm::evaluate
