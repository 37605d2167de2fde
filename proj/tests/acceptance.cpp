// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any gating criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <set>
#include <string>

#include "cmkm/contrastive.hpp"
#include "cmkm/evaluate.hpp"
#include "cmkm/models.hpp"
#include "cmkm/nn/encoders.hpp"
#include "cmkm/nn/optim.hpp"
#include "cmkm/train.hpp"
#include "test_util.hpp"

using namespace cmkm;
using namespace cmkm::contrastive;
using cmkm::testing::max_grad_error;
using cmkm::testing::randn;
using cmkm::testing::rel_err;
using cmkm::testing::to_matrix;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

GuidanceSimilarity<double> random_guidance(Index n, Rng& rng, bool ties) {
  return {cmkm::testing::random_guidance(n, rng, ties), cmkm::testing::random_guidance(n, rng, ties)};
}

std::vector<double> losses(const std::vector<train::EpochRecord>& log) {
  std::vector<double> out;
  for (const auto& r : log) out.push_back(r.loss);
  return out;
}

Verdict loss_oracles() {
  const auto t0 = Clock::now();
  Rng rng(1001);
  const double taus[] = {0.05, 0.1, 0.5, 1.0};
  double worst = 0;
  for (int batch = 0; batch < 100; ++batch) {
    const Index n = 2 + static_cast<Index>(rng() % 15), d = 1 + static_cast<Index>(rng() % 8);
    const double tau = taus[rng() % 4];
    const Index k = std::min<Index>(static_cast<Index>(rng() % 3), n - 1);
    const bool intra = rng() % 2 == 0;
    ProjectionBatch<double> b{randn({n, d}, rng), randn({n, d}, rng)};
    auto g = random_guidance(n, rng, batch % 2 == 0);
    const auto zi = to_matrix(b.inertial), zs = to_matrix(b.skeleton);
    worst = std::max(worst, rel_err(nt_xent(b.inertial, b.skeleton, Temperature(tau)).loss,
                                    reference::nt_xent(zi, zs, tau)));
    worst = std::max(worst, rel_err(cmc_loss(b, Temperature(tau)).loss, reference::cmc(zi, zs, tau)));
    worst = std::max(worst, rel_err(cmkm_loss(b, g, k, Temperature(tau), intra).loss,
                                    reference::cmkm(zi, zs, to_matrix(g.inertial), to_matrix(g.skeleton),
                                                    static_cast<std::size_t>(k), tau, intra)));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 60, fmt("100 batches x 3 losses, max rel err %.2e, %.2fs", worst, secs)};
}

Verdict reduction_identity() {
  Rng rng(1002);
  double worst = 0;
  int larger = 0, generic = 0;
  for (int batch = 0; batch < 100; ++batch) {
    const Index n = 1 + static_cast<Index>(rng() % 16), d = 1 + static_cast<Index>(rng() % 8);
    ProjectionBatch<double> b{randn({n, d}, rng), randn({n, d}, rng)};
    auto g = random_guidance(n, rng, false);
    const double cmc = cmc_loss(b, Temperature(0.1)).loss;
    worst = std::max(worst, rel_err(cmkm_loss(b, g, 0, Temperature(0.1), false).loss, cmc));
    if (n >= 2) {
      ++generic;
      larger += cmkm_loss(b, g, 0, Temperature(0.1), true).loss > cmc;
    }
  }
  return {worst <= 1e-7 && larger == generic,
          fmt("K=0 intra off vs cmc max rel err %.2e; intra on strictly larger on %.0f/%.0f batches", worst, larger,
              generic)};
}

// Worst of |numeric - analytic| / (1e-4 * max(|numeric|, |analytic|) + roundoff) over a sample of
// every trainable tensor; <= 1 passes. The roundoff term is eps * sum|y * w| / h.
template <typename Forward, typename Backward>
double parameter_check(nn::StateList<double>& state, Forward forward, Backward backward, const Tensor<double>& x,
                       Rng& rng) {
  const Tensor<double> y0 = forward(x);
  const Tensor<double> w = randn(y0.shape(), rng);
  auto loss = [&] {
    const Tensor<double> y = forward(x);
    double s = 0;
    for (Index i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
  };
  nn::zero_grad(state);
  forward(x);
  backward(w);
  double scale = 0;
  for (Index i = 0; i < y0.size(); ++i) scale += std::abs(y0[i] * w[i]);
  const double h = 1e-6, noise = 10 * std::numeric_limits<double>::epsilon() * scale / h;
  double worst = 0;
  for (auto& s : state) {
    if (!s.grad) continue;
    const Tensor<double> grad = *s.grad;
    Tensor<double>& v = *s.value;
    for (int trial = 0; trial < 8; ++trial) {
      const Index i = static_cast<Index>(rng() % static_cast<std::uint64_t>(v.size()));
      const double saved = v[i];
      v[i] = saved + h;
      const double up = loss();
      v[i] = saved - h;
      const double down = loss();
      v[i] = saved;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(numeric - grad[i]) /
                                  (1e-4 * std::max(std::abs(numeric), std::abs(grad[i])) + noise));
    }
  }
  return worst;
}

// Input gradients of sum(y * w), all coordinates.
template <typename Forward, typename Backward>
double input_check(Tensor<double>& x, Forward forward, Backward backward, Rng& rng) {
  const Tensor<double> w = randn(forward(x).shape(), rng);
  forward(x);
  const Tensor<double> gx = backward(w);
  return max_grad_error(x, gx, [&] {
    const Tensor<double> y = forward(x);
    double s = 0;
    for (Index i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
  });
}

// max |numeric - analytic| / max(|numeric|, |analytic|) over all coordinates of x. Normwise, because
// near-saturated batches at small tau have components whose size is close to the difference quotient's
// roundoff (eps / h, about 2e-10).
double normwise_grad_error(Tensor<double>& x, const Tensor<double>& analytic, const std::function<double()>& loss) {
  const double h = 1e-6;
  double diff = 0, scale = 0;
  for (Index i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss();
    x[i] = saved - h;
    const double down = loss();
    x[i] = saved;
    const double numeric = (up - down) / (2 * h);
    diff = std::max(diff, std::abs(numeric - analytic[i]));
    scale = std::max({scale, std::abs(numeric), std::abs(analytic[i])});
  }
  return scale > 0 ? diff / scale : diff;
}

Verdict gradient_checks() {
  const auto t0 = Clock::now();
  Rng rng(1003);
  double loss_worst = 0;
  // With d = 1 every embedding normalizes to +-1, the losses are locally constant and the analytic
  // gradient must vanish up to roundoff.
  {
    ProjectionBatch<double> b{randn({4, 1}, rng), randn({4, 1}, rng)};
    auto g = random_guidance(4, rng, false);
    for (const auto& r : {nt_xent(b.inertial, b.skeleton, Temperature(0.1)), cmc_loss(b, Temperature(0.1)),
                          cmkm_loss(b, g, 1, Temperature(0.1), true)})
      for (const Tensor<double>* t : {&r.grad_first, &r.grad_second})
        for (double v : t->values()) loss_worst = std::max(loss_worst, std::abs(v) < 1e-12 ? 0.0 : 1.0);
  }
  for (int shape = 0; shape < 6; ++shape) {
    const Index n = 2 + shape % 3, d = 2 + shape % 3;
    ProjectionBatch<double> b{randn({n, d}, rng), randn({n, d}, rng)};
    auto g = random_guidance(n, rng, false);
    for (double tau : {0.1, 0.5})
      for (auto red : {Reduction::mean, Reduction::sum}) {
        const Temperature t(tau);
        auto check = [&](const LossResult<double>& r, const std::function<double()>& f) {
          loss_worst = std::max({loss_worst, normwise_grad_error(b.inertial, r.grad_first, f),
                                 normwise_grad_error(b.skeleton, r.grad_second, f)});
        };
        check(nt_xent(b.inertial, b.skeleton, t, red), [&] { return nt_xent(b.inertial, b.skeleton, t, red).loss; });
        check(cmc_loss(b, t, red), [&] { return cmc_loss(b, t, red).loss; });
        for (Index k = 0; k < n - 1 && k <= 2; ++k)
          for (bool intra : {false, true}) {
            const auto sets = mine_sets(g, k);
            check(cmkm_loss(b, sets, t, intra, red), [&] { return cmkm_loss(b, sets, t, intra, red).loss; });
          }
      }
  }

  double input_worst = 0, param_worst = 0;
  auto module = [&](auto& m, Tensor<double> x) {
    nn::StateList<double> st;
    m.collect("m", st);
    auto fwd = [&](const Tensor<double>& in) { return m.forward(in); };
    auto bwd = [&](const Tensor<double>& gy) { return m.backward(gy); };
    input_worst = std::max(input_worst, input_check(x, fwd, bwd, rng));
    param_worst = std::max(param_worst, parameter_check(st, fwd, bwd, x, rng));
  };
  nn::InertialEncoder<double> ie(nn::InertialEncoderConfig{}, 3, rng);
  module(ie, randn({2, 10, 3}, rng));
  nn::SkeletonEncoder<double> se(nn::SkeletonEncoderConfig{}, 8, 4, 2, rng);
  module(se, randn({2, 8, 4, 2}, rng));
  nn::ProjectionHead<double> ph(nn::ProjectionHeadConfig{5, 5, 3}, rng);
  module(ph, randn({4, 5}, rng));

  nn::FusionClassifier<double> fc(4, 6, nn::FusionHeadConfig{5, 3}, rng);
  auto xi = randn({4, 4}, rng), xs = randn({4, 6}, rng);
  nn::StateList<double> st;
  fc.collect("fusion", st);
  auto fwd_i = [&](const Tensor<double>& in) { return fc.forward(in, xs); };
  auto bwd_i = [&](const Tensor<double>& gy) { return fc.backward(gy).first; };
  auto fwd_s = [&](const Tensor<double>& in) { return fc.forward(xi, in); };
  auto bwd_s = [&](const Tensor<double>& gy) { return fc.backward(gy).second; };
  input_worst = std::max(input_worst, input_check(xi, fwd_i, bwd_i, rng));
  input_worst = std::max(input_worst, input_check(xs, fwd_s, bwd_s, rng));
  param_worst = std::max(param_worst, parameter_check(st, fwd_i, bwd_i, xi, rng));

  const double secs = seconds_since(t0);
  return {loss_worst < 1e-4 && input_worst < 1e-4 && param_worst <= 1 && secs < 120,
          fmt("losses %.2e normwise, module inputs %.2e rel; parameters at %.2f of tolerance; %.1fs", loss_worst, input_worst,
              param_worst, secs)};
}

std::vector<Index> as_index(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

std::vector<Index> sorted(std::vector<Index> v) {
  std::sort(v.begin(), v.end());
  return v;
}

Verdict mining() {
  Rng rng(1004);
  int mismatches = 0, leaks = 0, bad_sizes = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const Index n = 1 + static_cast<Index>(rng() % 12);
    const Index k = static_cast<Index>(rng() % static_cast<std::uint64_t>(n));
    auto g = random_guidance(n, rng, rep % 2 == 0);
    const auto si = to_matrix(g.inertial), ss = to_matrix(g.skeleton);
    const auto m = mine_sets(g, k, Exec::serial);
    for (Index j = 0; j < n; ++j) {
      const auto uj = static_cast<std::size_t>(j), uk = static_cast<std::size_t>(k);
      mismatches += m.topk_inertial[uj] != as_index(reference::topk_by_sort(si, uj, uk));
      mismatches += m.topk_skeleton[uj] != as_index(reference::topk_by_sort(ss, uj, uk));
      const auto ri = reference::anchor_sets(si, ss, uj, uk), rs = reference::anchor_sets(ss, si, uj, uk);
      for (const auto& [a, r] : {std::pair{&m.inertial_anchor[uj], &ri}, std::pair{&m.skeleton_anchor[uj], &rs}}) {
        // Set membership is what the loss consumes; storage order is not part of the contract.
        mismatches += sorted(a->cross_pos) != sorted(as_index(r->cross_pos)) ||
                      sorted(a->intra_pos) != sorted(as_index(r->intra_pos)) ||
                      sorted(a->cross_neg) != sorted(as_index(r->cross_neg)) ||
                      sorted(a->intra_neg) != sorted(as_index(r->intra_neg));
        bad_sizes += static_cast<Index>(a->cross_pos.size() + a->intra_pos.size()) != 1 + 2 * k;
        std::set<Index> mined(a->cross_pos.begin(), a->cross_pos.end());
        mined.insert(a->intra_pos.begin(), a->intra_pos.end());
        for (Index l : a->cross_neg) leaks += mined.count(l) > 0;
        for (Index l : a->intra_neg) leaks += mined.count(l) > 0;
      }
    }
    if (mine_sets(g, k, Exec::parallel).inertial_anchor.size() != m.inertial_anchor.size()) ++mismatches;
  }
  return {mismatches == 0 && leaks == 0 && bad_sizes == 0,
          fmt("1000 guidance pairs: %.0f oracle mismatches, %.0f mined indices in negatives, %.0f |P_j| != 1+2K",
              mismatches, leaks, bad_sizes)};
}

Verdict end_to_end() {
  const auto t0 = Clock::now();
  data::SyntheticSpec spec;  // 6 classes x 40 samples, noise 0.1
  spec.seed = 1;
  auto ds = data::generate_synthetic(spec);
  data::preprocess(ds, 50, true);
  const auto split = data::make_split(ds.samples, {});
  const nlohmann::json base = {{"seed", 0}, {"dataset", {{"family", "utd"}}}};

  auto gi = train::pretrain_unimodal(resolve_config(base, {{"framework", "simclr_inertial"}, {"epochs", 20}}),
                                     split.train)
                .net;
  auto gs = train::pretrain_unimodal(resolve_config(base, {{"framework", "simclr_skeleton"}, {"epochs", 20}}),
                                     split.train)
                .net;
  auto cm = resolve_config(base, {{"framework", "cmc_cmkm"}, {"epochs", 50}});
  cm.guidance_inertial = cm.guidance_skeleton = "mem";
  auto r = train::pretrain_multimodal(cm, split.train, &gi, &gs);

  const auto probe = evaluate::probe_options(cm, ds.info.num_classes);
  const double ssl = evaluate::linear_eval(
                         evaluate::extract_features(&r.inertial.encoder, &r.skeleton.encoder, split.train),
                         evaluate::extract_features(&r.inertial.encoder, &r.skeleton.encoder, split.test), probe)
                         .value;
  const auto dims = train::dims_of(split.train);
  auto ri = make_net(Modality::inertial, cm.model, dims, derive_seed(0, 313));
  auto rs = make_net(Modality::skeleton, cm.model, dims, derive_seed(0, 314));
  const double random = evaluate::linear_eval(evaluate::extract_features(&ri.encoder, &rs.encoder, split.train),
                                              evaluate::extract_features(&ri.encoder, &rs.encoder, split.test), probe)
                            .value;
  const double secs = seconds_since(t0);
  return {ssl >= 0.90 && ssl - random >= 0.20 && secs <= 300,
          fmt("%.0f-sample synthetic set: cmc_cmkm probe %.3f vs random-frozen %.3f, %.0fs",
              static_cast<double>(ds.samples.size()), ssl, random, secs)};
}

Verdict retrieval() {
  Rng rng(1006);
  int mismatches = 0;
  for (int set = 0; set < 50; ++set) {
    const Index n = 1 + static_cast<Index>(rng() % 40), m = 1 + static_cast<Index>(rng() % 20);
    const Index d = 1 + static_cast<Index>(rng() % 16), k = 1 + static_cast<Index>(rng() % 5);
    auto train = randn<float>({n, d}, rng), test = randn<float>({m, d}, rng);
    // Copied rows give similarity ties that are exact under any cosine formula.
    for (Index i = 1; i < n; ++i)
      if (rng() % 4 == 0) std::copy_n(train.data() + (rng() % i) * d, d, train.data() + i * d);
    for (Index i = 0; i < m; ++i)
      if (rng() % 3 == 0) std::copy_n(train.data() + (rng() % n) * d, d, test.data() + i * d);
    std::vector<int> labels;
    for (Index i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng() % 4));
    mismatches += evaluate::knn_predict(train, labels, test, k) !=
                  reference::knn_scan(to_matrix(train), labels, to_matrix(test), static_cast<std::size_t>(k));
  }
  data::SyntheticSpec spec;
  spec.per_class = 5;
  spec.frames = 20;
  spec.joints = 5;
  auto ds = data::generate_synthetic(spec);
  data::preprocess(ds, 20, true);
  const auto dims = train::dims_of(ds.samples);
  double self = 1;
  for (Modality mod : {Modality::inertial, Modality::skeleton}) {
    auto net = make_net(mod, ModelConfig{}, dims, 77);
    self = std::min(self, evaluate::retrieve(net.encoder, ds.samples, ds.samples, 1).value);
  }
  return {mismatches == 0 && self == 1.0,
          fmt("50 sets: %.0f mismatches vs exhaustive scan; self-retrieval %.3f", mismatches, self)};
}

Verdict determinism() {
  data::SyntheticSpec spec;
  spec.per_class = 6;
  spec.frames = 20;
  spec.joints = 5;
  auto ds = data::generate_synthetic(spec);
  data::preprocess(ds, 20, true);
  auto cfg = [](const std::string& framework) {
    return resolve_config(nlohmann::json::object(), {{"framework", framework},
                                                     {"epochs", 3},
                                                     {"batch_size", 8},
                                                     {"dataset.frames", 20},
                                                     {"seed", 9}});
  };
  int differ = 0, runs = 0;
  for (const char* f : {"simclr_inertial", "simclr_skeleton"}) {
    ++runs;
    differ += losses(train::pretrain_unimodal(cfg(f), ds.samples).log) !=
              losses(train::pretrain_unimodal(cfg(f), ds.samples).log);
  }
  ++runs;
  differ += losses(train::pretrain_multimodal(cfg("cmc"), ds.samples).log) !=
            losses(train::pretrain_multimodal(cfg("cmc"), ds.samples).log);
  const auto dims = train::dims_of(ds.samples);
  auto kc = cfg("cmc_cmkm");
  kc.guidance_inertial = kc.guidance_skeleton = "mem";
  auto run_cmkm = [&] {
    auto gi = make_net(Modality::inertial, kc.model, dims, 5);
    auto gs = make_net(Modality::skeleton, kc.model, dims, 6);
    return losses(train::pretrain_multimodal(kc, ds.samples, &gi, &gs).log);
  };
  ++runs;
  differ += run_cmkm() != run_cmkm();
  ++runs;
  differ += losses(train::train_supervised(cfg("supervised"), ds.samples, 6, "multimodal", 3).log) !=
            losses(train::train_supervised(cfg("supervised"), ds.samples, 6, "multimodal", 3).log);
  return {differ == 0, fmt("%.0f/%.0f training commands reproduced their loss curves bit-identically",
                           runs - differ, runs)};
}

Verdict scheduler() {
  nn::OptimizerSchedule s;
  nn::PlateauScheduler p(s);
  std::vector<int> at;
  std::vector<double> rates{s.lr};
  for (int e = 1; e <= 1000; ++e) {
    const double before = p.lr(), after = p.step(1.0);
    if (after != before) {
      at.push_back(e);
      rates.push_back(after);
    }
  }
  const auto expected = reference::plateau_trace(std::vector<double>(1000, 1.0), s.lr, s.plateau_patience_epochs,
                                                 s.reduction_factor, s.max_reductions, s.improvement_threshold);
  const bool ok = at.size() == 2 && std::abs(rates[1] - 1e-4) < 1e-18 && std::abs(rates[2] - 1e-5) < 1e-18 &&
                  p.lr() == expected.back() && p.reductions() == 2;
  std::string detail = "1000 flat epochs, patience " + std::to_string(s.plateau_patience_epochs) + ": ";
  for (std::size_t i = 0; i < at.size(); ++i)
    detail += fmt("%g -> %g at epoch %.0f; ", rates[i], rates[i + 1], at[i]);
  return {ok, detail + std::to_string(at.size()) + " reductions"};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    Verdict (*run)();
  };
  const Criterion criteria[] = {
      {"1 loss-oracle equivalence", loss_oracles},
      {"2 reduction identity", reduction_identity},
      {"3 gradient checks", gradient_checks},
      {"4 mining correctness", mining},
      {"5 end-to-end synthetic learning", end_to_end},
      {"6 retrieval oracle", retrieval},
      {"7 determinism", determinism},
      {"8 scheduler conformance", scheduler},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", c.name, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf(
      "NOTE 9 full-scale reproduction (non-gating): needs the real UTD-MHAD data and hours of training; "
      "see scripts/reproduce_utd.sh\n");
  return failed == 0 ? 0 : 1;
}
