#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "cmkm/models.hpp"
#include "cmkm/nn/encoders.hpp"
#include "test_util.hpp"

using namespace cmkm;
using namespace cmkm::nn;
using cmkm::testing::max_grad_error;
using cmkm::testing::randn;

namespace {

// Checks input gradients fully and a sample of every trainable tensor.
template <typename Forward, typename Backward>
void check_gradients(Tensor<double>& x, StateList<double> state, Forward forward, Backward backward, Rng& rng) {
  const Tensor<double> y0 = forward(x);
  const Tensor<double> w = randn(y0.shape(), rng);
  auto loss = [&] {
    const Tensor<double> y = forward(x);
    double s = 0;
    for (Index i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
  };
  zero_grad(state);
  forward(x);
  const Tensor<double> gx = backward(w);
  std::vector<Tensor<double>> grads;
  for (const auto& s : state) grads.push_back(s.grad ? *s.grad : Tensor<double>());
  EXPECT_LT(max_grad_error(x, gx, loss), 1e-4) << "input";
  // Roundoff in the difference quotient is about eps * sum|y * w| / h; coordinates whose gradient is
  // structurally zero (biases ahead of a normalisation) see nothing but that.
  double scale = 0;
  for (Index i = 0; i < y0.size(); ++i) scale += std::abs(y0[i] * w[i]);
  const double h = 1e-6, noise = 10 * std::numeric_limits<double>::epsilon() * scale / h;
  for (std::size_t p = 0; p < state.size(); ++p) {
    if (!state[p].grad) continue;
    Tensor<double>& v = *state[p].value;
    for (int trial = 0; trial < 4; ++trial) {
      const Index i = static_cast<Index>(rng() % static_cast<std::uint64_t>(v.size()));
      const double saved = v[i];
      v[i] = saved + h;
      const double up = loss();
      v[i] = saved - h;
      const double down = loss();
      v[i] = saved;
      const double numeric = (up - down) / (2 * h), analytic = grads[p][i];
      EXPECT_LE(std::abs(numeric - analytic), 1e-4 * std::max(std::abs(numeric), std::abs(analytic)) + noise)
          << analytic << " vs " << numeric << ", " << state[p].name << "[" << i << "]";
    }
  }
}

}  // namespace

TEST(InertialEncoder, ShapeContract) {
  Rng rng(1);
  InertialEncoder<float> enc(InertialEncoderConfig{}, 6, rng);
  EXPECT_EQ(enc.forward(randn<float>({8, 50, 6}, rng)).shape(), (Shape{8, 128}));
  EXPECT_THROW(enc.forward(randn<float>({8, 50, 5}, rng)), std::invalid_argument);
}

TEST(InertialEncoder, IdenticalInputsGiveIdenticalRowsInEvalMode) {
  Rng rng(2);
  InertialEncoder<float> enc(InertialEncoderConfig{}, 6, rng);
  enc.set_training(false);
  auto one = randn<float>({1, 50, 6}, rng);
  Tensor<float> two({2, 50, 6});
  std::copy_n(one.data(), 300, two.data());
  std::copy_n(one.data(), 300, two.data() + 300);
  auto y = enc.forward(two);
  for (Index c = 0; c < 128; ++c) EXPECT_EQ(y(0, c), y(1, c));
}

TEST(InertialEncoder, GradientCheck) {
  Rng rng(3);
  InertialEncoder<double> enc(InertialEncoderConfig{}, 3, rng);
  auto x = randn({2, 10, 3}, rng);
  StateList<double> st;
  enc.collect("enc", st);
  check_gradients(
      x, st, [&](const Tensor<double>& in) { return enc.forward(in); },
      [&](const Tensor<double>& g) { return enc.backward(g); }, rng);
}

TEST(SkeletonEncoder, ShapeContractAndZeroInput) {
  Rng rng(4);
  SkeletonEncoder<float> enc(SkeletonEncoderConfig{}, 50, 20, 3, rng);
  EXPECT_EQ(enc.forward(randn<float>({8, 50, 20, 3}, rng)).shape(), (Shape{8, 512}));
  auto y = enc.forward(Tensor<float>({2, 50, 20, 3}));
  for (float v : y.values()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_THROW(enc.forward(randn<float>({2, 50, 19, 3}, rng)), std::invalid_argument);
}

TEST(SkeletonEncoder, JointOrderMatters) {
  Rng rng(5);
  SkeletonEncoder<float> enc(SkeletonEncoderConfig{}, 20, 6, 3, rng);
  enc.set_training(false);
  auto x = randn<float>({1, 20, 6, 3}, rng);
  Tensor<float> p = x;
  const std::vector<Index> perm{3, 0, 5, 1, 4, 2};
  for (Index t = 0; t < 20; ++t)
    for (Index j = 0; j < 6; ++j)
      for (Index c = 0; c < 3; ++c) p(0, t, j, c) = x(0, t, perm[j], c);
  auto a = enc.forward(x), b = enc.forward(p);
  double diff = 0;
  for (Index i = 0; i < a.size(); ++i) diff += std::abs(a[i] - b[i]);
  EXPECT_GT(diff, 1e-3);
}

TEST(SkeletonEncoder, GradientCheck) {
  Rng rng(6);
  SkeletonEncoder<double> enc(SkeletonEncoderConfig{}, 8, 4, 2, rng);
  auto x = randn({2, 8, 4, 2}, rng);
  StateList<double> st;
  enc.collect("enc", st);
  check_gradients(
      x, st, [&](const Tensor<double>& in) { return enc.forward(in); },
      [&](const Tensor<double>& g) { return enc.backward(g); }, rng);
}

TEST(ProjectionHead, ShapesIncludingEmptyBatch) {
  Rng rng(7);
  ProjectionHead<float> head(ProjectionHeadConfig{128, 128, 128}, rng);
  EXPECT_EQ(head.forward(randn<float>({4, 128}, rng)).shape(), (Shape{4, 128}));
  EXPECT_EQ(head.forward(Tensor<float>({0, 128})).shape(), (Shape{0, 128}));
  EXPECT_THROW(head.forward(Tensor<float>({2, 64})), std::invalid_argument);
}

TEST(ProjectionHead, GradientCheck) {
  Rng rng(8);
  ProjectionHead<double> head(ProjectionHeadConfig{5, 5, 3}, rng);
  auto x = randn({4, 5}, rng);
  StateList<double> st;
  head.collect("head", st);
  check_gradients(
      x, st, [&](const Tensor<double>& in) { return head.forward(in); },
      [&](const Tensor<double>& g) { return head.backward(g); }, rng);
}

TEST(FusionClassifier, ShapeAndConstantResponseToZeros) {
  Rng rng(9);
  FusionClassifier<float> fc(128, 512, FusionHeadConfig{256, 27}, rng);
  EXPECT_EQ(fc.forward(randn<float>({1, 128}, rng), randn<float>({1, 512}, rng)).shape(), (Shape{1, 27}));
  fc.set_training(false);
  auto y = fc.forward(Tensor<float>({3, 128}), Tensor<float>({3, 512}));
  for (Index k = 0; k < 27; ++k) {
    EXPECT_EQ(y(0, k), y(1, k));
    EXPECT_EQ(y(0, k), y(2, k));
  }
  EXPECT_THROW(fc.forward(Tensor<float>({1, 100}), Tensor<float>({1, 512})), std::invalid_argument);
}

TEST(FusionClassifier, GradientCheck) {
  Rng rng(10);
  FusionClassifier<double> fc(4, 6, FusionHeadConfig{5, 3}, rng);
  auto xi = randn({4, 4}, rng), xs = randn({4, 6}, rng);
  StateList<double> st;
  fc.collect("fusion", st);
  // Inertial side, then skeleton side, each with the other input held fixed.
  check_gradients(
      xi, st, [&](const Tensor<double>& in) { return fc.forward(in, xs); },
      [&](const Tensor<double>& g) { return fc.backward(g).first; }, rng);
  check_gradients(
      xs, st, [&](const Tensor<double>& in) { return fc.forward(xi, in); },
      [&](const Tensor<double>& g) { return fc.backward(g).second; }, rng);
}

TEST(Conv2d, MatchesDirectConvolution) {
  Rng rng(11);
  Conv2d<double> conv(3, 4, 3, 5, rng);
  StateList<double> st;
  conv.collect("c", st);
  auto x = randn({2, 3, 6, 7}, rng);
  auto y = conv.forward(x);
  const Tensor<double>& w = *st[0].value;
  const Tensor<double>& b = *st[1].value;
  reference::Matrix wm = cmkm::testing::to_matrix(w);
  std::vector<double> bias(b.values().begin(), b.values().end());
  for (Index s = 0; s < 2; ++s) {
    std::vector<std::vector<std::vector<double>>> img(3, std::vector<std::vector<double>>(6, std::vector<double>(7)));
    for (Index c = 0; c < 3; ++c)
      for (Index r = 0; r < 6; ++r)
        for (Index q = 0; q < 7; ++q) img[c][r][q] = x(s, c, r, q);
    auto ref = reference::conv2d_same(img, wm, bias, 3, 5);
    for (Index o = 0; o < 4; ++o)
      for (Index r = 0; r < 6; ++r)
        for (Index q = 0; q < 7; ++q) EXPECT_NEAR(y(s, o, r, q), ref[o][r][q], 1e-12);
  }
}

TEST(Checkpoint, RoundTripIsBitIdenticalInEvalMode) {
  cmkm::testing::TempDir dir("ckpt");
  InputDims dims{20, 6, 5, 3};
  for (Modality m : {Modality::inertial, Modality::skeleton}) {
    ModalityNet net = make_net(m, ModelConfig{}, dims, 42);
    net.encoder.set_training(false);
    Rng rng(1);
    auto x = m == Modality::inertial ? randn<float>({3, 20, 6}, rng) : randn<float>({3, 20, 5, 3}, rng);
    auto before = net.encoder.forward(x);
    const auto path = dir.path() / "net.cmkt";
    save_net(path, net, {{"epoch", 7}});
    nlohmann::json meta;
    ModalityNet loaded = load_net(path, &meta);
    EXPECT_EQ(meta.at("epoch"), 7);
    EXPECT_EQ(loaded.encoder.modality(), m);
    EXPECT_EQ(loaded.encoder.forward(x), before);
    EXPECT_EQ(state_hash(loaded.state()), state_hash(net.state()));
  }
}

TEST(Checkpoint, MismatchedStateIsRejected) {
  cmkm::testing::TempDir dir("ckpt2");
  ModalityNet a = make_net(Modality::inertial, ModelConfig{}, InputDims{20, 6, 5, 3}, 1);
  ModalityNet b = make_net(Modality::inertial, ModelConfig{}, InputDims{20, 3, 5, 3}, 1);
  save_state(dir.path() / "a.cmkt", a.state(), nlohmann::json::object());
  EXPECT_THROW(load_state(dir.path() / "a.cmkt", b.state()), ValidationError);
}
