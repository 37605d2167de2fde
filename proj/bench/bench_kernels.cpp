// Kernel benchmarks: serial vs OpenMP execution of the data-parallel paths,
// and the scalar reference oracles vs the optimized implementations.
//
//   build/bench_kernels --benchmark_filter=Cmkm
#include <benchmark/benchmark.h>

#include <vector>

#include "cmkm/contrastive.hpp"
#include "cmkm/evaluate.hpp"
#include "cmkm/kernels.hpp"
#include "cmkm/random.hpp"
#include "reference.hpp"

using namespace cmkm;
using namespace cmkm::contrastive;

namespace {

template <typename Real>
Tensor<Real> randn(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<Real> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Real>(normal(rng, 0.0, 1.0));
  return t;
}

reference::Matrix to_matrix(const Tensor<float>& t) {
  reference::Matrix m(static_cast<std::size_t>(t.dim(0)), std::vector<double>(static_cast<std::size_t>(t.dim(1))));
  for (Index i = 0; i < t.dim(0); ++i)
    for (Index j = 0; j < t.dim(1); ++j) m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = t(i, j);
  return m;
}

Exec exec_of(const benchmark::State& s) { return s.range(1) ? Exec::parallel : Exec::serial; }

// Args: {batch size, parallel?}
void batch_args(benchmark::internal::Benchmark* b) {
  for (int n : {64, 256})
    for (int p : {0, 1}) b->Args({n, p});
}

void BM_CosineMatrix(benchmark::State& s) {
  const Index n = s.range(0);
  const auto a = randn<float>({n, 128}, 1), b = randn<float>({n, 128}, 2);
  for (auto _ : s) benchmark::DoNotOptimize(cosine_similarity_matrix(a, b, exec_of(s)));
}
BENCHMARK(BM_CosineMatrix)->Apply(batch_args);

void BM_NtXent(benchmark::State& s) {
  const Index n = s.range(0);
  const auto a = randn<float>({n, 128}, 3), b = randn<float>({n, 128}, 4);
  for (auto _ : s) benchmark::DoNotOptimize(nt_xent(a, b, Temperature(0.1), Reduction::mean, exec_of(s)));
}
BENCHMARK(BM_NtXent)->Apply(batch_args);

void BM_Cmkm(benchmark::State& s) {
  const Index n = s.range(0);
  const ProjectionBatch<float> batch{randn<float>({n, 128}, 5), randn<float>({n, 128}, 6)};
  const auto g = guidance_from_features(randn<float>({n, 64}, 7), randn<float>({n, 64}, 8));
  for (auto _ : s) benchmark::DoNotOptimize(cmkm_loss(batch, g, 2, Temperature(0.1), true, Reduction::mean, exec_of(s)));
}
BENCHMARK(BM_Cmkm)->Apply(batch_args);

void BM_MineSets(benchmark::State& s) {
  const Index n = s.range(0);
  const auto g = guidance_from_features(randn<float>({n, 64}, 9), randn<float>({n, 64}, 10));
  for (auto _ : s) benchmark::DoNotOptimize(mine_sets(g, 3, exec_of(s)));
}
BENCHMARK(BM_MineSets)->Apply(batch_args);

void BM_MatmulBlocked(benchmark::State& s) {
  const Index n = s.range(0);
  const auto a = randn<float>({n, n}, 11), b = randn<float>({n, n}, 12);
  Tensor<float> c({n, n});
  for (auto _ : s) {
    kernels::matmul_blocked(exec_of(s), a.data(), kernels::Trans::no, b.data(), kernels::Trans::no, c.data(), n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_MatmulBlocked)->Apply(batch_args);

void BM_Knn(benchmark::State& s) {
  const Index n = s.range(0);
  const auto train = randn<float>({4 * n, 128}, 13), test = randn<float>({n, 128}, 14);
  std::vector<int> labels(static_cast<std::size_t>(4 * n));
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 27);
  ExecScope scope(exec_of(s));
  for (auto _ : s) benchmark::DoNotOptimize(evaluate::knn_predict(train, labels, test, 1));
}
BENCHMARK(BM_Knn)->Apply(batch_args);

// Reference oracle vs optimized, same inputs; arg is the batch size.
void BM_CmkmReference(benchmark::State& s) {
  const Index n = s.range(0);
  const auto zi = randn<float>({n, 128}, 5), zs = randn<float>({n, 128}, 6);
  const auto g = guidance_from_features(randn<float>({n, 64}, 7), randn<float>({n, 64}, 8));
  const auto mi = to_matrix(zi), ms = to_matrix(zs), gi = to_matrix(g.inertial), gs = to_matrix(g.skeleton);
  for (auto _ : s) benchmark::DoNotOptimize(reference::cmkm(mi, ms, gi, gs, 2, 0.1, true));
}
BENCHMARK(BM_CmkmReference)->Arg(64);

void BM_CmkmOptimized(benchmark::State& s) {
  const Index n = s.range(0);
  const ProjectionBatch<float> batch{randn<float>({n, 128}, 5), randn<float>({n, 128}, 6)};
  const auto g = guidance_from_features(randn<float>({n, 64}, 7), randn<float>({n, 64}, 8));
  for (auto _ : s)
    benchmark::DoNotOptimize(cmkm_loss(batch, g, 2, Temperature(0.1), true, Reduction::mean, Exec::serial));
}
BENCHMARK(BM_CmkmOptimized)->Arg(64);

void BM_KnnReference(benchmark::State& s) {
  const Index n = s.range(0);
  const auto train = to_matrix(randn<float>({4 * n, 128}, 13)), test = to_matrix(randn<float>({n, 128}, 14));
  std::vector<int> labels(train.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 27);
  for (auto _ : s) benchmark::DoNotOptimize(reference::knn_scan(train, labels, test, 1));
}
BENCHMARK(BM_KnnReference)->Arg(64);

// Skeleton-encoder sized convolution: 64 x (50 x 20) input, 3 x 3 kernel, 64 outputs.
constexpr Index kC = 64, kH = 50, kW = 20, kO = 64;

void BM_ConvReference(benchmark::State& s) {
  Rng rng(15);
  std::vector<std::vector<std::vector<double>>> x(kC, std::vector<std::vector<double>>(kH, std::vector<double>(kW)));
  for (auto& c : x)
    for (auto& r : c)
      for (auto& v : r) v = normal(rng, 0, 1);
  reference::Matrix w(kO, std::vector<double>(kC * 9));
  for (auto& r : w)
    for (auto& v : r) v = normal(rng, 0, 0.1);
  const std::vector<double> bias(kO, 0.0);
  for (auto _ : s) benchmark::DoNotOptimize(reference::conv2d_same(x, w, bias, 3, 3));
}
BENCHMARK(BM_ConvReference);

void BM_ConvIm2colGemm(benchmark::State& s) {
  const auto x = randn<float>({kC, kH, kW}, 15), w = randn<float>({kO, kC * 9}, 16);
  const kernels::ConvGeometry g{kC, kH, kW, 3, 3, 1, 1};
  std::vector<float> col(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  Tensor<float> y({kO, kH * kW});
  for (auto _ : s) {
    kernels::im2col(x.data(), g, col.data());
    kernels::matmul(w.data(), kernels::Trans::no, col.data(), kernels::Trans::no, y.data(), kO, g.col_rows(),
                    g.col_cols());
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_ConvIm2colGemm);

}  // namespace

BENCHMARK_MAIN();
