#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include <unistd.h>

#include "cmkm/random.hpp"
#include "cmkm/tensor.hpp"
#include "reference.hpp"

namespace cmkm::testing {

template <typename Real = double>
Tensor<Real> randn(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor<Real> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Real>(normal(rng, 0.0, stddev));
  return t;
}

template <typename Real>
reference::Matrix to_matrix(const Tensor<Real>& t) {
  reference::Matrix m(static_cast<std::size_t>(t.dim(0)), std::vector<double>(static_cast<std::size_t>(t.dim(1))));
  for (Index i = 0; i < t.dim(0); ++i)
    for (Index j = 0; j < t.dim(1); ++j) m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = t(i, j);
  return m;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

/// A random symmetric matrix with unit diagonal and entries in [-1, 1],
/// rounded to a few distinct values so ties actually occur.
inline Tensor<double> random_guidance(Index n, Rng& rng, bool with_ties) {
  Tensor<double> s({n, n});
  for (Index i = 0; i < n; ++i) {
    s(i, i) = 1;
    for (Index j = i + 1; j < n; ++j) {
      double v = uniform(rng, -1, 1);
      if (with_ties) v = std::round(v * 4) / 4;
      s(i, j) = s(j, i) = v;
    }
  }
  return s;
}

/// Max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, floor),
/// where numeric is the central difference of `loss` with step h.
inline double max_grad_error(Tensor<double>& x, const Tensor<double>& analytic, const std::function<double()>& loss,
                             double h = 1e-6, double floor = 1e-6) {
  double worst = 0;
  for (Index i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss();
    x[i] = saved - h;
    const double down = loss();
    x[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double a = analytic[i];
    worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor}));
  }
  return worst;
}

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cmkm_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace cmkm::testing
