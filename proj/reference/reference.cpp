#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace cmkm::reference {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

Matrix cosine_matrix(const Matrix& a, const Matrix& b) {
  Matrix out(a.size(), std::vector<double>(b.size()));
  for (std::size_t j = 0; j < a.size(); ++j)
    for (std::size_t k = 0; k < b.size(); ++k) out[j][k] = cosine(a[j], b[k]);
  return out;
}

namespace {

double delta(const std::vector<double>& a, const std::vector<double>& b, double tau) {
  return std::exp(cosine(a, b) / tau);
}

bool contains(const std::vector<std::size_t>& v, std::size_t x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace

double nt_xent(const Matrix& z1, const Matrix& z2, double tau, bool mean) {
  const std::size_t n = z1.size();
  Matrix views(z1);
  views.insert(views.end(), z2.begin(), z2.end());
  double total = 0;
  for (std::size_t a = 0; a < 2 * n; ++a) {
    const std::size_t pos = a < n ? a + n : a - n;
    double den = 0;
    for (std::size_t b = 0; b < 2 * n; ++b)
      if (b != a) den += delta(views[a], views[b], tau);
    total += -std::log(delta(views[a], views[pos], tau) / den);
  }
  return mean ? total / static_cast<double>(2 * n) : total;
}

double cmc(const Matrix& zi, const Matrix& zs, double tau, bool mean) {
  const std::size_t n = zi.size();
  double total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    double den_is = 0, den_si = 0;
    for (std::size_t k = 0; k < n; ++k) {
      den_is += delta(zi[j], zs[k], tau);
      den_si += delta(zs[j], zi[k], tau);
    }
    total += -std::log(delta(zi[j], zs[j], tau) / den_is);
    total += -std::log(delta(zs[j], zi[j], tau) / den_si);
  }
  return mean ? total / static_cast<double>(n) : total;
}

std::vector<std::size_t> topk_by_sort(const Matrix& s, std::size_t j, std::size_t k) {
  std::vector<std::size_t> idx;
  for (std::size_t l = 0; l < s.size(); ++l)
    if (l != j) idx.push_back(l);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (s[j][a] != s[j][b]) return s[j][a] > s[j][b];
    return a < b;
  });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

AnchorSets anchor_sets(const Matrix& s_same, const Matrix& s_other, std::size_t j, std::size_t k) {
  const std::size_t n = s_same.size();
  AnchorSets a;
  a.intra_pos = topk_by_sort(s_same, j, k);
  const auto other = topk_by_sort(s_other, j, k);
  a.cross_pos.push_back(j);
  a.cross_pos.insert(a.cross_pos.end(), other.begin(), other.end());
  for (std::size_t l = 0; l < n; ++l) {
    if (l == j || contains(a.intra_pos, l) || contains(other, l)) continue;
    a.cross_neg.push_back(l);
    a.intra_neg.push_back(l);
  }
  return a;
}

double cmkm(const Matrix& zi, const Matrix& zs, const Matrix& si, const Matrix& ss, std::size_t k, double tau,
            bool intra_negatives, bool mean) {
  const std::size_t n = zi.size();
  double total = 0;
  for (int dir = 0; dir < 2; ++dir) {
    const Matrix& same = dir == 0 ? zi : zs;
    const Matrix& cross = dir == 0 ? zs : zi;
    const Matrix& g_same = dir == 0 ? si : ss;
    const Matrix& g_other = dir == 0 ? ss : si;
    for (std::size_t j = 0; j < n; ++j) {
      const AnchorSets a = anchor_sets(g_same, g_other, j, k);
      double num = 0;
      for (std::size_t l : a.cross_pos) num += delta(same[j], cross[l], tau);
      for (std::size_t l : a.intra_pos) num += delta(same[j], same[l], tau);
      double den = num;
      for (std::size_t l : a.cross_neg) den += delta(same[j], cross[l], tau);
      if (intra_negatives)
        for (std::size_t l : a.intra_neg) den += delta(same[j], same[l], tau);
      total += -std::log(num / den);
    }
  }
  return mean ? total / static_cast<double>(n) : total;
}

std::vector<std::vector<std::vector<double>>> conv2d_same(const std::vector<std::vector<std::vector<double>>>& x,
                                                          const Matrix& weight, const std::vector<double>& bias,
                                                          std::size_t kh, std::size_t kw) {
  const std::size_t c_in = x.size(), h = x[0].size(), w = x[0][0].size();
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  std::vector<std::vector<std::vector<double>>> y(weight.size(),
                                                  std::vector<std::vector<double>>(h, std::vector<double>(w)));
  for (std::size_t o = 0; o < weight.size(); ++o)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col) {
        double acc = bias[o];
        for (std::size_t c = 0; c < c_in; ++c)
          for (std::size_t dy = 0; dy < kh; ++dy)
            for (std::size_t dx = 0; dx < kw; ++dx) {
              const long rr = static_cast<long>(r + dy) - ph, cc = static_cast<long>(col + dx) - pw;
              if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
              acc += weight[o][(c * kh + dy) * kw + dx] * x[c][static_cast<std::size_t>(rr)][static_cast<std::size_t>(cc)];
            }
        y[o][r][col] = acc;
      }
  return y;
}

std::vector<int> knn_scan(const Matrix& train, const std::vector<int>& labels, const Matrix& test, std::size_t k) {
  std::vector<int> out;
  for (const auto& q : test) {
    // Selection by repeated scans: the best remaining neighbour each time.
    std::vector<bool> used(train.size(), false);
    std::vector<std::size_t> nn;
    for (std::size_t round = 0; round < std::min(k, train.size()); ++round) {
      std::size_t best = train.size();
      double best_sim = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < train.size(); ++t) {
        if (used[t]) continue;
        const double s = cosine(q, train[t]);
        if (best == train.size() || s > best_sim) {
          best = t;
          best_sim = s;
        }
      }
      used[best] = true;
      nn.push_back(best);
    }
    std::map<int, int> votes;
    int top = 0;
    for (std::size_t t : nn) top = std::max(top, ++votes[labels[t]]);
    for (std::size_t t : nn)
      if (votes[labels[t]] == top) {
        out.push_back(labels[t]);
        break;
      }
  }
  return out;
}

std::vector<double> plateau_trace(const std::vector<double>& losses, double lr, int patience, double factor,
                                  int max_reductions, double threshold) {
  std::vector<double> out;
  double best = std::numeric_limits<double>::infinity();
  int bad = 0, reductions = 0;
  for (double l : losses) {
    if (l < best * (1 - threshold) || best == std::numeric_limits<double>::infinity()) {
      best = l;
      bad = 0;
    } else if (++bad >= patience && reductions < max_reductions) {
      lr *= factor;
      ++reductions;
      bad = 0;
    }
    out.push_back(lr);
  }
  return out;
}

}  // namespace cmkm::reference
