#pragma once

#include <cstddef>
#include <vector>

// Scalar reference implementations used as test oracles. Plain loops over
// std::vector in double precision; nothing here calls into the library's
// kernels, so agreement is evidence rather than tautology.
namespace cmkm::reference {

using Matrix = std::vector<std::vector<double>>;

double cosine(const std::vector<double>& a, const std::vector<double>& b);
Matrix cosine_matrix(const Matrix& a, const Matrix& b);

/// Mean (or sum) over the 2N views of -log(pos / sum over the 2N-1 others).
double nt_xent(const Matrix& z1, const Matrix& z2, double tau, bool mean = true);

/// Both directions summed over anchors, divided by N when `mean`.
double cmc(const Matrix& zi, const Matrix& zs, double tau, bool mean = true);

/// Row j's K most similar other indices, by a full sort of (similarity desc, index asc).
std::vector<std::size_t> topk_by_sort(const Matrix& s, std::size_t j, std::size_t k);

struct AnchorSets {
  std::vector<std::size_t> cross_pos, intra_pos, cross_neg, intra_neg;
};

/// Sets for an anchor of the first modality given its own-modality guidance
/// `s_same` and the other modality's `s_other`.
AnchorSets anchor_sets(const Matrix& s_same, const Matrix& s_other, std::size_t j, std::size_t k);

/// Positives and negatives built explicitly per anchor, then per-pair exp/log.
double cmkm(const Matrix& zi, const Matrix& zs, const Matrix& si, const Matrix& ss, std::size_t k,
            double tau, bool intra_negatives, bool mean = true);

/// Direct stride-1 "same"-padded convolution. x: C x H x W, weight: O x (C*kh*kw)
/// in (c, dy, dx) order, bias: O. Returns O x H x W.
std::vector<std::vector<std::vector<double>>> conv2d_same(
    const std::vector<std::vector<std::vector<double>>>& x, const Matrix& weight,
    const std::vector<double>& bias, std::size_t kh, std::size_t kw);

/// k-NN by scanning every training row for each query (cosine, majority vote,
/// ties to the label of the nearest tied neighbour; equal similarities to the
/// lower training index).
std::vector<int> knn_scan(const Matrix& train, const std::vector<int>& labels, const Matrix& test,
                          std::size_t k);

/// Learning rate after each epoch of `losses` under reduce-on-plateau:
/// an epoch improves when loss < best * (1 - threshold); after `patience`
/// consecutive non-improving epochs the rate is multiplied by `factor`, at
/// most `max_reductions` times.
std::vector<double> plateau_trace(const std::vector<double>& losses, double lr, int patience, double factor,
                                  int max_reductions, double threshold);

}  // namespace cmkm::reference
