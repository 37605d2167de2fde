#pragma once

#include <string>
#include <vector>

#include "cmkm/parallel.hpp"
#include "cmkm/tensor.hpp"

// Contrastive objectives over projected embeddings: cosine similarity,
// NT-Xent (single-modality SimCLR), cross-modal InfoNCE (CMC) and the
// mined-positive variant with intra-modality negatives (CMC-CMKM).
//
// Every loss uses delta(a, b) = exp(cos(a, b) / tau).
namespace cmkm::contrastive {

class Temperature {
 public:
  explicit Temperature(double tau);
  double value() const { return tau_; }

 private:
  double tau_;
};

enum class Reduction {
  mean,  // total over anchors divided by the number of samples N (2N views for NT-Xent)
  sum,   // plain sum over anchors
};

template <typename Real>
struct ProjectionBatch {
  Tensor<Real> inertial;  // N x d
  Tensor<Real> skeleton;  // N x d

  Index size() const { return inertial.rank() == 2 ? inertial.dim(0) : 0; }
  void validate() const;
};

/// Intra-modality cosine similarities computed by the frozen guidance encoders.
template <typename Real>
struct GuidanceSimilarity {
  Tensor<Real> inertial;  // N x N
  Tensor<Real> skeleton;  // N x N

  Index size() const { return inertial.rank() == 2 ? inertial.dim(0) : 0; }
  /// Checks shape, symmetry and unit diagonal within `tol`, entries in [-1, 1].
  void validate(double tol = 1e-6) const;
};

/// Index sets for one anchor. For an inertial anchor "cross" indexes skeleton
/// embeddings and "intra" indexes inertial embeddings; for a skeleton anchor
/// the roles swap. cross_pos always contains the anchor's own index.
struct AnchorSets {
  std::vector<Index> cross_pos;
  std::vector<Index> intra_pos;
  std::vector<Index> cross_neg;
  std::vector<Index> intra_neg;
};

struct MiningSets {
  Index k = 0;
  std::vector<std::vector<Index>> topk_inertial;  // per anchor, rank order
  std::vector<std::vector<Index>> topk_skeleton;
  std::vector<AnchorSets> inertial_anchor;
  std::vector<AnchorSets> skeleton_anchor;
};

template <typename Real>
struct LossResult {
  Real loss = 0;
  Tensor<Real> grad_first;   // dL/d(first input): z_i, or z1 for NT-Xent
  Tensor<Real> grad_second;  // dL/d(second input): z_s, or z2
  Real first_to_second = 0;  // reduced i->s component
  Real second_to_first = 0;  // reduced s->i component
  Real mean_mined_similarity = 0;
  std::vector<std::string> warnings;
};

/// Entry (j, k) = <a_j, b_k> / (|a_j| |b_k|); rows that are all zero give 0.
template <typename Real>
Tensor<Real> cosine_similarity_matrix(const Tensor<Real>& a, const Tensor<Real>& b,
                                      Exec exec = default_exec());

/// SimCLR NT-Xent over the 2N views [z1; z2]. Requires N >= 2.
template <typename Real>
LossResult<Real> nt_xent(const Tensor<Real>& z1, const Tensor<Real>& z2, Temperature tau,
                         Reduction reduction = Reduction::mean, Exec exec = default_exec());

/// Cross-modal InfoNCE summed over both directions and all anchors.
template <typename Real>
LossResult<Real> cmc_loss(const ProjectionBatch<Real>& batch, Temperature tau,
                          Reduction reduction = Reduction::mean, Exec exec = default_exec());

/// Top-K neighbours of each anchor under each guidance matrix (self excluded,
/// ties to the lowest index), expanded into positive/negative index sets.
/// Every mined index is removed from both negative sets of the anchor.
template <typename Real>
MiningSets mine_sets(const GuidanceSimilarity<Real>& guidance, Index k, Exec exec = default_exec());

template <typename Real>
LossResult<Real> cmkm_loss(const ProjectionBatch<Real>& batch, const MiningSets& sets,
                           Temperature tau, bool use_intra_negatives,
                           Reduction reduction = Reduction::mean, Exec exec = default_exec());

template <typename Real>
LossResult<Real> cmkm_loss(const ProjectionBatch<Real>& batch, const GuidanceSimilarity<Real>& guidance,
                           Index k, Temperature tau, bool use_intra_negatives,
                           Reduction reduction = Reduction::mean, Exec exec = default_exec());

/// Guidance similarities from already extracted frozen-encoder features.
template <typename Real>
GuidanceSimilarity<Real> guidance_from_features(const Tensor<Real>& inertial_features,
                                                const Tensor<Real>& skeleton_features,
                                                Exec exec = default_exec());

}  // namespace cmkm::contrastive
