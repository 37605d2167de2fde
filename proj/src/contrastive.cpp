#include "cmkm/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "cmkm/kernels.hpp"

namespace cmkm::contrastive {

using kernels::matmul_blocked;
using kernels::Trans;

Temperature::Temperature(double tau) : tau_(tau) {
  if (!(tau > 0) || !std::isfinite(tau)) throw std::invalid_argument("temperature must be > 0");
}

template <typename Real>
void ProjectionBatch<Real>::validate() const {
  if (inertial.rank() != 2 || skeleton.rank() != 2 || inertial.shape() != skeleton.shape())
    throw std::invalid_argument("projection batch: inertial " + shape_str(inertial.shape()) +
                                " and skeleton " + shape_str(skeleton.shape()) +
                                " must both be N x d");
  for (const Tensor<Real>* t : {&inertial, &skeleton})
    for (Real v : t->values())
      if (!std::isfinite(v)) throw std::invalid_argument("projection batch contains NaN/Inf");
}

template <typename Real>
void GuidanceSimilarity<Real>::validate(double tol) const {
  const Index n = size();
  for (const Tensor<Real>* s : {&inertial, &skeleton}) {
    if (s->rank() != 2 || s->dim(0) != n || s->dim(1) != n)
      throw std::invalid_argument("guidance similarity matrices must both be N x N");
    for (Index j = 0; j < n; ++j) {
      if (std::abs((*s)(j, j) - Real(1)) > tol)
        throw std::invalid_argument("guidance similarity: diagonal must be 1");
      for (Index k = 0; k < n; ++k) {
        const Real v = (*s)(j, k);
        if (!std::isfinite(v) || v < Real(-1) - tol || v > Real(1) + tol)
          throw std::invalid_argument("guidance similarity: entries must lie in [-1, 1]");
        if (std::abs(v - (*s)(k, j)) > tol)
          throw std::invalid_argument("guidance similarity: matrix must be symmetric");
      }
    }
  }
}

template <typename Real>
Tensor<Real> cosine_similarity_matrix(const Tensor<Real>& a, const Tensor<Real>& b, Exec exec) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1) || a.dim(1) < 1)
    throw std::invalid_argument("cosine_similarity_matrix: expected N x d and M x d with d >= 1, got " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const Tensor<Real> ua = kernels::normalize_rows(exec, a);
  const Tensor<Real> ub = kernels::normalize_rows(exec, b);
  Tensor<Real> s({a.dim(0), b.dim(0)});
  matmul_blocked(exec, ua.data(), Trans::no, ub.data(), Trans::yes, s.data(), a.dim(0), a.dim(1),
                 b.dim(0));
  return s;
}

namespace {

// Membership of one candidate embedding in an anchor's loss term.
enum Role : unsigned char { kExcluded = 0, kNegative = 1, kPositive = 2 };

// One InfoNCE term with a positive set:
//   l = -log( sum_pos exp(s/tau) / sum_{pos+neg} exp(s/tau) ).
// Candidates come from up to two similarity rows (cross-modal, then
// intra-modal), visited in index order. Writes dl/ds into the gradient rows.
template <typename Real>
Real masked_info_nce(const Real* cross, const unsigned char* cross_role, Real* grad_cross,
                     const Real* intra, const unsigned char* intra_role, Real* grad_intra, Index n,
                     Real inv_tau) {
  Real den_max = -std::numeric_limits<Real>::infinity();
  Real num_max = -std::numeric_limits<Real>::infinity();
  auto scan_max = [&](const Real* s, const unsigned char* role) {
    if (!s) return;
    for (Index k = 0; k < n; ++k) {
      if (role[k] == kExcluded) continue;
      den_max = std::max(den_max, s[k] * inv_tau);
      if (role[k] == kPositive) num_max = std::max(num_max, s[k] * inv_tau);
    }
  };
  scan_max(cross, cross_role);
  scan_max(intra, intra_role);

  Real den = 0, num = 0;
  auto accumulate = [&](const Real* s, const unsigned char* role) {
    if (!s) return;
    for (Index k = 0; k < n; ++k) {
      if (role[k] == kExcluded) continue;
      den += std::exp(s[k] * inv_tau - den_max);
      if (role[k] == kPositive) num += std::exp(s[k] * inv_tau - num_max);
    }
  };
  accumulate(cross, cross_role);
  accumulate(intra, intra_role);

  const Real log_den = den_max + std::log(den);
  const Real log_num = num_max + std::log(num);

  auto gradient = [&](const Real* s, const unsigned char* role, Real* g) {
    if (!s || !g) return;
    for (Index k = 0; k < n; ++k) {
      if (role[k] == kExcluded) continue;
      const Real l = s[k] * inv_tau;
      Real d = std::exp(l - log_den);
      if (role[k] == kPositive) d -= std::exp(l - log_num);
      g[k] = d * inv_tau;
    }
  };
  gradient(cross, cross_role, grad_cross);
  gradient(intra, intra_role, grad_intra);
  return log_den - log_num;
}

template <typename Real>
Tensor<Real> gram(Exec exec, const Tensor<Real>& u, const Tensor<Real>& v) {
  Tensor<Real> s({u.dim(0), v.dim(0)});
  matmul_blocked(exec, u.data(), Trans::no, v.data(), Trans::yes, s.data(), u.dim(0), u.dim(1),
                 v.dim(0));
  return s;
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& m) {
  Tensor<Real> t({m.dim(1), m.dim(0)});
  for (Index i = 0; i < m.dim(0); ++i)
    for (Index j = 0; j < m.dim(1); ++j) t(j, i) = m(i, j);
  return t;
}

// Role rows for every anchor of one direction.
struct RoleTable {
  Index n = 0;
  std::vector<unsigned char> cross, intra;
  bool has_intra = false;
};

RoleTable roles_from_sets(const std::vector<AnchorSets>& anchors, Index n, bool intra_negatives) {
  RoleTable t;
  t.n = n;
  t.cross.assign(static_cast<std::size_t>(n * n), kExcluded);
  t.intra.assign(static_cast<std::size_t>(n * n), kExcluded);
  for (Index j = 0; j < n; ++j) {
    const AnchorSets& a = anchors[static_cast<std::size_t>(j)];
    unsigned char* cross = t.cross.data() + j * n;
    unsigned char* intra = t.intra.data() + j * n;
    for (Index k : a.cross_neg) cross[k] = kNegative;
    for (Index k : a.cross_pos) cross[k] = kPositive;
    if (intra_negatives)
      for (Index k : a.intra_neg) intra[k] = kNegative;
    for (Index k : a.intra_pos) intra[k] = kPositive;
    if (!a.intra_pos.empty() || (intra_negatives && !a.intra_neg.empty())) t.has_intra = true;
  }
  return t;
}

template <typename Real>
Real reduce_scale(Reduction r, Index anchors) {
  return r == Reduction::mean ? Real(1) / static_cast<Real>(anchors) : Real(1);
}

// Shared engine for the two-modality losses. `roles_i` / `roles_s` describe
// the inertial and skeleton anchors respectively.
template <typename Real>
LossResult<Real> two_modality_loss(const ProjectionBatch<Real>& batch, const RoleTable& roles_i,
                                   const RoleTable& roles_s, Temperature tau, Reduction reduction,
                                   Exec exec) {
  batch.validate();
  const Index n = batch.size(), d = batch.inertial.dim(1);
  LossResult<Real> out;
  out.grad_first = Tensor<Real>(batch.inertial.shape());
  out.grad_second = Tensor<Real>(batch.skeleton.shape());
  if (n == 0) return out;
  const Real inv_tau = static_cast<Real>(1.0 / tau.value());

  const Tensor<Real> ui = kernels::normalize_rows(exec, batch.inertial);
  const Tensor<Real> us = kernels::normalize_rows(exec, batch.skeleton);
  const Tensor<Real> cross_is = gram(exec, ui, us);
  const Tensor<Real> cross_si = transpose(cross_is);
  const bool intra = roles_i.has_intra || roles_s.has_intra;
  Tensor<Real> intra_ii, intra_ss;
  if (intra) {
    intra_ii = gram(exec, ui, ui);
    intra_ss = gram(exec, us, us);
  }

  Tensor<Real> g_is({n, n}), g_si({n, n}), g_ii({n, n}), g_ss({n, n});
  std::vector<Real> loss_is(static_cast<std::size_t>(n)), loss_si(static_cast<std::size_t>(n));
  parallel_for(exec, n, [&](Index j) {
    loss_is[j] = masked_info_nce(cross_is.data() + j * n, roles_i.cross.data() + j * n,
                                 g_is.data() + j * n, intra ? intra_ii.data() + j * n : nullptr,
                                 roles_i.intra.data() + j * n, intra ? g_ii.data() + j * n : nullptr,
                                 n, inv_tau);
    loss_si[j] = masked_info_nce(cross_si.data() + j * n, roles_s.cross.data() + j * n,
                                 g_si.data() + j * n, intra ? intra_ss.data() + j * n : nullptr,
                                 roles_s.intra.data() + j * n, intra ? g_ss.data() + j * n : nullptr,
                                 n, inv_tau);
  });

  const Real scale = reduce_scale<Real>(reduction, n);
  Real sum_is = 0, sum_si = 0;
  for (Index j = 0; j < n; ++j) {
    sum_is += loss_is[j];
    sum_si += loss_si[j];
  }
  out.first_to_second = sum_is * scale;
  out.second_to_first = sum_si * scale;
  out.loss = (sum_is + sum_si) * scale;

  // dL/dU_i = G U_s + (G_ii + G_ii^T) U_i, with G = g_is + g_si^T (and symmetric for U_s).
  Tensor<Real> g_cross({n, n});
  for (Index j = 0; j < n; ++j)
    for (Index k = 0; k < n; ++k) g_cross(j, k) = (g_is(j, k) + g_si(k, j)) * scale;
  Tensor<Real> dui({n, d}), dus({n, d});
  matmul_blocked(exec, g_cross.data(), Trans::no, us.data(), Trans::no, dui.data(), n, n, d);
  matmul_blocked(exec, g_cross.data(), Trans::yes, ui.data(), Trans::no, dus.data(), n, n, d);
  if (intra) {
    Tensor<Real> sym_ii({n, n}), sym_ss({n, n});
    for (Index j = 0; j < n; ++j)
      for (Index k = 0; k < n; ++k) {
        sym_ii(j, k) = (g_ii(j, k) + g_ii(k, j)) * scale;
        sym_ss(j, k) = (g_ss(j, k) + g_ss(k, j)) * scale;
      }
    matmul_blocked(exec, sym_ii.data(), Trans::no, ui.data(), Trans::no, dui.data(), n, n, d, true);
    matmul_blocked(exec, sym_ss.data(), Trans::no, us.data(), Trans::no, dus.data(), n, n, d, true);
  }
  out.grad_first = kernels::normalize_rows_backward(exec, batch.inertial, ui, dui);
  out.grad_second = kernels::normalize_rows_backward(exec, batch.skeleton, us, dus);
  return out;
}

}  // namespace

template <typename Real>
LossResult<Real> nt_xent(const Tensor<Real>& z1, const Tensor<Real>& z2, Temperature tau,
                         Reduction reduction, Exec exec) {
  if (z1.rank() != 2 || z1.shape() != z2.shape())
    throw std::invalid_argument("nt_xent: views must share an N x d shape");
  const Index n = z1.dim(0), d = z1.dim(1), m = 2 * n;
  if (n < 2) throw std::invalid_argument("nt_xent: needs N >= 2 (no negatives otherwise)");
  for (const Tensor<Real>* t : {&z1, &z2})
    for (Real v : t->values())
      if (!std::isfinite(v)) throw std::invalid_argument("nt_xent: embeddings contain NaN/Inf");

  Tensor<Real> z({m, d});
  std::copy(z1.values().begin(), z1.values().end(), z.data());
  std::copy(z2.values().begin(), z2.values().end(), z.data() + n * d);
  const Tensor<Real> u = kernels::normalize_rows(exec, z);
  const Tensor<Real> s = gram(exec, u, u);
  const Real inv_tau = static_cast<Real>(1.0 / tau.value());

  Tensor<Real> g({m, m});
  std::vector<Real> losses(static_cast<std::size_t>(m));
  parallel_for(exec, m, [&](Index a) {
    std::vector<unsigned char> role(static_cast<std::size_t>(m), kNegative);
    role[a] = kExcluded;
    role[a < n ? a + n : a - n] = kPositive;
    losses[a] = masked_info_nce<Real>(s.data() + a * m, role.data(), g.data() + a * m, nullptr,
                                      nullptr, nullptr, m, inv_tau);
  });
  const Real scale = reduce_scale<Real>(reduction, m);
  LossResult<Real> out;
  Real first = 0, second = 0;
  for (Index a = 0; a < n; ++a) first += losses[a];
  for (Index a = n; a < m; ++a) second += losses[a];
  out.first_to_second = first * scale;
  out.second_to_first = second * scale;
  out.loss = (first + second) * scale;

  Tensor<Real> sym({m, m});
  for (Index a = 0; a < m; ++a)
    for (Index b = 0; b < m; ++b) sym(a, b) = (g(a, b) + g(b, a)) * scale;
  Tensor<Real> du({m, d});
  matmul_blocked(exec, sym.data(), Trans::no, u.data(), Trans::no, du.data(), m, m, d);
  const Tensor<Real> dz = kernels::normalize_rows_backward(exec, z, u, du);
  out.grad_first = dz.slice_rows(0, n);
  out.grad_second = dz.slice_rows(n, m);
  return out;
}

template <typename Real>
LossResult<Real> cmc_loss(const ProjectionBatch<Real>& batch, Temperature tau, Reduction reduction,
                          Exec exec) {
  batch.validate();
  const Index n = batch.size();
  if (n < 1) throw std::invalid_argument("cmc_loss: needs N >= 1");
  RoleTable roles;
  roles.n = n;
  roles.cross.assign(static_cast<std::size_t>(n * n), kNegative);
  roles.intra.assign(static_cast<std::size_t>(n * n), kExcluded);
  for (Index j = 0; j < n; ++j) roles.cross[j * n + j] = kPositive;
  return two_modality_loss(batch, roles, roles, tau, reduction, exec);
}

template <typename Real>
MiningSets mine_sets(const GuidanceSimilarity<Real>& guidance, Index k, Exec exec) {
  const Index n = guidance.size();
  if (guidance.inertial.rank() != 2 || guidance.skeleton.shape() != guidance.inertial.shape() ||
      guidance.inertial.dim(1) != n)
    throw std::invalid_argument("mine_sets: guidance matrices must both be N x N");
  if (k < 0 || k > std::max<Index>(n - 1, 0))
    throw std::invalid_argument("mine_sets: K must satisfy 0 <= K <= N-1 (K=" + std::to_string(k) +
                                ", N=" + std::to_string(n) + ")");
  MiningSets sets;
  sets.k = k;
  sets.topk_inertial.resize(static_cast<std::size_t>(n));
  sets.topk_skeleton.resize(static_cast<std::size_t>(n));
  sets.inertial_anchor.resize(static_cast<std::size_t>(n));
  sets.skeleton_anchor.resize(static_cast<std::size_t>(n));

  auto top_k = [&](const Tensor<Real>& s, Index j) {
    std::vector<Index> cand;
    cand.reserve(static_cast<std::size_t>(n));
    for (Index c = 0; c < n; ++c)
      if (c != j) cand.push_back(c);
    auto better = [&](Index a, Index b) {
      const Real va = s(j, a), vb = s(j, b);
      return va > vb || (va == vb && a < b);
    };
    if (k < static_cast<Index>(cand.size()))
      std::nth_element(cand.begin(), cand.begin() + k, cand.end(), better);
    cand.resize(static_cast<std::size_t>(k));
    std::sort(cand.begin(), cand.end(), better);
    return cand;
  };

  parallel_for(exec, n, [&](Index j) {
    auto ti = top_k(guidance.inertial, j);
    auto ts = top_k(guidance.skeleton, j);
    std::vector<unsigned char> mined(static_cast<std::size_t>(n), 0);
    mined[j] = 1;
    for (Index c : ti) mined[c] = 1;
    for (Index c : ts) mined[c] = 1;
    std::vector<Index> negatives;
    for (Index c = 0; c < n; ++c)
      if (!mined[c]) negatives.push_back(c);

    auto sorted_with_self = [j](std::vector<Index> v) {
      v.push_back(j);
      std::sort(v.begin(), v.end());
      return v;
    };
    auto sorted = [](std::vector<Index> v) {
      std::sort(v.begin(), v.end());
      return v;
    };
    AnchorSets& ai = sets.inertial_anchor[j];
    ai.cross_pos = sorted_with_self(ts);
    ai.intra_pos = sorted(ti);
    ai.cross_neg = negatives;
    ai.intra_neg = negatives;
    AnchorSets& as = sets.skeleton_anchor[j];
    as.cross_pos = sorted_with_self(ti);
    as.intra_pos = sorted(ts);
    as.cross_neg = negatives;
    as.intra_neg = negatives;
    sets.topk_inertial[j] = std::move(ti);
    sets.topk_skeleton[j] = std::move(ts);
  });
  return sets;
}

template <typename Real>
LossResult<Real> cmkm_loss(const ProjectionBatch<Real>& batch, const MiningSets& sets,
                           Temperature tau, bool use_intra_negatives, Reduction reduction,
                           Exec exec) {
  batch.validate();
  const Index n = batch.size();
  if (static_cast<Index>(sets.inertial_anchor.size()) != n ||
      static_cast<Index>(sets.skeleton_anchor.size()) != n)
    throw std::invalid_argument("cmkm_loss: mining sets do not match the batch size");
  if (n < 2 && (sets.k >= 1 || use_intra_negatives))
    throw std::invalid_argument("cmkm_loss: needs N >= 2 with mining or intra negatives");
  const RoleTable roles_i = roles_from_sets(sets.inertial_anchor, n, use_intra_negatives);
  const RoleTable roles_s = roles_from_sets(sets.skeleton_anchor, n, use_intra_negatives);
  LossResult<Real> out = two_modality_loss(batch, roles_i, roles_s, tau, reduction, exec);

  Index starved = 0;
  for (Index j = 0; j < n; ++j) {
    const AnchorSets& a = sets.inertial_anchor[j];
    if (a.cross_neg.empty() && (!use_intra_negatives || a.intra_neg.empty())) ++starved;
  }
  if (starved > 0)
    out.warnings.push_back(std::to_string(starved) +
                           " anchor(s) have no negatives; their loss terms are 0");

  if (sets.k > 0) {
    const Tensor<Real> sim = cosine_similarity_matrix(batch.inertial, batch.skeleton, exec);
    double acc = 0;
    Index count = 0;
    for (Index j = 0; j < n; ++j) {
      for (Index c : sets.topk_skeleton[j]) acc += sim(j, c), ++count;
      for (Index c : sets.topk_inertial[j]) acc += sim(c, j), ++count;
    }
    out.mean_mined_similarity = count ? static_cast<Real>(acc / static_cast<double>(count)) : Real(0);
  }
  return out;
}

template <typename Real>
LossResult<Real> cmkm_loss(const ProjectionBatch<Real>& batch, const GuidanceSimilarity<Real>& guidance,
                           Index k, Temperature tau, bool use_intra_negatives, Reduction reduction,
                           Exec exec) {
  if (guidance.size() != batch.size())
    throw std::invalid_argument("cmkm_loss: guidance and batch sizes differ");
  return cmkm_loss(batch, mine_sets(guidance, k, exec), tau, use_intra_negatives, reduction, exec);
}

template <typename Real>
GuidanceSimilarity<Real> guidance_from_features(const Tensor<Real>& inertial_features,
                                                const Tensor<Real>& skeleton_features, Exec exec) {
  if (inertial_features.rank() != 2 || skeleton_features.rank() != 2 ||
      inertial_features.dim(0) != skeleton_features.dim(0))
    throw std::invalid_argument("guidance_from_features: feature batches must be N x d");
  GuidanceSimilarity<Real> g{cosine_similarity_matrix(inertial_features, inertial_features, exec),
                             cosine_similarity_matrix(skeleton_features, skeleton_features, exec)};
  // Rounding can leave the diagonal a few ulps off 1 and the matrix slightly
  // asymmetric; pin both exactly so downstream validation and ranking agree.
  for (Tensor<Real>* s : {&g.inertial, &g.skeleton}) {
    const Index n = s->dim(0);
    for (Index j = 0; j < n; ++j) {
      (*s)(j, j) = Real(1);
      for (Index c = j + 1; c < n; ++c) {
        const Real v = std::clamp((*s)(j, c), Real(-1), Real(1));
        (*s)(j, c) = v;
        (*s)(c, j) = v;
      }
    }
  }
  return g;
}

#define CMKM_INSTANTIATE(Real)                                                                     \
  template struct ProjectionBatch<Real>;                                                          \
  template struct GuidanceSimilarity<Real>;                                                       \
  template Tensor<Real> cosine_similarity_matrix<Real>(const Tensor<Real>&, const Tensor<Real>&,  \
                                                       Exec);                                     \
  template LossResult<Real> nt_xent<Real>(const Tensor<Real>&, const Tensor<Real>&, Temperature, \
                                          Reduction, Exec);                                       \
  template LossResult<Real> cmc_loss<Real>(const ProjectionBatch<Real>&, Temperature, Reduction,  \
                                           Exec);                                                 \
  template MiningSets mine_sets<Real>(const GuidanceSimilarity<Real>&, Index, Exec);             \
  template LossResult<Real> cmkm_loss<Real>(const ProjectionBatch<Real>&, const MiningSets&,      \
                                            Temperature, bool, Reduction, Exec);                  \
  template LossResult<Real> cmkm_loss<Real>(const ProjectionBatch<Real>&,                         \
                                            const GuidanceSimilarity<Real>&, Index, Temperature,  \
                                            bool, Reduction, Exec);                               \
  template GuidanceSimilarity<Real> guidance_from_features<Real>(const Tensor<Real>&,             \
                                                                 const Tensor<Real>&, Exec);

CMKM_INSTANTIATE(float)
CMKM_INSTANTIATE(double)

#undef CMKM_INSTANTIATE

}  // namespace cmkm::contrastive
