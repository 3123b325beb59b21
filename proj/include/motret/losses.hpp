#pragma once

#include <optional>

#include "motret/autodiff.hpp"
#include "motret/tensor.hpp"

namespace motret {

// Linear warm-up weight: 0 before t_start, 1 after t_end, linear in between.
struct SwipeConfig {
  int t_start = 40;
  int t_end = 100;
  void validate() const;
};
double lambda_schedule(int epoch, const SwipeConfig& cfg);

// Pairwise cosine similarities: out[i][j] = <X_i, Y_j> / (|X_i| |Y_j|).
ad::Var cosine_matrix(const ad::Var& X, const ad::Var& Y);

// Symmetric InfoNCE over a similarity matrix whose diagonal holds the
// positive pairs; temperature is learned through log_tau.
ad::Var info_nce(const ad::Var& sim, const ad::Var& log_tau);

// InfoNCE with wrong-negative filtering: off-diagonal pairs whose teacher
// text similarity reaches the threshold are removed from both denominators.
ad::Var info_nce_filtered(const ad::Var& sim, const ad::Var& log_tau,
                          const Tensor& teacher_text_sim, double threshold);

// Column-stochastic score distributions: column j of t2m is a softmax over
// motions for text j, and so on. Uni-modal matrices keep their diagonal
// unless include_diagonal is false.
struct ScoreDistributions {
  ad::Var t2m, m2t, m2m, t2t;  // each [B, B], columns sum to 1
};
ScoreDistributions score_distributions(const ad::Var& t_feats, const ad::Var& m_feats,
                                       double dist_temperature = 1.0,
                                       bool include_diagonal = true);

// Column-stochastic reference distribution from a frozen teacher's text
// similarity matrix.
Tensor teacher_distribution(const Tensor& teacher_sim, double teacher_temperature = 1.0,
                            bool include_diagonal = true);

// (KL(p||q) + KL(q||p)) / 2 over strictly positive distribution vectors.
ad::Var symm_kl(const ad::Var& p, const ad::Var& q);

// Pulls uni-modal score distributions toward the cross-modal ones (and vice
// versa, symmetrically), averaged over columns.
ad::Var loss_cross_to_uni(const ScoreDistributions& d);

// Non-symmetric KL from the fixed teacher distribution to both uni-modal
// distributions, averaged over columns.
ad::Var loss_teacher_to_uni(const Tensor& s_text_gt, const ScoreDistributions& d);

struct CcclOptions {
  double dist_temperature = 1.0;
  double teacher_temperature = 1.0;
  bool include_diagonal = true;
  // When set, the InfoNCE term filters teacher-similar negatives at this
  // threshold; unset reproduces the plain InfoNCE term.
  std::optional<double> nce_filter_threshold;
};

struct CcclTerms {
  ad::Var total;
  ad::Var nce;
  ad::Var cross_to_uni;
  ad::Var teacher_to_uni;
  double lambda = 0.0;
};

// total = nce + lambda * cross_to_uni + (1 - lambda) * teacher_to_uni.
CcclTerms cccl_total(const ad::Var& t_feats, const ad::Var& m_feats, const ad::Var& log_tau,
                     const Tensor& teacher_sim, double lambda, const CcclOptions& opt = {});

}  // namespace motret
