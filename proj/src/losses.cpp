#include "motret/losses.hpp"

#include <algorithm>
#include <cmath>

#include "motret/common.hpp"

namespace motret {

using ad::Var;

void SwipeConfig::validate() const {
  check_data(t_start < t_end, "swipe config: t_start must be before t_end");
}

double lambda_schedule(int epoch, const SwipeConfig& cfg) {
  cfg.validate();
  double v = static_cast<double>(epoch - cfg.t_start) / (cfg.t_end - cfg.t_start);
  return std::clamp(v, 0.0, 1.0);
}

Var cosine_matrix(const Var& X, const Var& Y) {
  check_data(X.value().shape().size() == 2 && Y.value().shape().size() == 2 &&
                 X.value().shape()[1] == Y.value().shape()[1],
             "cosine_matrix: need [B,d] inputs with matching d");
  auto check_rows = [](const Var& v, const char* side) {
    const Tensor& t = v.value();
    for (int i = 0; i < t.shape()[0]; ++i) {
      double n = 0.0;
      for (int j = 0; j < t.shape()[1]; ++j) n += t.at(i, j) * t.at(i, j);
      check_data(n > 0.0, std::string("cosine_matrix: zero-norm ") + side + " row");
    }
  };
  check_rows(X, "left");
  check_rows(Y, "right");
  Var xn = ad::mul_colvec(X, ad::pow_scalar(ad::row_sum(ad::mul(X, X)), -0.5));
  Var yn = ad::mul_colvec(Y, ad::pow_scalar(ad::row_sum(ad::mul(Y, Y)), -0.5));
  return ad::matmul(xn, ad::transpose2(yn));
}

namespace {

// -(1/B) sum_i [log softmax_row(logits)_ii + log softmax_col(logits)_ii]
Var nce_of_logits(const Var& logits) {
  const int B = logits.value().shape()[0];
  Var row = ad::sum_all(ad::diag(ad::log_softmax_lastdim(logits)));
  Var col = ad::sum_all(ad::diag(ad::log_softmax_lastdim(ad::transpose2(logits))));
  return ad::scale(ad::add(row, col), -1.0 / B);
}

// column-wise softmax, keeping the column-stochastic orientation
Var softmax_columns(const Var& x) {
  return ad::transpose2(ad::softmax_lastdim(ad::transpose2(x)));
}

// sum over columns j of KL(A_j || B_j) for column-stochastic matrices;
// entries that are exactly zero on both sides (excluded diagonals) are
// lifted to 1 so they contribute 0 and pass no gradient through softmax
Var kl_columns_total(const Var& A, const Var& B) {
  const Tensor& a = A.value();
  const Tensor& b = B.value();
  Tensor bump(a.shape());
  bool any = false;
  for (size_t i = 0; i < a.vec().size(); ++i)
    if (a.vec()[i] == 0.0 && b.vec()[i] == 0.0) {
      bump.vec()[i] = 1.0;
      any = true;
    }
  Var as = any ? ad::add(A, Var::constant(bump)) : A;
  Var bs = any ? ad::add(B, Var::constant(std::move(bump))) : B;
  return ad::sum_all(ad::mul(as, ad::sub(ad::vlog(as), ad::vlog(bs))));
}

Var symm_kl_columns_total(const Var& A, const Var& B) {
  return ad::scale(ad::add(kl_columns_total(A, B), kl_columns_total(B, A)), 0.5);
}

}  // namespace

Var info_nce(const Var& sim, const Var& log_tau) {
  const auto& s = sim.value().shape();
  check_data(s.size() == 2 && s[0] == s[1] && s[0] >= 2, "info_nce: need square sim with B >= 2");
  check_numeric(sim.value().all_finite(), "info_nce: non-finite similarity");
  Var logits = ad::mul_scalar_var(sim, ad::vexp(ad::neg(log_tau)));
  return nce_of_logits(logits);
}

Var info_nce_filtered(const Var& sim, const Var& log_tau, const Tensor& teacher_text_sim,
                      double threshold) {
  const auto& s = sim.value().shape();
  check_data(s.size() == 2 && s[0] == s[1] && s[0] >= 2,
             "info_nce_filtered: need square sim with B >= 2");
  check_data(teacher_text_sim.shape() == sim.value().shape(),
             "info_nce_filtered: teacher matrix shape mismatch");
  check_numeric(sim.value().all_finite(), "info_nce_filtered: non-finite similarity");
  const int B = s[0];
  Tensor mask({B, B});  // 0 where kept, -inf-ish where filtered
  bool any = false;
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < B; ++j)
      if (i != j && teacher_text_sim.at(i, j) >= threshold) {
        mask.at(i, j) = -1e30;
        any = true;
      }
  Var logits = ad::mul_scalar_var(sim, ad::vexp(ad::neg(log_tau)));
  if (any) logits = ad::add(logits, Var::constant(std::move(mask)));
  return nce_of_logits(logits);
}

ScoreDistributions score_distributions(const Var& t_feats, const Var& m_feats,
                                       double dist_temperature, bool include_diagonal) {
  check_data(t_feats.value().shape()[0] >= 2, "score_distributions: need B >= 2");
  check_data(t_feats.value().shape() == m_feats.value().shape(),
             "score_distributions: feature shape mismatch");
  check_data(dist_temperature > 0.0, "score_distributions: temperature must be positive");
  const int B = t_feats.value().shape()[0];
  const double inv = 1.0 / dist_temperature;

  // mt[i][j] = s(m_i, t_j): column j is the candidate-motion axis for text j
  Var mt = ad::scale(cosine_matrix(m_feats, t_feats), inv);
  Var mm = ad::scale(cosine_matrix(m_feats, m_feats), inv);
  Var tt = ad::scale(cosine_matrix(t_feats, t_feats), inv);

  auto drop_diag = [&](const Var& x) {
    Tensor d({B, B});
    for (int i = 0; i < B; ++i) d.at(i, i) = -1e30;
    return ad::add(x, Var::constant(std::move(d)));
  };
  Var tm = ad::transpose2(mt);
  if (!include_diagonal) {
    // all four must share support so the KL consistency terms stay finite
    mt = drop_diag(mt);
    tm = drop_diag(tm);
    mm = drop_diag(mm);
    tt = drop_diag(tt);
  }

  ScoreDistributions out;
  out.t2m = softmax_columns(mt);
  out.m2t = softmax_columns(tm);
  out.m2m = softmax_columns(mm);
  out.t2t = softmax_columns(tt);
  return out;
}

Tensor teacher_distribution(const Tensor& teacher_sim, double teacher_temperature,
                            bool include_diagonal) {
  const auto& s = teacher_sim.shape();
  check_data(s.size() == 2 && s[0] == s[1] && s[0] >= 2,
             "teacher_distribution: need square matrix with B >= 2");
  check_data(teacher_temperature > 0.0, "teacher_distribution: temperature must be positive");
  const int B = s[0];
  Tensor out({B, B});
  for (int j = 0; j < B; ++j) {
    double mx = -1e300;
    for (int i = 0; i < B; ++i)
      if (include_diagonal || i != j) mx = std::max(mx, teacher_sim.at(i, j) / teacher_temperature);
    double z = 0.0;
    for (int i = 0; i < B; ++i) {
      if (!include_diagonal && i == j) continue;
      z += std::exp(teacher_sim.at(i, j) / teacher_temperature - mx);
    }
    for (int i = 0; i < B; ++i) {
      if (!include_diagonal && i == j) continue;
      out.at(i, j) = std::exp(teacher_sim.at(i, j) / teacher_temperature - mx) / z;
    }
  }
  return out;
}

Var symm_kl(const Var& p, const Var& q) {
  check_data(p.value().shape() == q.value().shape(), "symm_kl: shape mismatch");
  auto check_dist = [](const Var& v) {
    double sum = 0.0;
    for (double x : v.value().vec()) {
      check_data(x > 0.0, "symm_kl: zero probability entry");
      sum += x;
    }
    check_data(std::abs(sum - 1.0) < 1e-6, "symm_kl: input does not sum to 1");
  };
  check_dist(p);
  check_dist(q);
  Var kl_pq = ad::sum_all(ad::mul(p, ad::sub(ad::vlog(p), ad::vlog(q))));
  Var kl_qp = ad::sum_all(ad::mul(q, ad::sub(ad::vlog(q), ad::vlog(p))));
  return ad::scale(ad::add(kl_pq, kl_qp), 0.5);
}

Var loss_cross_to_uni(const ScoreDistributions& d) {
  const int B = d.t2m.value().shape()[0];
  Var to_m2m = ad::add(symm_kl_columns_total(d.t2m, d.m2m), symm_kl_columns_total(d.m2t, d.m2m));
  Var to_t2t = ad::add(symm_kl_columns_total(d.t2m, d.t2t), symm_kl_columns_total(d.m2t, d.t2t));
  // average the paired divergences, then average over columns; Eq-wise the
  // two uni-modal targets contribute additively
  return ad::scale(ad::add(to_m2m, to_t2t), 0.5 / B);
}

Var loss_teacher_to_uni(const Tensor& s_text_gt, const ScoreDistributions& d) {
  check_data(s_text_gt.shape() == d.t2t.value().shape(),
             "loss_teacher_to_uni: teacher distribution shape mismatch");
  const int B = s_text_gt.shape()[0];
  Var gt = Var::constant(s_text_gt);
  Var to_t2t = kl_columns_total(gt, d.t2t);
  Var to_m2m = kl_columns_total(gt, d.m2m);
  return ad::scale(ad::add(to_t2t, to_m2m), 1.0 / B);
}

CcclTerms cccl_total(const Var& t_feats, const Var& m_feats, const Var& log_tau,
                     const Tensor& teacher_sim, double lambda, const CcclOptions& opt) {
  check_data(lambda >= 0.0 && lambda <= 1.0, "cccl_total: lambda must lie in [0,1]");
  Var sim = cosine_matrix(t_feats, m_feats);

  CcclTerms terms;
  terms.lambda = lambda;
  terms.nce = opt.nce_filter_threshold
                  ? info_nce_filtered(sim, log_tau, teacher_sim, *opt.nce_filter_threshold)
                  : info_nce(sim, log_tau);
  ScoreDistributions d =
      score_distributions(t_feats, m_feats, opt.dist_temperature, opt.include_diagonal);
  Tensor gt = teacher_distribution(teacher_sim, opt.teacher_temperature, opt.include_diagonal);
  terms.cross_to_uni = loss_cross_to_uni(d);
  terms.teacher_to_uni = loss_teacher_to_uni(gt, d);
  terms.total = ad::add(terms.nce, ad::add(ad::scale(terms.cross_to_uni, lambda),
                                           ad::scale(terms.teacher_to_uni, 1.0 - lambda)));
  return terms;
}

}  // namespace motret
