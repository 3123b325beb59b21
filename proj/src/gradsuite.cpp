#include "motret/gradsuite.hpp"

#include <algorithm>

#include "motret/generative.hpp"
#include "motret/losses.hpp"
#include "motret/motion_encoder.hpp"
#include "motret/text.hpp"

namespace motret {

namespace {

Tensor rand_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.vec()) v = rng.normal() * scale;
  return t;
}

// Symmetric caption-similarity stand-in with a unit diagonal.
Tensor rand_teacher(int n, Rng& rng) {
  Tensor s({n, n});
  for (int i = 0; i < n; ++i) {
    s.at(i, i) = 1.0;
    for (int j = 0; j < i; ++j) {
      const double v = 0.5 + 0.45 * std::sin(rng.normal());
      s.at(i, j) = v;
      s.at(j, i) = v;
    }
  }
  return s;
}

MotionSequence rand_motion(int T, Rng& rng) {
  MotionSequence m;
  m.fps = 20.0;
  m.body = Tensor({T, kBodyJoints, kBodyFeatDim});
  m.root = Tensor({T, kRootDim});
  m.feet = Tensor({T, kFeetDim});
  for (double& v : m.body.vec()) v = rng.uniform(-1.0, 1.0);
  for (double& v : m.root.vec()) v = rng.uniform(-1.0, 1.0);
  for (double& v : m.feet.vec()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return m;
}

struct Suite {
  uint64_t seed;
  GradSuiteResult result;

  void run(const std::string& op, const LossFn& fn, std::vector<ad::Var> leaves,
           int coords_per_leaf) {
    std::vector<std::string> names;
    names.reserve(leaves.size());
    for (size_t i = 0; i < leaves.size(); ++i) names.push_back(op + "#" + std::to_string(i));
    Rng pick = Rng::derive(seed, 0x9c0de, result.entries.size());
    GradCheckResult r = grad_check(fn, leaves, names, 1e-5, coords_per_leaf, &pick);
    result.entries.push_back({op, r.max_rel_err, r.coords_checked});
    result.worst = std::max(result.worst, r.max_rel_err);
  }
};

}  // namespace

GradSuiteResult run_gradient_suite(uint64_t seed) {
  Suite suite{seed, {}};
  const int B = 3, d = 5, T = 4;
  Rng rng = Rng::derive(seed, 0x6ead, 1);

  // ---- latent sampling and generative losses ----
  {
    ad::Var mu = ad::Var::leaf(rand_tensor({d}, rng));
    ad::Var lv = ad::Var::leaf(rand_tensor({d}, rng, 0.3));
    Tensor noise = rand_tensor({d}, rng);
    suite.run(
        "reparameterize",
        [&noise](const std::vector<ad::Var>& l) {
          LatentSample s = reparameterize({l[0], l[1]}, noise);
          return ad::sum_all(ad::mul(s.z, s.z));
        },
        {mu, lv}, -1);
  }
  {
    nn::ParamStore ps;
    Rng init = Rng::derive(seed, 0xdec, 2);
    DecoderConfig dcfg;
    dcfg.latent_dim = 6;
    dcfg.heads = 2;
    dcfg.ffn_width = 10;
    MotionDecoder dec(ps, "dec", dcfg, init);
    MotionSequence m = rand_motion(T, rng);
    std::vector<ad::Var> leaves = {ad::Var::leaf(rand_tensor({6}, rng))};
    for (const auto& [nm, v] : ps.items()) leaves.push_back(v);
    suite.run(
        "reconstruction",
        [&dec, &m](const std::vector<ad::Var>& l) {
          return loss_reconstruction(m, dec.decode(l[0], m.frames()));
        },
        leaves, 4);
  }
  {
    ad::Var mu_m = ad::Var::leaf(rand_tensor({d}, rng));
    ad::Var lv_m = ad::Var::leaf(rand_tensor({d}, rng, 0.3));
    ad::Var mu_t = ad::Var::leaf(rand_tensor({d}, rng));
    ad::Var lv_t = ad::Var::leaf(rand_tensor({d}, rng, 0.3));
    suite.run(
        "kl_regularizer",
        [](const std::vector<ad::Var>& l) {
          return loss_kl({l[0], l[1]}, {l[2], l[3]});
        },
        {mu_m, lv_m, mu_t, lv_t}, -1);
  }

  // ---- retrieval losses ----
  const Tensor t_init = rand_tensor({B, d}, rng);
  const Tensor m_init = rand_tensor({B, d}, rng);
  const Tensor teacher = rand_teacher(B, rng);
  auto fresh_leaves = [&]() {
    return std::vector<ad::Var>{ad::Var::leaf(t_init), ad::Var::leaf(m_init),
                                ad::Var::leaf(Tensor::scalar(-0.7))};
  };
  suite.run(
      "info_nce",
      [](const std::vector<ad::Var>& l) {
        return info_nce(cosine_matrix(l[0], l[1]), l[2]);
      },
      fresh_leaves(), -1);
  suite.run(
      "info_nce_filtered",
      [&teacher](const std::vector<ad::Var>& l) {
        return info_nce_filtered(cosine_matrix(l[0], l[1]), l[2], teacher, 0.9);
      },
      fresh_leaves(), -1);
  suite.run(
      "cross_to_uni",
      [](const std::vector<ad::Var>& l) {
        return loss_cross_to_uni(score_distributions(l[0], l[1]));
      },
      fresh_leaves(), -1);
  suite.run(
      "teacher_to_uni",
      [&teacher](const std::vector<ad::Var>& l) {
        return loss_teacher_to_uni(teacher_distribution(teacher),
                                   score_distributions(l[0], l[1]));
      },
      fresh_leaves(), -1);
  suite.run(
      "cccl_total",
      [&teacher](const std::vector<ad::Var>& l) {
        return cccl_total(l[0], l[1], l[2], teacher, 0.4).total;
      },
      fresh_leaves(), -1);
  {
    CcclOptions opt;
    opt.include_diagonal = false;
    suite.run(
        "cccl_total_nodiag",
        [&teacher, opt](const std::vector<ad::Var>& l) {
          return cccl_total(l[0], l[1], l[2], teacher, 0.4, opt).total;
        },
        fresh_leaves(), -1);
  }

  // ---- encoders ----
  for (AttentionMode mode : {AttentionMode::FactorizedEncoder,
                             AttentionMode::FactorizedSelfAttention}) {
    nn::ParamStore ps;
    Rng init = Rng::derive(seed, 0xe2c, static_cast<uint64_t>(mode) + 3);
    EncoderConfig ecfg;
    ecfg.depth = 2;
    ecfg.heads = 2;
    ecfg.ffn_width = 10;
    ecfg.model_width = 8;
    ecfg.latent_dim = 6;
    ecfg.attention_mode = mode;
    MotionEncoder enc(ps, "menc", ecfg, init);
    std::vector<MotionSequence> motions;
    for (int b = 0; b < B; ++b) motions.push_back(rand_motion(T, rng));
    std::vector<ad::Var> leaves;
    for (const auto& [nm, v] : ps.items()) leaves.push_back(v);
    suite.run(
        mode == AttentionMode::FactorizedEncoder ? "motion_encoder_fe" : "motion_encoder_fsa",
        [&enc, &motions](const std::vector<ad::Var>&) {
          ad::Var acc;
          for (const MotionSequence& m : motions) {
            LatentGaussianVar g = enc.encode(m);
            ad::Var term = ad::add(ad::sum_all(ad::mul(g.mu, g.mu)),
                                   ad::sum_all(ad::mul(g.log_var, g.log_var)));
            acc = acc.valid() ? ad::add(acc, term) : term;
          }
          return acc;
        },
        leaves, 4);
  }
  {
    nn::ParamStore ps;
    Rng init = Rng::derive(seed, 0x7e7, 9);
    TextEncoderConfig tcfg;
    tcfg.vocab_size = 11;
    tcfg.model_width = 8;
    tcfg.heads = 2;
    tcfg.ffn_width = 10;
    tcfg.depth = 2;
    tcfg.latent_dim = 6;
    TextEncoder tenc(ps, "tenc", tcfg, init);
    std::vector<TokenizedText> txts = {{{1, 5, 3, 2}}, {{4, 9}}, {{6, 1, 7}}};
    std::vector<ad::Var> leaves;
    for (const auto& [nm, v] : ps.items()) leaves.push_back(v);
    suite.run(
        "text_encoder",
        [&tenc, &txts](const std::vector<ad::Var>&) {
          ad::Var acc;
          for (const TokenizedText& t : txts) {
            LatentGaussianVar g = tenc.encode(t);
            ad::Var term = ad::add(ad::sum_all(ad::mul(g.mu, g.mu)),
                                   ad::sum_all(ad::mul(g.log_var, g.log_var)));
            acc = acc.valid() ? ad::add(acc, term) : term;
          }
          return acc;
        },
        leaves, 4);
  }

  return suite.result;
}

}  // namespace motret
