#include <cmath>
#include <vector>

#include "doctest.h"
#include "motret/generative.hpp"
#include "motret/gradcheck.hpp"
#include "motret/text.hpp"

using namespace motret;

namespace {

MotionSequence rand_motion(int T, uint64_t seed) {
  Rng rng(seed);
  MotionSequence m;
  m.fps = 20.0f;
  m.body = Tensor({T, kBodyJoints, kBodyFeatDim});
  m.root = Tensor({T, kRootDim});
  m.feet = Tensor({T, kFeetDim});
  for (double& v : m.body.vec()) v = rng.uniform(-1.0, 1.0);
  for (double& v : m.root.vec()) v = rng.uniform(-1.0, 1.0);
  for (double& v : m.feet.vec()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return m;
}

LatentGaussianVar gaussian_of(const Tensor& mu, const Tensor& lv) {
  return {ad::Var::leaf(mu), ad::Var::leaf(lv)};
}

}  // namespace

TEST_CASE("reparameterize closed forms") {
  const int d = 5;
  Rng rng(3);
  Tensor mu({d}), lv({d});
  for (double& v : mu.vec()) v = rng.uniform(-2.0, 2.0);
  for (double& v : lv.vec()) v = rng.uniform(-1.0, 1.0);
  auto g = gaussian_of(mu, lv);

  // zero noise -> z = mu
  LatentSample s0 = reparameterize(g, Tensor::zeros({d}));
  CHECK(bit_equal(s0.z.value(), mu));

  // unit variance -> z = mu + noise
  Tensor noise({d});
  for (double& v : noise.vec()) v = rng.normal();
  auto g_unit = gaussian_of(mu, Tensor::zeros({d}));
  LatentSample s1 = reparameterize(g_unit, noise);
  for (int i = 0; i < d; ++i) CHECK(s1.z.value().at(i) == doctest::Approx(mu.at(i) + noise.at(i)));

  // general: z = mu + noise * exp(lv/2)
  LatentSample s2 = reparameterize(g, noise);
  for (int i = 0; i < d; ++i)
    CHECK(s2.z.value().at(i) == doctest::Approx(mu.at(i) + noise.at(i) * std::exp(0.5 * lv.at(i))));
  CHECK(bit_equal(s2.noise, noise));

  CHECK_THROWS_AS(reparameterize(g, Tensor::zeros({d + 1})), DataError);
}

TEST_CASE("reparameterize gradient wrt mu and log variance") {
  const int d = 4;
  Rng rng(7);
  Tensor mu({d}), lv({d}), noise({d});
  for (double& v : mu.vec()) v = rng.uniform(-1.0, 1.0);
  for (double& v : lv.vec()) v = rng.uniform(-1.0, 1.0);
  for (double& v : noise.vec()) v = rng.normal();

  std::vector<ad::Var> leaves{ad::Var::leaf(mu), ad::Var::leaf(lv)};
  auto fn = [&](const std::vector<ad::Var>& xs) {
    LatentGaussianVar g{xs[0], xs[1]};
    LatentSample s = reparameterize(g, noise);
    return ad::sum_all(ad::mul(s.z, s.z));
  };
  auto res = grad_check(fn, leaves, {"mu", "log_var"}, 1e-5);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("decoder output layout, determinism, zero weights") {
  Rng rng(11);
  nn::ParamStore ps;
  DecoderConfig cfg;
  cfg.latent_dim = 8;
  cfg.heads = 2;
  cfg.ffn_width = 12;
  MotionDecoder dec(ps, "dec", cfg, rng);

  Tensor z({8});
  for (double& v : z.vec()) v = rng.uniform(-1.0, 1.0);
  const int T = 6;
  DecodedMotion d = dec.decode(ad::Var::constant(z), T);
  CHECK(d.body.value().shape() == std::vector<int>({T, kBodyJoints, kBodyFeatDim}));
  CHECK(d.root.value().shape() == std::vector<int>({T, kRootDim}));
  CHECK(d.feet.value().shape() == std::vector<int>({T, kFeetDim}));
  CHECK(d.body.value().all_finite());

  DecodedMotion d2 = dec.decode(ad::Var::constant(z), T);
  CHECK(bit_equal(d.body.value(), d2.body.value()));
  CHECK(bit_equal(d.root.value(), d2.root.value()));
  CHECK(bit_equal(d.feet.value(), d2.feet.value()));

  // zeroing the output heads zeroes the decoded motion
  for (const auto& [name, v] : ps.items())
    if (name.find("/out_") != std::string::npos) ps.get(name).mutable_value().fill(0.0);
  DecodedMotion dz = dec.decode(ad::Var::constant(z), T);
  for (double v : dz.body.value().vec()) CHECK(v == 0.0);
  for (double v : dz.root.value().vec()) CHECK(v == 0.0);
  for (double v : dz.feet.value().vec()) CHECK(v == 0.0);

  CHECK_THROWS_AS(dec.decode(ad::Var::constant(z), 0), DataError);
  CHECK_THROWS_AS(dec.decode(ad::Var::constant(Tensor::zeros({9})), 3), DataError);
}

TEST_CASE("decoder body reassembly puts groups at their joint indices") {
  // make each body head emit a constant marker; joint j must carry its group's marker
  Rng rng(13);
  nn::ParamStore ps;
  DecoderConfig cfg;
  cfg.latent_dim = 8;
  cfg.heads = 2;
  cfg.ffn_width = 12;
  MotionDecoder dec(ps, "dec", cfg, rng);

  static const char* kNames[5] = {"left_arm", "right_arm", "left_leg", "right_leg", "torso_head"};
  for (int g = 0; g < 5; ++g) {
    ps.get(std::string("dec/out_") + kNames[g] + "/W").mutable_value().fill(0.0);
    ps.get(std::string("dec/out_") + kNames[g] + "/b").mutable_value().fill(g + 1.0);
  }
  DecodedMotion d = dec.decode(ad::Var::constant(Tensor::zeros({8})), 2);
  for (int g = 0; g < 5; ++g)
    for (int j : cfg.body_groups[static_cast<size_t>(g)])
      for (int t = 0; t < 2; ++t)
        for (int f = 0; f < kBodyFeatDim; ++f) CHECK(d.body.value().at(t, j, f) == g + 1.0);
}

TEST_CASE("reconstruction loss closed forms and oracle") {
  MotionSequence m = rand_motion(4, 21);
  DecodedMotion same{ad::Var::constant(m.body), ad::Var::constant(m.root),
                     ad::Var::constant(m.feet)};
  CHECK(loss_reconstruction(m, same).value().at(0) == 0.0);

  // T=1, exactly three coordinates off by one -> 3.0
  MotionSequence one = rand_motion(1, 22);
  Tensor body = one.body, root = one.root, feet = one.feet;
  body.at(0, 5, 3) += 1.0;
  root.at(0, 2) -= 1.0;
  feet.at(0, 0) += 1.0;
  DecodedMotion off{ad::Var::constant(body), ad::Var::constant(root), ad::Var::constant(feet)};
  CHECK(loss_reconstruction(one, off).value().at(0) == doctest::Approx(3.0));

  // random pair matches a direct elementwise sum
  MotionSequence a = rand_motion(3, 23);
  MotionSequence b = rand_motion(3, 24);
  DecodedMotion db{ad::Var::constant(b.body), ad::Var::constant(b.root), ad::Var::constant(b.feet)};
  double want = 0.0;
  for (int i = 0; i < a.body.numel(); ++i)
    want += std::abs(a.body.vec()[static_cast<size_t>(i)] - b.body.vec()[static_cast<size_t>(i)]);
  for (int i = 0; i < a.root.numel(); ++i)
    want += std::abs(a.root.vec()[static_cast<size_t>(i)] - b.root.vec()[static_cast<size_t>(i)]);
  for (int i = 0; i < a.feet.numel(); ++i)
    want += std::abs(a.feet.vec()[static_cast<size_t>(i)] - b.feet.vec()[static_cast<size_t>(i)]);
  want /= 3.0;
  CHECK(loss_reconstruction(a, db).value().at(0) == doctest::Approx(want));
  CHECK(loss_reconstruction(a, db).value().at(0) >= 0.0);

  // layout mismatch
  MotionSequence shorter = rand_motion(2, 25);
  CHECK_THROWS_AS(loss_reconstruction(shorter, db), DataError);
}

TEST_CASE("kl closed forms") {
  const int d = 6;
  auto std_g = gaussian_of(Tensor::zeros({d}), Tensor::zeros({d}));
  CHECK(kl_to_standard(std_g).value().at(0) == doctest::Approx(0.0));
  CHECK(loss_kl(std_g, std_g).value().at(0) == doctest::Approx(0.0));

  // mu = e_0, unit variance: KL to standard normal = 0.5
  Tensor mu = Tensor::zeros({d});
  mu.at(0) = 1.0;
  auto g1 = gaussian_of(mu, Tensor::zeros({d}));
  CHECK(kl_to_standard(g1).value().at(0) == doctest::Approx(0.5));
  // and KL(g1 || standard) = KL(standard || g1) here since only means differ
  CHECK(kl_between(g1, std_g).value().at(0) == doctest::Approx(0.5));
  CHECK(kl_between(std_g, g1).value().at(0) == doctest::Approx(0.5));

  // random pair matches the per-dimension closed form
  Rng rng(31);
  Tensor ma({d}), la({d}), mb({d}), lb({d});
  for (double& v : ma.vec()) v = rng.uniform(-1.5, 1.5);
  for (double& v : la.vec()) v = rng.uniform(-1.0, 1.0);
  for (double& v : mb.vec()) v = rng.uniform(-1.5, 1.5);
  for (double& v : lb.vec()) v = rng.uniform(-1.0, 1.0);
  auto ga = gaussian_of(ma, la), gb = gaussian_of(mb, lb);
  double want = 0.0;
  for (int i = 0; i < d; ++i) {
    double va = std::exp(la.at(i)), vb = std::exp(lb.at(i));
    want += 0.5 * (lb.at(i) - la.at(i) + (va + (ma.at(i) - mb.at(i)) * (ma.at(i) - mb.at(i))) / vb -
                   1.0);
  }
  CHECK(kl_between(ga, gb).value().at(0) == doctest::Approx(want));

  // nonnegativity, zero only at equality
  CHECK(kl_between(ga, gb).value().at(0) > 0.0);
  CHECK(kl_to_standard(ga).value().at(0) > 0.0);
  CHECK(kl_between(ga, ga).value().at(0) == doctest::Approx(0.0));
  CHECK(loss_kl(ga, gb).value().at(0) > 0.0);

  // loss_kl is the sum of its four parts
  double parts = kl_to_standard(ga).value().at(0) + kl_to_standard(gb).value().at(0) +
                 kl_between(gb, ga).value().at(0) + kl_between(ga, gb).value().at(0);
  CHECK(loss_kl(ga, gb).value().at(0) == doctest::Approx(parts));
}

TEST_CASE("end-to-end gradient through encoder, sampling, decoder, and both losses") {
  Rng rng(41);
  nn::ParamStore ps;

  EncoderConfig ecfg;
  ecfg.depth = 2;
  ecfg.heads = 2;
  ecfg.ffn_width = 10;
  ecfg.model_width = 8;
  ecfg.latent_dim = 6;
  MotionEncoder enc(ps, "menc", ecfg, rng);

  TextEncoderConfig tcfg;
  tcfg.vocab_size = 9;
  tcfg.model_width = 8;
  tcfg.heads = 2;
  tcfg.ffn_width = 10;
  tcfg.depth = 2;
  tcfg.latent_dim = 6;
  TextEncoder tenc(ps, "tenc", tcfg, rng);

  DecoderConfig dcfg;
  dcfg.latent_dim = 6;
  dcfg.heads = 2;
  dcfg.ffn_width = 10;
  MotionDecoder dec(ps, "dec", dcfg, rng);

  MotionSequence m = rand_motion(3, 51);
  TokenizedText txt{{2, 7, 4}};
  Tensor noise({6});
  for (double& v : noise.vec()) v = rng.normal();

  std::vector<ad::Var> leaves;
  std::vector<std::string> names;
  for (const auto& [nm, v] : ps.items()) {
    leaves.push_back(v);
    names.push_back(nm);
  }
  auto fn = [&](const std::vector<ad::Var>&) {
    auto mg = enc.encode(m);
    auto tg = tenc.encode(txt);
    LatentSample s = reparameterize(mg, noise);
    DecodedMotion d = dec.decode(s.z, m.frames());
    return ad::add(loss_reconstruction(m, d), ad::scale(loss_kl(mg, tg), 1e-2));
  };
  Rng pick(77);
  auto res = grad_check(fn, leaves, names, 1e-5, 6, &pick);
  CAPTURE(res.worst.name);
  CHECK(res.max_rel_err < 1e-4);
}
