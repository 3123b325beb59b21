#include "motret/generative.hpp"

#include "motret/common.hpp"

namespace motret {

using ad::Var;

LatentSample reparameterize(const LatentGaussianVar& g, const Tensor& noise) {
  check_data(noise.shape() == g.mu.value().shape(), "reparameterize: noise dim mismatch");
  Var sigma = ad::vexp(ad::scale(g.log_var, 0.5));
  return {ad::add(g.mu, ad::mul(Var::constant(noise), sigma)), noise};
}

void DecoderConfig::validate() const {
  check_data(latent_dim > 0 && heads > 0 && latent_dim % heads == 0,
             "decoder config: heads must divide latent width");
  check_data(ffn_width > 0 && depth > 0, "decoder config: bad widths");
  check_data(body_groups.size() == 5, "decoder config: need 5 body-part groups");
}

MotionDecoder::MotionDecoder(nn::ParamStore& ps, const std::string& prefix,
                             const DecoderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  for (int i = 0; i < cfg_.depth; ++i)
    layers_.push_back(nn::TransformerLayer::create(ps, prefix + "/layer" + std::to_string(i),
                                                   cfg_.latent_dim, cfg_.heads, cfg_.ffn_width,
                                                   rng));
  static const char* kGroupNames[5] = {"left_arm", "right_arm", "left_leg", "right_leg",
                                       "torso_head"};
  std::vector<int> slot_of(kBodyJoints, -1);
  int slot = 0;
  for (int g = 0; g < 5; ++g) {
    const auto& joints = cfg_.body_groups[static_cast<size_t>(g)];
    heads_.push_back(nn::Linear::create(ps, prefix + "/out_" + kGroupNames[g], cfg_.latent_dim,
                                        static_cast<int>(joints.size()) * kBodyFeatDim, rng));
    for (int j : joints) {
      check_data(j >= 0 && j < kBodyJoints && slot_of[static_cast<size_t>(j)] < 0,
                 "decoder config: partition must cover each body joint exactly once");
      slot_of[static_cast<size_t>(j)] = slot++;
    }
  }
  check_data(slot == kBodyJoints, "decoder config: partition must cover all 21 body joints");
  joint_order_ = slot_of;
  heads_.push_back(nn::Linear::create(ps, prefix + "/out_root", cfg_.latent_dim, kRootDim, rng));
  heads_.push_back(nn::Linear::create(ps, prefix + "/out_feet", cfg_.latent_dim, kFeetDim, rng));
}

DecodedMotion MotionDecoder::decode(const ad::Var& z, int T) const {
  check_data(T >= 1, "decode: need at least one frame");
  check_data(z.value().shape() == std::vector<int>{cfg_.latent_dim}, "decode: latent dim mismatch");

  Var x = ad::add_rowvec(Var::constant(nn::sinusoidal_positions(T, cfg_.latent_dim)), z);
  Var seq = ad::broadcast0(x, 1);  // [1, T, latent]
  for (const auto& layer : layers_) seq = layer.forward(seq, nullptr, nullptr, 0.0, nullptr);
  Var h = ad::reshape(seq, {T, cfg_.latent_dim});

  std::vector<Var> parts;  // [T, |g|, 12] in partition order
  for (int g = 0; g < 5; ++g) {
    const int nj = static_cast<int>(cfg_.body_groups[static_cast<size_t>(g)].size());
    parts.push_back(ad::reshape(heads_[static_cast<size_t>(g)](h), {T, nj, kBodyFeatDim}));
  }
  DecodedMotion out;
  out.body = ad::index_dim1(ad::concat_dim1(parts), joint_order_);  // back to joint order 0..20
  out.root = heads_[5](h);
  out.feet = heads_[6](h);
  return out;
}

ad::Var loss_reconstruction(const MotionSequence& m, const DecodedMotion& d) {
  const int T = m.frames();
  check_data(d.body.value().shape() == m.body.shape() && d.root.value().shape() == m.root.shape() &&
                 d.feet.value().shape() == m.feet.shape(),
             "reconstruction loss: layout mismatch");
  Var l = ad::sum_all(ad::vabs(ad::sub(d.body, Var::constant(m.body))));
  l = ad::add(l, ad::sum_all(ad::vabs(ad::sub(d.root, Var::constant(m.root)))));
  l = ad::add(l, ad::sum_all(ad::vabs(ad::sub(d.feet, Var::constant(m.feet)))));
  return ad::scale(l, 1.0 / T);
}

ad::Var kl_to_standard(const LatentGaussianVar& g) {
  // 0.5 * sum(exp(lv) + mu^2 - 1 - lv)
  Var t = ad::add(ad::vexp(g.log_var), ad::mul(g.mu, g.mu));
  t = ad::sub(t, g.log_var);
  return ad::scale(ad::add_scalar(ad::sum_all(t), -static_cast<double>(g.mu.value().numel())), 0.5);
}

ad::Var kl_between(const LatentGaussianVar& a, const LatentGaussianVar& b) {
  // 0.5 * sum(lv_b - lv_a + (exp(lv_a) + (mu_a - mu_b)^2) * exp(-lv_b) - 1)
  check_data(a.mu.value().shape() == b.mu.value().shape(), "kl: dim mismatch");
  Var dmu = ad::sub(a.mu, b.mu);
  Var num = ad::add(ad::vexp(a.log_var), ad::mul(dmu, dmu));
  Var t = ad::add(ad::sub(b.log_var, a.log_var), ad::mul(num, ad::vexp(ad::neg(b.log_var))));
  return ad::scale(ad::add_scalar(ad::sum_all(t), -static_cast<double>(a.mu.value().numel())), 0.5);
}

ad::Var loss_kl(const LatentGaussianVar& motion_g, const LatentGaussianVar& text_g) {
  Var l = ad::add(kl_to_standard(motion_g), kl_to_standard(text_g));
  l = ad::add(l, kl_between(text_g, motion_g));
  return ad::add(l, kl_between(motion_g, text_g));
}

}  // namespace motret
