#pragma once

#include <string>
#include <vector>

#include "motret/motion_encoder.hpp"

namespace motret {

// z = mu + noise * sigma, with the epsilon draw kept for reproducibility.
struct LatentSample {
  ad::Var z;
  Tensor noise;
};

LatentSample reparameterize(const LatentGaussianVar& g, const Tensor& noise);

struct DecoderConfig {
  int latent_dim = 256;
  int heads = 4;
  int ffn_width = 256;
  int depth = 2;  // temporal layers only; the branch is a regularizer
  std::vector<std::vector<int>> body_groups = EncoderConfig::default_body_groups();

  void validate() const;
};

struct DecodedMotion {
  ad::Var body;  // [T, 21, 12]
  ad::Var root;  // [T, 4]
  ad::Var feet;  // [T, 4]
};

// Latent -> motion tensor program: broadcast z over T frames, add sinusoidal
// time encodings, run temporal attention, emit each group through its own head.
class MotionDecoder {
 public:
  MotionDecoder() = default;
  MotionDecoder(nn::ParamStore& ps, const std::string& prefix, const DecoderConfig& cfg, Rng& rng);

  DecodedMotion decode(const ad::Var& z, int T) const;
  const DecoderConfig& config() const { return cfg_; }

 private:
  DecoderConfig cfg_;
  std::vector<nn::TransformerLayer> layers_;
  std::vector<nn::Linear> heads_;  // 5 body parts, root, feet
  std::vector<int> joint_order_;   // maps joint index -> slot in the concatenated body output
};

// Sum of per-group elementwise L1 distances, divided by frame count.
ad::Var loss_reconstruction(const MotionSequence& m, const DecodedMotion& d);

// Closed-form KL for diagonal Gaussians given as (mu, log variance).
ad::Var kl_to_standard(const LatentGaussianVar& g);
ad::Var kl_between(const LatentGaussianVar& a, const LatentGaussianVar& b);  // KL(a || b)

// KL(m||N(0,I)) + KL(t||N(0,I)) + KL(t||m) + KL(m||t): ties both embedding
// distributions to each other and to the unit normal.
ad::Var loss_kl(const LatentGaussianVar& motion_g, const LatentGaussianVar& text_g);

}  // namespace motret
