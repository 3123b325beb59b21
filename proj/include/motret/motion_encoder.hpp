#pragma once

#include <string>
#include <vector>

#include "motret/motion_data.hpp"
#include "motret/nn.hpp"
#include "motret/text.hpp"

namespace motret {

inline constexpr int kNumGroups = 7;  // 5 body parts + root + feet

enum class AttentionMode { FactorizedEncoder, FactorizedSelfAttention };
std::string to_string(AttentionMode m);
AttentionMode attention_mode_from_string(const std::string& s);

struct EncoderConfig {
  int depth = 4;  // N, always even: equal spatial/temporal budget
  int heads = 4;
  int ffn_width = 256;
  int model_width = 64;  // D'
  int latent_dim = 256;
  AttentionMode attention_mode = AttentionMode::FactorizedEncoder;
  int max_frames = 200;
  // 0-indexed partition of the 21 body joints into 5 named parts.
  std::vector<std::vector<int>> body_groups = default_body_groups();

  static std::vector<std::vector<int>> default_body_groups();
  void validate() const;
};

struct GroupedMotion {
  ad::Var tokens;             // [T_padded, 7, D']
  std::vector<uint8_t> mask;  // valid-frame flags
};

// Spatio-temporal encoder: per-group affine maps, two class tokens carried as
// replicas along whichever axis is currently batch-like, factorized attention
// over joints then time (or interleaved), class outputs -> (mu, log variance).
class MotionEncoder {
 public:
  MotionEncoder() = default;
  MotionEncoder(nn::ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg, Rng& rng);

  GroupedMotion group_joints(const MotionSequence& m, int pad_frames = 0) const;
  LatentGaussianVar encode(const MotionSequence& m, double dropout_rate = 0.0,
                           Rng* drop_rng = nullptr, int pad_frames = 0) const;

  // 'S'/'T' per layer, derived from attention_mode; both modes use N/2 of each.
  std::vector<char> stage_plan() const;
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::vector<nn::Linear> group_mlps_;  // 5 body parts, then root, then feet
  ad::Var cls_;                         // [2, D']
  ad::Var group_emb_;                   // [7, D'] learned slot embedding
  std::vector<nn::TransformerLayer> layers_;
  nn::Linear head_mu_, head_logvar_;
};

}  // namespace motret
