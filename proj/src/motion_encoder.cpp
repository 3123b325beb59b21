#include "motret/motion_encoder.hpp"

#include <algorithm>

#include "motret/common.hpp"

namespace motret {

using ad::Var;

std::string to_string(AttentionMode m) {
  return m == AttentionMode::FactorizedEncoder ? "factorized_encoder" : "factorized_self_attention";
}

AttentionMode attention_mode_from_string(const std::string& s) {
  if (s == "factorized_encoder") return AttentionMode::FactorizedEncoder;
  if (s == "factorized_self_attention") return AttentionMode::FactorizedSelfAttention;
  throw DataError("unknown attention mode '" + s + "'");
}

std::vector<std::vector<int>> EncoderConfig::default_body_groups() {
  return {
      {12, 15, 17, 19},    // left arm
      {13, 16, 18, 20},    // right arm
      {0, 3, 6, 9},        // left leg
      {1, 4, 7, 10},       // right leg
      {2, 5, 8, 11, 14},   // torso + head
  };
}

void EncoderConfig::validate() const {
  check_data(depth > 0 && depth % 2 == 0, "encoder config: depth must be positive and even");
  check_data(heads > 0 && model_width % heads == 0, "encoder config: heads must divide model width");
  check_data(ffn_width > 0 && latent_dim > 0 && max_frames >= 2, "encoder config: bad widths");
  check_data(body_groups.size() == 5, "encoder config: need 5 body-part groups");
  std::vector<int> seen(kBodyJoints, 0);
  for (const auto& g : body_groups)
    for (int j : g) {
      check_data(j >= 0 && j < kBodyJoints, "encoder config: joint index out of range");
      ++seen[static_cast<size_t>(j)];
    }
  for (int c : seen)
    check_data(c == 1, "encoder config: partition must cover each of the 21 body joints exactly once");
}

MotionEncoder::MotionEncoder(nn::ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg,
                             Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int D = cfg_.model_width;
  static const char* kGroupNames[kNumGroups] = {"left_arm", "right_arm", "left_leg",
                                                "right_leg", "torso_head", "root", "feet"};
  for (int g = 0; g < 5; ++g) {
    const int in = static_cast<int>(cfg_.body_groups[static_cast<size_t>(g)].size()) * kBodyFeatDim;
    group_mlps_.push_back(
        nn::Linear::create(ps, prefix + "/group_" + kGroupNames[g], in, D, rng));
  }
  group_mlps_.push_back(nn::Linear::create(ps, prefix + "/group_root", kRootDim, D, rng));
  group_mlps_.push_back(nn::Linear::create(ps, prefix + "/group_feet", kFeetDim, D, rng));
  cls_ = ps.add(prefix + "/cls", nn::normal_init({2, D}, 0.02, rng));
  group_emb_ = ps.add(prefix + "/group_emb", nn::normal_init({kNumGroups, D}, 0.02, rng));
  for (int i = 0; i < cfg_.depth; ++i)
    layers_.push_back(nn::TransformerLayer::create(ps, prefix + "/layer" + std::to_string(i), D,
                                                   cfg_.heads, cfg_.ffn_width, rng));
  head_mu_ = nn::Linear::create(ps, prefix + "/head_mu", D, cfg_.latent_dim, rng);
  head_logvar_ = nn::Linear::create(ps, prefix + "/head_logvar", D, cfg_.latent_dim, rng);
}

std::vector<char> MotionEncoder::stage_plan() const {
  std::vector<char> plan(static_cast<size_t>(cfg_.depth));
  for (int i = 0; i < cfg_.depth; ++i) {
    if (cfg_.attention_mode == AttentionMode::FactorizedEncoder)
      plan[static_cast<size_t>(i)] = i < cfg_.depth / 2 ? 'S' : 'T';
    else
      plan[static_cast<size_t>(i)] = i % 2 == 0 ? 'S' : 'T';
  }
  return plan;
}

GroupedMotion MotionEncoder::group_joints(const MotionSequence& m, int pad_frames) const {
  m.validate();
  const int T = m.frames();
  const int Tp = T + pad_frames;
  const int D = cfg_.model_width;

  std::vector<Var> tokens;  // each [Tp, 1, D]
  auto run_group = [&](const Tensor& input, const nn::Linear& mlp) {
    tokens.push_back(ad::reshape(mlp(Var::constant(input)), {Tp, 1, D}));
  };

  for (int g = 0; g < 5; ++g) {
    const auto& joints = cfg_.body_groups[static_cast<size_t>(g)];
    const int in = static_cast<int>(joints.size()) * kBodyFeatDim;
    Tensor x({Tp, in});  // zero rows past T
    for (int t = 0; t < T; ++t)
      for (size_t k = 0; k < joints.size(); ++k)
        for (int d = 0; d < kBodyFeatDim; ++d)
          x.at(t, static_cast<int>(k) * kBodyFeatDim + d) = m.body.at(t, joints[k], d);
    run_group(x, group_mlps_[static_cast<size_t>(g)]);
  }
  {
    Tensor x({Tp, kRootDim});
    for (int t = 0; t < T; ++t)
      for (int d = 0; d < kRootDim; ++d) x.at(t, d) = m.root.at(t, d);
    run_group(x, group_mlps_[5]);
    Tensor f({Tp, kFeetDim});
    for (int t = 0; t < T; ++t)
      for (int d = 0; d < kFeetDim; ++d) f.at(t, d) = m.feet.at(t, d);
    run_group(f, group_mlps_[6]);
  }

  GroupedMotion out;
  out.tokens = ad::concat_dim1(tokens);  // [Tp, 7, D]
  out.mask.assign(static_cast<size_t>(Tp), 1);
  for (int t = T; t < Tp; ++t) out.mask[static_cast<size_t>(t)] = 0;
  return out;
}

LatentGaussianVar MotionEncoder::encode(const MotionSequence& m, double dropout_rate, Rng* drop_rng,
                                        int pad_frames) const {
  const int T = m.frames();
  check_data(T <= cfg_.max_frames, "encode: motion longer than max_frames; downsample first");
  const int D = cfg_.model_width;

  GroupedMotion gm = group_joints(m, pad_frames);
  const int Tp = T + pad_frames;
  const std::vector<uint8_t>& frame_mask = gm.mask;

  // positions over time (fixed) + learned group-slot embedding
  Tensor time_pe3({Tp, kNumGroups, D});
  {
    Tensor pe = nn::sinusoidal_positions(Tp, D);
    for (int t = 0; t < Tp; ++t)
      for (int g = 0; g < kNumGroups; ++g)
        for (int d = 0; d < D; ++d) time_pe3.at(t, g, d) = pe.at(t, d);
  }
  Var tokens = ad::add(gm.tokens, Var::constant(std::move(time_pe3)));
  tokens = ad::add(tokens, ad::broadcast0(group_emb_, Tp));

  // spatial view: frames are the batch axis, [Tp, 2+7, D]
  Var x = ad::concat_dim1({ad::broadcast0(cls_, Tp), tokens});
  bool spatial = true;

  std::vector<uint8_t> temporal_keep(static_cast<size_t>(2 + Tp), 1);
  for (int t = 0; t < Tp; ++t) temporal_keep[static_cast<size_t>(2 + t)] = frame_mask[static_cast<size_t>(t)];
  const std::vector<uint8_t> all_groups(kNumGroups, 1);

  auto to_temporal = [&](const Var& sp) {
    Var cls_pool = ad::masked_mean0(ad::slice_dim1(sp, 0, 2), frame_mask);       // [2, D]
    Var toks = ad::permute01(ad::slice_dim1(sp, 2, kNumGroups));                 // [7, Tp, D]
    return ad::concat_dim1({ad::broadcast0(cls_pool, kNumGroups), toks});        // [7, 2+Tp, D]
  };
  auto to_spatial = [&](const Var& tp) {
    Var cls_pool = ad::masked_mean0(ad::slice_dim1(tp, 0, 2), all_groups);       // [2, D]
    Var toks = ad::permute01(ad::slice_dim1(tp, 2, Tp));                         // [Tp, 7, D]
    return ad::concat_dim1({ad::broadcast0(cls_pool, Tp), toks});                // [Tp, 2+7, D]
  };

  const auto plan = stage_plan();
  for (int i = 0; i < cfg_.depth; ++i) {
    const bool want_spatial = plan[static_cast<size_t>(i)] == 'S';
    if (want_spatial && !spatial) {
      x = to_spatial(x);
      spatial = true;
    } else if (!want_spatial && spatial) {
      x = to_temporal(x);
      spatial = false;
    }
    const auto& layer = layers_[static_cast<size_t>(i)];
    if (spatial)
      x = layer.forward(x, nullptr, &frame_mask, dropout_rate, drop_rng);
    else
      x = layer.forward(x, &temporal_keep, nullptr, dropout_rate, drop_rng);
  }
  if (spatial) x = to_temporal(x);  // class replicas pool over groups at the end

  Var cls_out = ad::masked_mean0(ad::slice_dim1(x, 0, 2), all_groups);  // [2, D]
  Var mu = ad::reshape(head_mu_(ad::reshape(ad::gather_rows(cls_out, {0}), {1, D})), {cfg_.latent_dim});
  Var log_var =
      ad::reshape(head_logvar_(ad::reshape(ad::gather_rows(cls_out, {1}), {1, D})), {cfg_.latent_dim});
  return {mu, log_var};
}

}  // namespace motret
