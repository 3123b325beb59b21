#pragma once

#include <string>

#include "json.hpp"
#include "motret/generative.hpp"
#include "motret/losses.hpp"
#include "motret/motion_encoder.hpp"
#include "motret/text.hpp"

namespace motret {

struct ModelConfig {
  EncoderConfig motion;
  TextEncoderConfig text;
  DecoderConfig decoder;
  double log_tau_init = -2.302585092994046;  // ln 0.1

  void validate() const;
};

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

// Both encoders, the regularizing decoder, the learned temperature, and the
// frozen text teacher, built over one parameter store in a fixed registration
// order (which is also the serialization order).
class RetrievalModel {
 public:
  RetrievalModel(const ModelConfig& cfg, Vocab vocab, TfidfTeacher teacher, uint64_t seed);

  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }
  const MotionEncoder& motion_encoder() const { return menc_; }
  const TextEncoder& text_encoder() const { return tenc_; }
  const MotionDecoder& decoder() const { return dec_; }
  const ad::Var& log_tau() const { return log_tau_; }
  const Vocab& vocab() const { return vocab_; }
  const TfidfTeacher& teacher() const { return teacher_; }
  const ModelConfig& config() const { return cfg_; }

  // inference helpers: downsample, encode without dropout, return mu
  Tensor embed_motion(const MotionSequence& m) const;
  Tensor embed_text(const std::string& text) const;

 private:
  ModelConfig cfg_;
  Vocab vocab_;
  TfidfTeacher teacher_;
  nn::ParamStore ps_;
  MotionEncoder menc_;
  TextEncoder tenc_;
  MotionDecoder dec_;
  ad::Var log_tau_;
};

}  // namespace motret
