#include "motret/model.hpp"

#include "motret/common.hpp"

namespace motret {

using nlohmann::json;

void ModelConfig::validate() const {
  motion.validate();
  decoder.validate();
  check_data(text.vocab_size >= 2, "model config: text vocab too small");
  check_data(text.model_width > 0 && text.heads > 0 && text.model_width % text.heads == 0,
             "model config: text heads must divide width");
  check_data(text.ffn_width > 0 && text.depth > 0, "model config: bad text widths");
  check_data(motion.latent_dim == text.latent_dim && motion.latent_dim == decoder.latent_dim,
             "model config: encoders and decoder must share the common-space width");
}

json config_to_json(const ModelConfig& cfg) {
  json j;
  j["motion"] = {
      {"depth", cfg.motion.depth},
      {"heads", cfg.motion.heads},
      {"ffn_width", cfg.motion.ffn_width},
      {"model_width", cfg.motion.model_width},
      {"latent_dim", cfg.motion.latent_dim},
      {"attention_mode", to_string(cfg.motion.attention_mode)},
      {"max_frames", cfg.motion.max_frames},
      {"body_groups", cfg.motion.body_groups},
  };
  j["text"] = {
      {"vocab_size", cfg.text.vocab_size},   {"model_width", cfg.text.model_width},
      {"heads", cfg.text.heads},             {"ffn_width", cfg.text.ffn_width},
      {"depth", cfg.text.depth},             {"latent_dim", cfg.text.latent_dim},
  };
  j["decoder"] = {
      {"latent_dim", cfg.decoder.latent_dim},
      {"heads", cfg.decoder.heads},
      {"ffn_width", cfg.decoder.ffn_width},
      {"depth", cfg.decoder.depth},
      {"body_groups", cfg.decoder.body_groups},
  };
  j["log_tau_init"] = cfg.log_tau_init;
  return j;
}

ModelConfig config_from_json(const json& j) {
  try {
    ModelConfig cfg;
    const json& m = j.at("motion");
    cfg.motion.depth = m.at("depth").get<int>();
    cfg.motion.heads = m.at("heads").get<int>();
    cfg.motion.ffn_width = m.at("ffn_width").get<int>();
    cfg.motion.model_width = m.at("model_width").get<int>();
    cfg.motion.latent_dim = m.at("latent_dim").get<int>();
    cfg.motion.attention_mode = attention_mode_from_string(m.at("attention_mode").get<std::string>());
    cfg.motion.max_frames = m.at("max_frames").get<int>();
    cfg.motion.body_groups = m.at("body_groups").get<std::vector<std::vector<int>>>();
    const json& t = j.at("text");
    cfg.text.vocab_size = t.at("vocab_size").get<int>();
    cfg.text.model_width = t.at("model_width").get<int>();
    cfg.text.heads = t.at("heads").get<int>();
    cfg.text.ffn_width = t.at("ffn_width").get<int>();
    cfg.text.depth = t.at("depth").get<int>();
    cfg.text.latent_dim = t.at("latent_dim").get<int>();
    const json& d = j.at("decoder");
    cfg.decoder.latent_dim = d.at("latent_dim").get<int>();
    cfg.decoder.heads = d.at("heads").get<int>();
    cfg.decoder.ffn_width = d.at("ffn_width").get<int>();
    cfg.decoder.depth = d.at("depth").get<int>();
    cfg.decoder.body_groups = d.at("body_groups").get<std::vector<std::vector<int>>>();
    cfg.log_tau_init = j.at("log_tau_init").get<double>();
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw DataError(std::string("model config: ") + e.what());
  }
}

RetrievalModel::RetrievalModel(const ModelConfig& cfg, Vocab vocab, TfidfTeacher teacher,
                               uint64_t seed)
    : cfg_(cfg), vocab_(std::move(vocab)), teacher_(std::move(teacher)) {
  if (cfg_.text.vocab_size == 0) cfg_.text.vocab_size = static_cast<int>(vocab_.size());
  check_data(cfg_.text.vocab_size == static_cast<int>(vocab_.size()),
             "model config: vocab size does not match the vocabulary");
  cfg_.validate();

  Rng rng(seed);
  menc_ = MotionEncoder(ps_, "motion", cfg_.motion, rng);
  tenc_ = TextEncoder(ps_, "text", cfg_.text, rng);
  dec_ = MotionDecoder(ps_, "decoder", cfg_.decoder, rng);
  log_tau_ = ps_.add("log_tau", Tensor::scalar(cfg_.log_tau_init));
}

Tensor RetrievalModel::embed_motion(const MotionSequence& m) const {
  MotionSequence d = downsample(m, cfg_.motion.max_frames);
  return menc_.encode(d).mu.value();
}

Tensor RetrievalModel::embed_text(const std::string& text) const {
  return tenc_.encode(tokenize(text, vocab_)).mu.value();
}

}  // namespace motret
