#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "motret/nn.hpp"
#include "motret/tensor.hpp"

namespace motret {

struct TokenizedText {
  std::vector<int> ids;
  int length() const { return static_cast<int>(ids.size()); }
};

// Lowercase, strip punctuation, split on whitespace.
std::vector<std::string> normalize_words(const std::string& text);

// Word-level vocabulary; id 0 is reserved for out-of-vocabulary words.
class Vocab {
 public:
  static Vocab build(const std::vector<std::string>& corpus);
  static Vocab from_words(std::vector<std::string> words);  // words[0] must be the OOV marker

  int size() const { return static_cast<int>(words_.size()); }
  int id_of(const std::string& word) const;
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

TokenizedText tokenize(const std::string& text, const Vocab& vocab);

// Frozen reference model scoring caption similarity.
class TeacherModel {
 public:
  virtual ~TeacherModel() = default;
  virtual double similarity(const std::string& a, const std::string& b) const = 0;
};

// Raw pairwise similarities; any softmax is applied downstream.
Tensor teacher_matrix(const std::vector<std::string>& texts, const TeacherModel& teacher);

// Deterministic bag-of-words stand-in: cosine of L2-normalized TF-IDF vectors
// over the training corpus. Self-contained default teacher.
class TfidfTeacher : public TeacherModel {
 public:
  static TfidfTeacher build(const std::vector<std::string>& corpus);
  static TfidfTeacher from_state(Vocab vocab, std::vector<double> idf, long doc_count);

  double similarity(const std::string& a, const std::string& b) const override;
  std::vector<double> vector_of(const std::string& text) const;  // L2-normalized TF-IDF

  const Vocab& vocab() const { return vocab_; }
  const std::vector<double>& idf() const { return idf_; }
  long doc_count() const { return doc_count_; }

 private:
  Vocab vocab_;
  std::vector<double> idf_;
  long doc_count_ = 0;
};

// Looks up precomputed embeddings by exact text; cosine similarity.
class EmbeddingTeacher : public TeacherModel {
 public:
  static EmbeddingTeacher load(const std::string& path);
  double similarity(const std::string& a, const std::string& b) const override;
  int dim() const { return dim_; }
  size_t count() const { return table_.size(); }

 private:
  std::unordered_map<std::string, std::vector<double>> table_;
  int dim_ = 0;
};

void write_teacher_embeddings(const std::string& path,
                              const std::vector<std::pair<std::string, std::vector<double>>>& recs);

struct LatentGaussianVar {
  ad::Var mu;
  ad::Var log_var;
};

struct TextEncoderConfig {
  int vocab_size = 0;
  int model_width = 64;
  int heads = 4;
  int ffn_width = 256;
  int depth = 4;
  int latent_dim = 256;
};

// Word embeddings + sinusoidal positions, two learnable class tokens, a stack
// of transformer layers; the class-position outputs map to (mu, log variance).
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(nn::ParamStore& ps, const std::string& prefix, const TextEncoderConfig& cfg, Rng& rng);

  // pad_positions appends masked slots (must not change the result).
  LatentGaussianVar encode(const TokenizedText& t, double dropout_rate = 0.0, Rng* drop_rng = nullptr,
                           int pad_positions = 0) const;

  const TextEncoderConfig& config() const { return cfg_; }

 private:
  TextEncoderConfig cfg_;
  ad::Var token_emb_;  // [V, D']
  ad::Var cls_;        // [2, D']
  std::vector<nn::TransformerLayer> layers_;
  nn::Linear head_mu_, head_logvar_;
};

}  // namespace motret
