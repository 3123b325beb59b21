#include "motret/text.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "motret/binio.hpp"
#include "motret/common.hpp"

namespace motret {

std::vector<std::string> normalize_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 128) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

Vocab Vocab::build(const std::vector<std::string>& corpus) {
  Vocab v;
  v.words_.push_back("<oov>");
  v.index_["<oov>"] = 0;
  for (const auto& text : corpus) {
    for (const auto& w : normalize_words(text)) {
      if (v.index_.emplace(w, static_cast<int>(v.words_.size())).second) v.words_.push_back(w);
    }
  }
  return v;
}

Vocab Vocab::from_words(std::vector<std::string> words) {
  check_data(!words.empty() && words[0] == "<oov>", "vocab: first word must be the OOV marker");
  Vocab v;
  v.words_ = std::move(words);
  for (size_t i = 0; i < v.words_.size(); ++i) {
    check_data(v.index_.emplace(v.words_[i], static_cast<int>(i)).second,
               "vocab: duplicate word " + v.words_[i]);
  }
  return v;
}

int Vocab::id_of(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? 0 : it->second;
}

TokenizedText tokenize(const std::string& text, const Vocab& vocab) {
  const auto words = normalize_words(text);
  check_data(!words.empty(), "tokenize: empty text after normalization: '" + text + "'");
  TokenizedText t;
  t.ids.reserve(words.size());
  for (const auto& w : words) t.ids.push_back(vocab.id_of(w));
  return t;
}

// ---------------------------------------------------------------- teachers

Tensor teacher_matrix(const std::vector<std::string>& texts, const TeacherModel& teacher) {
  const int B = static_cast<int>(texts.size());
  check_data(B >= 2, "teacher_matrix: need at least 2 texts");
  Tensor m({B, B});
  for (int i = 0; i < B; ++i)
    for (int j = i; j < B; ++j) {
      const double s = teacher.similarity(texts[i], texts[j]);
      m.at(i, j) = s;
      m.at(j, i) = s;  // symmetric by construction
    }
  return m;
}

TfidfTeacher TfidfTeacher::build(const std::vector<std::string>& corpus) {
  check_data(!corpus.empty(), "tfidf teacher: empty corpus");
  TfidfTeacher t;
  t.vocab_ = Vocab::build(corpus);
  t.doc_count_ = static_cast<long>(corpus.size());

  std::vector<long> df(static_cast<size_t>(t.vocab_.size()), 0);
  for (const auto& text : corpus) {
    std::unordered_set<int> present;
    for (const auto& w : normalize_words(text)) present.insert(t.vocab_.id_of(w));
    for (int id : present) ++df[static_cast<size_t>(id)];
  }
  t.idf_.resize(df.size());
  for (size_t i = 0; i < df.size(); ++i)
    t.idf_[i] = std::log((1.0 + t.doc_count_) / (1.0 + df[i])) + 1.0;
  return t;
}

TfidfTeacher TfidfTeacher::from_state(Vocab vocab, std::vector<double> idf, long doc_count) {
  check_data(static_cast<int>(idf.size()) == vocab.size(), "tfidf teacher: idf/vocab size mismatch");
  TfidfTeacher t;
  t.vocab_ = std::move(vocab);
  t.idf_ = std::move(idf);
  t.doc_count_ = doc_count;
  return t;
}

std::vector<double> TfidfTeacher::vector_of(const std::string& text) const {
  std::vector<double> v(static_cast<size_t>(vocab_.size()), 0.0);
  for (const auto& w : normalize_words(text)) {
    const int id = vocab_.id_of(w);
    if (id > 0) v[static_cast<size_t>(id)] += 1.0;  // unknown words carry no signal
  }
  double norm2 = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    v[i] *= idf_[i];
    norm2 += v[i] * v[i];
  }
  if (norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& x : v) x *= inv;
  }
  return v;
}

double TfidfTeacher::similarity(const std::string& a, const std::string& b) const {
  if (a == b) return 1.0;
  const auto va = vector_of(a);
  const auto vb = vector_of(b);
  double na = 0.0, nb = 0.0, dot = 0.0;
  for (size_t i = 0; i < va.size(); ++i) {
    na += va[i] * va[i];
    nb += vb[i] * vb[i];
    dot += va[i] * vb[i];
  }
  if (na == 0.0 || nb == 0.0) {
    // all-OOV caption: fall back to surface-form agreement
    return normalize_words(a) == normalize_words(b) ? 1.0 : 0.0;
  }
  return std::min(1.0, std::max(0.0, dot));
}

EmbeddingTeacher EmbeddingTeacher::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check_data(is.good(), "teacher unavailable: cannot open " + path);
  check_data(io::get_bytes(is, 4, "magic") == "TEMB", "bad magic in teacher file " + path);
  const uint32_t count = io::get_u32(is, "count");
  const uint32_t dim = io::get_u32(is, "dim");
  check_data(dim >= 1, "teacher file with zero dim: " + path);
  EmbeddingTeacher t;
  t.dim_ = static_cast<int>(dim);
  for (uint32_t r = 0; r < count; ++r) {
    const uint16_t len = io::get_u16(is, "record id length");
    std::string id = io::get_bytes(is, len, "record id");
    std::vector<double> vec(dim);
    for (uint32_t d = 0; d < dim; ++d) vec[d] = static_cast<double>(io::get_f32(is, "record vector"));
    check_data(t.table_.emplace(std::move(id), std::move(vec)).second,
               "duplicate record in teacher file " + path);
  }
  is.peek();
  check_data(is.eof(), "trailing bytes in teacher file " + path);
  return t;
}

double EmbeddingTeacher::similarity(const std::string& a, const std::string& b) const {
  auto ia = table_.find(a);
  auto ib = table_.find(b);
  check_data(ia != table_.end(), "teacher unavailable for text: '" + a + "'");
  check_data(ib != table_.end(), "teacher unavailable for text: '" + b + "'");
  if (a == b) return 1.0;
  double na = 0.0, nb = 0.0, dot = 0.0;
  for (int d = 0; d < dim_; ++d) {
    na += ia->second[d] * ia->second[d];
    nb += ib->second[d] * ib->second[d];
    dot += ia->second[d] * ib->second[d];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::max(-1.0, std::min(1.0, dot / std::sqrt(na * nb)));
}

void write_teacher_embeddings(const std::string& path,
                              const std::vector<std::pair<std::string, std::vector<double>>>& recs) {
  check_data(!recs.empty(), "teacher export: no records");
  const size_t dim = recs[0].second.size();
  std::ofstream os(path, std::ios::binary);
  check_data(os.good(), "cannot open for writing: " + path);
  io::put_bytes(os, "TEMB");
  io::put_u32(os, static_cast<uint32_t>(recs.size()));
  io::put_u32(os, static_cast<uint32_t>(dim));
  for (const auto& [id, vec] : recs) {
    check_data(vec.size() == dim, "teacher export: inconsistent dims");
    check_data(id.size() <= 0xFFFF, "teacher export: id too long");
    io::put_u16(os, static_cast<uint16_t>(id.size()));
    io::put_bytes(os, id);
    for (double v : vec) io::put_f32(os, static_cast<float>(v));
  }
  check_data(os.good(), "write failed: " + path);
}

// ---------------------------------------------------------------- encoder

TextEncoder::TextEncoder(nn::ParamStore& ps, const std::string& prefix, const TextEncoderConfig& cfg,
                         Rng& rng)
    : cfg_(cfg) {
  check_data(cfg.vocab_size >= 1, "text encoder: vocab size must be >= 1");
  check_data(cfg.model_width % cfg.heads == 0, "text encoder: heads must divide width");
  token_emb_ = ps.add(prefix + "/token_emb", nn::normal_init({cfg.vocab_size, cfg.model_width}, 0.02, rng));
  cls_ = ps.add(prefix + "/cls", nn::normal_init({2, cfg.model_width}, 0.02, rng));
  for (int i = 0; i < cfg.depth; ++i)
    layers_.push_back(nn::TransformerLayer::create(ps, prefix + "/layer" + std::to_string(i),
                                                   cfg.model_width, cfg.heads, cfg.ffn_width, rng));
  head_mu_ = nn::Linear::create(ps, prefix + "/head_mu", cfg.model_width, cfg.latent_dim, rng);
  head_logvar_ = nn::Linear::create(ps, prefix + "/head_logvar", cfg.model_width, cfg.latent_dim, rng);
}

LatentGaussianVar TextEncoder::encode(const TokenizedText& t, double dropout_rate, Rng* drop_rng,
                                      int pad_positions) const {
  using ad::Var;
  const int L = t.length();
  check_data(L >= 1, "text encoder: empty token list");
  const int D = cfg_.model_width;

  Var toks = ad::gather_rows(token_emb_, t.ids);
  toks = ad::add(toks, Var::constant(nn::sinusoidal_positions(L, D)));
  std::vector<Var> parts{ad::reshape(cls_, {1, 2, D}), ad::reshape(toks, {1, L, D})};
  if (pad_positions > 0) parts.push_back(Var::constant(Tensor::zeros({1, pad_positions, D})));
  Var x = ad::concat_dim1(parts);

  std::vector<uint8_t> keep(static_cast<size_t>(2 + L + pad_positions), 1);
  for (int i = 0; i < pad_positions; ++i) keep[static_cast<size_t>(2 + L + i)] = 0;

  for (const auto& layer : layers_) x = layer.forward(x, &keep, nullptr, dropout_rate, drop_rng);

  Var mu = ad::reshape(head_mu_(ad::reshape(ad::slice_dim1(x, 0, 1), {1, D})), {cfg_.latent_dim});
  Var log_var =
      ad::reshape(head_logvar_(ad::reshape(ad::slice_dim1(x, 1, 1), {1, D})), {cfg_.latent_dim});
  return {mu, log_var};
}

}  // namespace motret
