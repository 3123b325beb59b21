#include "motret/store.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "motret/binio.hpp"

namespace motret {

namespace {
constexpr char kMagic[4] = {'E', 'M', 'B', 'D'};
constexpr uint16_t kVersion = 1;
}  // namespace

EmbeddingDB::EmbeddingDB(int dim, DbMetadata meta) : dim_(dim), meta_(std::move(meta)) {
  check_data(dim_ >= 1, "embedding db: dimension must be positive");
}

void EmbeddingDB::add(const std::string& id, const Tensor& vec) {
  check_data(!id.empty(), "embedding db: empty id");
  check_data(id.size() <= 0xffff, "embedding db: id too long");
  for (const std::string& existing : ids_)
    check_data(existing != id, "embedding db: duplicate id: " + id);
  check_data(vec.shape() == std::vector<int>{dim_},
             "embedding db: vector dimension mismatch for id: " + id);
  double norm_sq = 0.0;
  for (double v : vec.vec()) norm_sq += v * v;
  check_data(norm_sq > 0.0, "embedding db: zero vector for id: " + id);
  const double inv = 1.0 / std::sqrt(norm_sq);
  ids_.push_back(id);
  for (double v : vec.vec()) data_.push_back(static_cast<float>(v * inv));
}

Tensor EmbeddingDB::vector_of(size_t index) const {
  check_data(index < ids_.size(), "embedding db: index out of range");
  Tensor t({dim_});
  for (int j = 0; j < dim_; ++j) t[j] = static_cast<double>(data_[index * dim_ + j]);
  return t;
}

std::vector<EmbeddingDB::Hit> EmbeddingDB::query(const Tensor& embedding, int k,
                                                 bool* truncated) const {
  check_data(k >= 1, "embedding db: k must be >= 1");
  check_data(embedding.shape() == std::vector<int>{dim_}, "embedding db: query dimension mismatch");
  check_data(!ids_.empty(), "embedding db: empty database");
  double norm_sq = 0.0;
  for (double v : embedding.vec()) norm_sq += v * v;
  check_data(norm_sq > 0.0, "embedding db: zero query vector");
  const double inv = 1.0 / std::sqrt(norm_sq);

  std::vector<double> scores(ids_.size());
  for (size_t i = 0; i < ids_.size(); ++i) {
    double dot = 0.0;
    for (int j = 0; j < dim_; ++j)
      dot += static_cast<double>(data_[i * static_cast<size_t>(dim_) + static_cast<size_t>(j)]) *
             embedding.vec()[static_cast<size_t>(j)];
    scores[i] = dot * inv;
  }
  std::vector<size_t> order(ids_.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&scores](size_t a, size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });

  if (truncated) *truncated = k > static_cast<int>(ids_.size());
  const size_t take = std::min(static_cast<size_t>(k), ids_.size());
  std::vector<Hit> hits;
  hits.reserve(take);
  for (size_t p = 0; p < take; ++p) hits.push_back({ids_[order[p]], scores[order[p]]});
  return hits;
}

void EmbeddingDB::save(const std::string& path) const {
  std::ostringstream body;
  body.write(kMagic, 4);
  io::put_u16(body, kVersion);
  io::put_u32(body, static_cast<uint32_t>(ids_.size()));
  io::put_u32(body, static_cast<uint32_t>(dim_));

  nlohmann::json meta;
  meta["checkpoint"] = meta_.checkpoint_hash;
  meta["dataset"] = meta_.dataset_name;
  meta["created"] = meta_.created;
  const std::string meta_str = meta.dump();
  io::put_u32(body, static_cast<uint32_t>(meta_str.size()));
  io::put_bytes(body, meta_str);

  for (size_t i = 0; i < ids_.size(); ++i) {
    io::put_u16(body, static_cast<uint16_t>(ids_[i].size()));
    io::put_bytes(body, ids_[i]);
    for (int j = 0; j < dim_; ++j)
      io::put_f32(body, data_[i * static_cast<size_t>(dim_) + static_cast<size_t>(j)]);
  }

  const std::string payload = body.str();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check_data(out.good(), "embedding db: cannot open for writing: " + path);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  io::put_u32(out, io::crc32(payload));
  check_data(out.good(), "embedding db: write failed: " + path);
}

EmbeddingDB EmbeddingDB::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_data(in.good(), "embedding db: cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string all = buf.str();
  check_data(all.size() > 18, "embedding db: file truncated: " + path);

  const std::string payload = all.substr(0, all.size() - 4);
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<uint32_t>(static_cast<uint8_t>(all[all.size() - 4 + i])) << (8 * i);
  check_data(io::crc32(payload) == stored, "embedding db: checksum mismatch (corrupted file)");

  std::istringstream is(payload);
  const std::string magic = io::get_bytes(is, 4, "magic");
  check_data(std::equal(magic.begin(), magic.end(), kMagic), "embedding db: bad magic");
  const uint16_t version = io::get_u16(is, "version");
  check_data(version == kVersion, "embedding db: unsupported version");
  const uint32_t count = io::get_u32(is, "entry count");
  const uint32_t dim = io::get_u32(is, "dimension");
  check_data(dim >= 1, "embedding db: invalid dimension");

  const uint32_t meta_len = io::get_u32(is, "metadata length");
  const std::string meta_str = io::get_bytes(is, meta_len, "metadata");
  nlohmann::json meta = nlohmann::json::parse(meta_str, nullptr, false);
  check_data(meta.is_object(), "embedding db: metadata is not valid JSON");
  DbMetadata md;
  md.checkpoint_hash = meta.value("checkpoint", "");
  md.dataset_name = meta.value("dataset", "");
  md.created = meta.value("created", "");

  EmbeddingDB db(static_cast<int>(dim), std::move(md));
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t id_len = io::get_u16(is, "id length");
    const std::string id = io::get_bytes(is, id_len, "id");
    check_data(!id.empty(), "embedding db: empty id in file");
    for (const std::string& existing : db.ids_)
      check_data(existing != id, "embedding db: duplicate id in file: " + id);
    db.ids_.push_back(id);
    double norm_sq = 0.0;
    for (uint32_t j = 0; j < dim; ++j) {
      const float f = io::get_f32(is, "embedding value");
      db.data_.push_back(f);
      norm_sq += static_cast<double>(f) * static_cast<double>(f);
    }
    check_data(std::abs(std::sqrt(norm_sq) - 1.0) <= 1e-6,
               "embedding db: entry not unit-normalized: " + id);
  }
  check_data(is.peek() == EOF, "embedding db: trailing bytes in payload");
  return db;
}

EmbeddingDB build_db(const RetrievalModel& model, const Dataset& ds, Split split,
                     DbMetadata meta) {
  const std::vector<int> idx = ds.split_indices(split);
  check_data(!idx.empty(), "build_db: split is empty");
  if (meta.dataset_name.empty()) {
    for (const std::string& src : ds.provenance)
      meta.dataset_name += (meta.dataset_name.empty() ? "" : "+") + src;
  }
  EmbeddingDB db(model.config().motion.latent_dim, std::move(meta));
  for (int i : idx) {
    const TextMotionPair& p = ds.pairs[static_cast<size_t>(i)];
    db.add(p.id, model.embed_motion(p.motion));
  }
  return db;
}

std::string file_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_data(in.good(), "fingerprint: cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const uint32_t crc = io::crc32(buf.str());
  char hex[16];
  std::snprintf(hex, sizeof(hex), "%08x", crc);
  return std::string(hex);
}

}  // namespace motret
