#pragma once

#include <string>
#include <vector>

#include "motret/model.hpp"

namespace motret {

struct DbMetadata {
  std::string checkpoint_hash;  // hex CRC of the producing checkpoint file
  std::string dataset_name;
  std::string created;  // empty by default so rebuilds stay bit-identical
};

// Immutable exact-cosine index: ids mapped to unit vectors kept on the
// binary32 grid (the on-disk precision), so load/save round-trips exactly.
class EmbeddingDB {
 public:
  EmbeddingDB(int dim, DbMetadata meta = {});

  // Normalizes and appends; ids must be unique and non-empty.
  void add(const std::string& id, const Tensor& vec);

  int dim() const { return dim_; }
  size_t size() const { return ids_.size(); }
  const DbMetadata& metadata() const { return meta_; }
  const std::vector<std::string>& ids() const { return ids_; }
  Tensor vector_of(size_t index) const;  // stored (normalized) vector as f64

  struct Hit {
    std::string id;
    double score;
  };
  // Exact top-k by dot product (entries are unit vectors; the query is
  // normalized here). Ties break by insertion order. Requests beyond the db
  // size are truncated, reported through `truncated` when provided.
  std::vector<Hit> query(const Tensor& embedding, int k, bool* truncated = nullptr) const;

  void save(const std::string& path) const;
  static EmbeddingDB load(const std::string& path);

 private:
  int dim_ = 0;
  DbMetadata meta_;
  std::vector<std::string> ids_;
  std::vector<float> data_;  // row-major, size() * dim_
};

// One entry per split motion: the encoder mean vector, normalized.
EmbeddingDB build_db(const RetrievalModel& model, const Dataset& ds, Split split,
                     DbMetadata meta = {});

// Hex CRC-32 of a file's bytes (checkpoint fingerprint for DB metadata).
std::string file_fingerprint(const std::string& path);

}  // namespace motret
