#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"
#include "motret/model.hpp"

namespace motret {

inline constexpr std::array<int, 5> kRecallKs = {1, 2, 3, 5, 10};

// Exhaustive cosine ranking of one query row against every db row.
struct RankedList {
  int query = 0;
  std::vector<int> order;      // candidate indices, best first
  std::vector<double> scores;  // cosine, non-increasing; ties by ascending index
};

std::vector<RankedList> rank_all(const Tensor& queries, const Tensor& db);

// Recall percentages at k in {1,2,3,5,10} plus the median rank.
struct DirectionReport {
  std::array<double, 5> recall{};  // percents, aligned with kRecallKs
  double med_r = 0.0;

  double recall_sum() const;
};

DirectionReport recall_metrics(const std::vector<int>& ranks);

// One retrieval protocol evaluated in both directions.
struct ProtocolReport {
  std::string protocol;  // all | all_threshold | dissimilar | small_batches
  DirectionReport t2m;
  DirectionReport m2t;
  double rsum = 0.0;  // sum of the ten recalls across both directions
};

// (i) every pair is both query and candidate; rank of the true counterpart.
ProtocolReport protocol_all(const Tensor& t_emb, const Tensor& m_emb);

// (ii) a candidate is also correct when its caption's teacher similarity to the
// query's caption reaches `theta`; the rank is the best rank over correct
// candidates. An inactive threshold reproduces protocol_all exactly.
ProtocolReport protocol_all_threshold(const Tensor& t_emb, const Tensor& m_emb,
                                      const Tensor& teacher_sim, double theta);

// (iii) evaluation on a maximally dissimilar subset of n pairs (caption
// distance 1 - teacher similarity). Small instances are solved exactly
// (optimal max-min subset, lexicographic tie-break); larger ones fall back to
// farthest-point selection seeded at the pair with the lowest mean similarity.
// Returned indices are sorted ascending.
std::vector<int> dissimilar_subset(const Tensor& teacher_sim, int n);

ProtocolReport protocol_dissimilar(const Tensor& t_emb, const Tensor& m_emb,
                                   const Tensor& teacher_sim, int n);

// (iv) seeded random partitions into fixed-size batches (remainder dropped),
// metrics averaged arithmetically over all batches of all `reps` partitions.
ProtocolReport protocol_small_batches(const Tensor& t_emb, const Tensor& m_emb, int batch,
                                      uint64_t seed, int reps);

// Motion-to-motion retrieval with binary label relevance; the query itself is
// excluded from its candidate set. Every query must have a same-label
// candidate.
struct M2mReport {
  double map = 0.0;
  double ndcg = 0.0;
};

M2mReport eval_m2m(const Tensor& m_emb, const std::vector<std::string>& labels);

// ---- dataset-level driver ----

struct EvalOptions {
  std::vector<std::string> protocols = {"all", "all_threshold", "dissimilar", "small_batches"};
  double threshold = 0.95;
  int subset = 100;
  int batch = 32;
  int reps = 10;
  uint64_t seed = 0;
  bool m2m = true;  // skipped automatically when labels are absent
};

struct EvalResult {
  std::vector<ProtocolReport> reports;
  bool has_m2m = false;
  M2mReport m2m;
};

// Embeds the split (first caption per pair as the canonical query), builds the
// teacher similarity matrix, and runs the requested protocols.
EvalResult evaluate_model(const RetrievalModel& model, const Dataset& ds, Split split,
                          const EvalOptions& opt);

std::string render_report(const EvalResult& r);
nlohmann::json report_to_json(const EvalResult& r);

}  // namespace motret
