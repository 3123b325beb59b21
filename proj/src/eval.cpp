#include "motret/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "motret/text.hpp"

namespace motret {

namespace {

void check_embedding_matrix(const Tensor& x, const char* what) {
  check_data(x.shape().size() == 2, std::string(what) + ": expected a rank-2 embedding matrix");
  check_data(x.shape()[0] >= 1 && x.shape()[1] >= 1, std::string(what) + ": empty matrix");
}

std::vector<double> row_norms(const Tensor& x, const char* what) {
  const int n = x.shape()[0], d = x.shape()[1];
  std::vector<double> norms(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += x.at(i, j) * x.at(i, j);
    check_data(s > 0.0, std::string(what) + ": zero-norm row " + std::to_string(i));
    norms[static_cast<size_t>(i)] = std::sqrt(s);
  }
  return norms;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  const int d = x.shape()[1];
  Tensor out({static_cast<int>(idx.size()), d});
  for (size_t r = 0; r < idx.size(); ++r)
    for (int j = 0; j < d; ++j) out.at(static_cast<int>(r), j) = x.at(idx[r], j);
  return out;
}

// 1-based rank of the true counterpart (candidate i for query i) per query.
std::vector<int> true_ranks(const Tensor& queries, const Tensor& db) {
  std::vector<RankedList> ranked = rank_all(queries, db);
  std::vector<int> ranks(ranked.size());
  for (size_t i = 0; i < ranked.size(); ++i) {
    const auto& order = ranked[i].order;
    const auto pos = std::find(order.begin(), order.end(), static_cast<int>(i));
    check_data(pos != order.end(), "protocol_all: query without counterpart");
    ranks[i] = static_cast<int>(pos - order.begin()) + 1;
  }
  return ranks;
}

// Best (minimum) rank over all candidates marked correct for the query.
std::vector<int> relaxed_ranks(const Tensor& queries, const Tensor& db, const Tensor& teacher_sim,
                               double theta) {
  std::vector<RankedList> ranked = rank_all(queries, db);
  std::vector<int> ranks(ranked.size());
  for (size_t i = 0; i < ranked.size(); ++i) {
    const auto& order = ranked[i].order;
    int rank = 0;
    for (size_t pos = 0; pos < order.size(); ++pos) {
      const int j = order[pos];
      if (j == static_cast<int>(i) || teacher_sim.at(static_cast<int>(i), j) >= theta) {
        rank = static_cast<int>(pos) + 1;
        break;
      }
    }
    check_data(rank > 0, "protocol_all_threshold: query without counterpart");
    ranks[i] = rank;
  }
  return ranks;
}

double min_pairwise_distance(const Tensor& sim, const std::vector<int>& subset) {
  double best = std::numeric_limits<double>::infinity();
  for (size_t a = 0; a < subset.size(); ++a)
    for (size_t b = a + 1; b < subset.size(); ++b)
      best = std::min(best, 1.0 - sim.at(subset[a], subset[b]));
  return best;
}

// Number of n-subsets of N, saturating at `limit + 1`.
double subset_count(int N, int n, double limit) {
  double c = 1.0;
  for (int i = 1; i <= n; ++i) {
    c *= static_cast<double>(N - n + i) / static_cast<double>(i);
    if (c > limit) return limit + 1.0;
  }
  return c;
}

ProtocolReport mk_report(std::string protocol, DirectionReport t2m, DirectionReport m2t) {
  ProtocolReport r;
  r.protocol = std::move(protocol);
  r.t2m = t2m;
  r.m2t = m2t;
  r.rsum = t2m.recall_sum() + m2t.recall_sum();
  return r;
}

}  // namespace

std::vector<RankedList> rank_all(const Tensor& queries, const Tensor& db) {
  check_embedding_matrix(queries, "rank_all queries");
  check_embedding_matrix(db, "rank_all db");
  check_data(queries.shape()[1] == db.shape()[1], "rank_all: dimension mismatch");
  const int Q = queries.shape()[0], M = db.shape()[0], d = queries.shape()[1];
  const std::vector<double> qn = row_norms(queries, "rank_all queries");
  const std::vector<double> cn = row_norms(db, "rank_all db");

  std::vector<RankedList> out(static_cast<size_t>(Q));
  for (int i = 0; i < Q; ++i) {
    std::vector<double> sims(static_cast<size_t>(M));
    for (int j = 0; j < M; ++j) {
      double dot = 0.0;
      for (int k = 0; k < d; ++k) dot += queries.at(i, k) * db.at(j, k);
      sims[static_cast<size_t>(j)] = dot / (qn[static_cast<size_t>(i)] * cn[static_cast<size_t>(j)]);
    }
    std::vector<int> order(static_cast<size_t>(M));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&sims](int a, int b) {
      const double sa = sims[static_cast<size_t>(a)], sb = sims[static_cast<size_t>(b)];
      return sa > sb || (sa == sb && a < b);
    });
    RankedList& rl = out[static_cast<size_t>(i)];
    rl.query = i;
    rl.order = order;
    rl.scores.resize(static_cast<size_t>(M));
    for (int p = 0; p < M; ++p)
      rl.scores[static_cast<size_t>(p)] = sims[static_cast<size_t>(order[static_cast<size_t>(p)])];
  }
  return out;
}

double DirectionReport::recall_sum() const {
  double s = 0.0;
  for (double r : recall) s += r;
  return s;
}

DirectionReport recall_metrics(const std::vector<int>& ranks) {
  check_data(!ranks.empty(), "recall_metrics: empty rank list");
  for (int r : ranks) check_data(r >= 1, "recall_metrics: ranks are 1-based");
  DirectionReport rep;
  const double Q = static_cast<double>(ranks.size());
  for (size_t ki = 0; ki < kRecallKs.size(); ++ki) {
    long hits = 0;
    for (int r : ranks) hits += (r <= kRecallKs[ki]) ? 1 : 0;
    rep.recall[ki] = 100.0 * static_cast<double>(hits) / Q;
  }
  std::vector<int> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  rep.med_r = (n % 2 == 1) ? static_cast<double>(sorted[n / 2])
                           : 0.5 * (static_cast<double>(sorted[n / 2 - 1]) +
                                    static_cast<double>(sorted[n / 2]));
  return rep;
}

ProtocolReport protocol_all(const Tensor& t_emb, const Tensor& m_emb) {
  check_embedding_matrix(t_emb, "protocol_all text");
  check_embedding_matrix(m_emb, "protocol_all motion");
  check_data(t_emb.shape()[0] == m_emb.shape()[0], "protocol_all: pair count mismatch");
  return mk_report("all", recall_metrics(true_ranks(t_emb, m_emb)),
                   recall_metrics(true_ranks(m_emb, t_emb)));
}

ProtocolReport protocol_all_threshold(const Tensor& t_emb, const Tensor& m_emb,
                                      const Tensor& teacher_sim, double theta) {
  check_embedding_matrix(t_emb, "protocol_all_threshold text");
  check_embedding_matrix(m_emb, "protocol_all_threshold motion");
  const int N = t_emb.shape()[0];
  check_data(m_emb.shape()[0] == N, "protocol_all_threshold: pair count mismatch");
  check_data(teacher_sim.shape().size() == 2 && teacher_sim.shape()[0] == N &&
                 teacher_sim.shape()[1] == N,
             "protocol_all_threshold: teacher matrix must be N x N");
  check_data(theta >= 0.0 && theta <= 1.0, "protocol_all_threshold: theta must lie in [0,1]");
  return mk_report("all_threshold",
                   recall_metrics(relaxed_ranks(t_emb, m_emb, teacher_sim, theta)),
                   recall_metrics(relaxed_ranks(m_emb, t_emb, teacher_sim, theta)));
}

std::vector<int> dissimilar_subset(const Tensor& teacher_sim, int n) {
  check_data(teacher_sim.shape().size() == 2 && teacher_sim.shape()[0] == teacher_sim.shape()[1],
             "dissimilar_subset: similarity matrix must be square");
  const int N = teacher_sim.shape()[0];
  check_data(n >= 1, "dissimilar_subset: subset size must be positive");
  check_data(n <= N, "dissimilar_subset: subset size exceeds pair count");

  std::vector<int> all(static_cast<size_t>(N));
  std::iota(all.begin(), all.end(), 0);
  if (n == N) return all;

  // Seeded start: the pair least similar to everything else on average.
  int start = 0;
  double best_mean = std::numeric_limits<double>::infinity();
  for (int i = 0; i < N; ++i) {
    double mean = 0.0;
    for (int j = 0; j < N; ++j)
      if (j != i) mean += teacher_sim.at(i, j);
    mean /= static_cast<double>(N - 1);
    if (mean < best_mean) {
      best_mean = mean;
      start = i;
    }
  }
  if (n == 1) return {start};

  // Small instances: exact maximization of the minimum pairwise distance,
  // first subset in lexicographic order wins ties.
  constexpr double kExactLimit = 200000.0;
  if (subset_count(N, n, kExactLimit) <= kExactLimit) {
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<int> best = idx;
    double best_obj = -std::numeric_limits<double>::infinity();
    while (true) {
      const double obj = min_pairwise_distance(teacher_sim, idx);
      if (obj > best_obj) {
        best_obj = obj;
        best = idx;
      }
      // next combination
      int p = n - 1;
      while (p >= 0 && idx[static_cast<size_t>(p)] == N - n + p) --p;
      if (p < 0) break;
      ++idx[static_cast<size_t>(p)];
      for (int q = p + 1; q < n; ++q)
        idx[static_cast<size_t>(q)] = idx[static_cast<size_t>(q - 1)] + 1;
    }
    return best;  // already ascending
  }

  // Farthest-point fallback: greedily add the pair whose worst-case similarity
  // to the selected set is smallest.
  std::vector<int> chosen = {start};
  std::vector<bool> used(static_cast<size_t>(N), false);
  used[static_cast<size_t>(start)] = true;
  while (static_cast<int>(chosen.size()) < n) {
    int pick = -1;
    double pick_key = std::numeric_limits<double>::infinity();
    for (int j = 0; j < N; ++j) {
      if (used[static_cast<size_t>(j)]) continue;
      double max_sim = -std::numeric_limits<double>::infinity();
      for (int s : chosen) max_sim = std::max(max_sim, teacher_sim.at(j, s));
      if (max_sim < pick_key) {
        pick_key = max_sim;
        pick = j;
      }
    }
    chosen.push_back(pick);
    used[static_cast<size_t>(pick)] = true;
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

ProtocolReport protocol_dissimilar(const Tensor& t_emb, const Tensor& m_emb,
                                   const Tensor& teacher_sim, int n) {
  check_embedding_matrix(t_emb, "protocol_dissimilar text");
  check_embedding_matrix(m_emb, "protocol_dissimilar motion");
  check_data(t_emb.shape()[0] == m_emb.shape()[0], "protocol_dissimilar: pair count mismatch");
  const std::vector<int> idx = dissimilar_subset(teacher_sim, n);
  ProtocolReport r = protocol_all(gather_rows(t_emb, idx), gather_rows(m_emb, idx));
  r.protocol = "dissimilar";
  return r;
}

ProtocolReport protocol_small_batches(const Tensor& t_emb, const Tensor& m_emb, int batch,
                                      uint64_t seed, int reps) {
  check_embedding_matrix(t_emb, "protocol_small_batches text");
  check_embedding_matrix(m_emb, "protocol_small_batches motion");
  const int N = t_emb.shape()[0];
  check_data(m_emb.shape()[0] == N, "protocol_small_batches: pair count mismatch");
  check_data(batch >= 2, "protocol_small_batches: batch must be >= 2");
  check_data(reps >= 1, "protocol_small_batches: reps must be >= 1");
  check_data(N >= batch, "protocol_small_batches: fewer pairs than one batch");

  ProtocolReport acc;
  acc.protocol = "small_batches";
  long count = 0;
  for (int rep = 0; rep < reps; ++rep) {
    std::vector<int> perm(static_cast<size_t>(N));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = Rng::derive(seed, 0x5ba7c, static_cast<uint64_t>(rep));
    shuffle_vec(perm, rng);
    const int n_batches = N / batch;
    for (int b = 0; b < n_batches; ++b) {
      const std::vector<int> idx(perm.begin() + static_cast<long>(b) * batch,
                                 perm.begin() + static_cast<long>(b + 1) * batch);
      ProtocolReport one = protocol_all(gather_rows(t_emb, idx), gather_rows(m_emb, idx));
      for (size_t k = 0; k < kRecallKs.size(); ++k) {
        acc.t2m.recall[k] += one.t2m.recall[k];
        acc.m2t.recall[k] += one.m2t.recall[k];
      }
      acc.t2m.med_r += one.t2m.med_r;
      acc.m2t.med_r += one.m2t.med_r;
      ++count;
    }
  }
  for (size_t k = 0; k < kRecallKs.size(); ++k) {
    acc.t2m.recall[k] /= static_cast<double>(count);
    acc.m2t.recall[k] /= static_cast<double>(count);
  }
  acc.t2m.med_r /= static_cast<double>(count);
  acc.m2t.med_r /= static_cast<double>(count);
  acc.rsum = acc.t2m.recall_sum() + acc.m2t.recall_sum();
  return acc;
}

M2mReport eval_m2m(const Tensor& m_emb, const std::vector<std::string>& labels) {
  check_embedding_matrix(m_emb, "eval_m2m");
  const int N = m_emb.shape()[0];
  check_data(static_cast<int>(labels.size()) == N, "eval_m2m: one label per motion required");
  check_data(N >= 2, "eval_m2m: need at least two motions");
  for (const auto& l : labels) check_data(!l.empty(), "eval_m2m: empty label");

  std::vector<RankedList> ranked = rank_all(m_emb, m_emb);
  double map = 0.0, ndcg = 0.0;
  for (int i = 0; i < N; ++i) {
    long total_rel = 0;
    for (int j = 0; j < N; ++j)
      if (j != i && labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) ++total_rel;
    check_data(total_rel > 0, "eval_m2m: no same-label candidate for query " + std::to_string(i));

    long hits = 0;
    int pos = 0;  // 1-based rank among the N-1 candidates (self excluded)
    double ap = 0.0, dcg = 0.0;
    for (int j : ranked[static_cast<size_t>(i)].order) {
      if (j == i) continue;
      ++pos;
      if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(pos);
        dcg += 1.0 / std::log2(static_cast<double>(pos) + 1.0);
      }
    }
    double idcg = 0.0;
    for (long r = 1; r <= total_rel; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    map += ap / static_cast<double>(total_rel);
    ndcg += dcg / idcg;
  }
  M2mReport rep;
  rep.map = map / static_cast<double>(N);
  rep.ndcg = ndcg / static_cast<double>(N);
  return rep;
}

EvalResult evaluate_model(const RetrievalModel& model, const Dataset& ds, Split split,
                          const EvalOptions& opt) {
  const std::vector<int> idx = ds.split_indices(split);
  check_data(idx.size() >= 2, "evaluate_model: split has fewer than two pairs");

  std::vector<std::string> captions;
  std::vector<Tensor> t_rows, m_rows;
  bool labeled = true;
  std::vector<std::string> labels;
  for (int i : idx) {
    const TextMotionPair& p = ds.pairs[static_cast<size_t>(i)];
    captions.push_back(p.texts.front());  // canonical query caption
    t_rows.push_back(model.embed_text(p.texts.front()));
    m_rows.push_back(model.embed_motion(p.motion));
    labels.push_back(p.label);
    labeled = labeled && !p.label.empty();
  }
  const int N = static_cast<int>(idx.size());
  const int d = t_rows.front().shape()[0];
  Tensor t_emb({N, d}), m_emb({N, d});
  for (int r = 0; r < N; ++r)
    for (int c = 0; c < d; ++c) {
      t_emb.at(r, c) = t_rows[static_cast<size_t>(r)].at(c);
      m_emb.at(r, c) = m_rows[static_cast<size_t>(r)].at(c);
    }
  const Tensor teacher_sim = teacher_matrix(captions, model.teacher());

  EvalResult out;
  for (const std::string& p : opt.protocols) {
    if (p == "all") {
      out.reports.push_back(protocol_all(t_emb, m_emb));
    } else if (p == "all_threshold") {
      out.reports.push_back(protocol_all_threshold(t_emb, m_emb, teacher_sim, opt.threshold));
    } else if (p == "dissimilar") {
      out.reports.push_back(protocol_dissimilar(t_emb, m_emb, teacher_sim, opt.subset));
    } else if (p == "small_batches") {
      out.reports.push_back(protocol_small_batches(t_emb, m_emb, opt.batch, opt.seed, opt.reps));
    } else {
      check_data(false, "evaluate_model: unknown protocol '" + p + "'");
    }
  }
  if (opt.m2m && labeled) {
    out.m2m = eval_m2m(m_emb, labels);
    out.has_m2m = true;
  }
  return out;
}

std::string render_report(const EvalResult& r) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-14s %-4s %8s %8s %8s %8s %8s %8s %10s\n", "protocol", "dir",
                "MedR", "R@1", "R@2", "R@3", "R@5", "R@10", "Rsum");
  os << buf;
  for (const ProtocolReport& p : r.reports) {
    const DirectionReport* dirs[2] = {&p.t2m, &p.m2t};
    const char* names[2] = {"t2m", "m2t"};
    for (int k = 0; k < 2; ++k) {
      std::snprintf(buf, sizeof(buf), "%-14s %-4s %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f", p.protocol.c_str(),
                    names[k], dirs[k]->med_r, dirs[k]->recall[0], dirs[k]->recall[1],
                    dirs[k]->recall[2], dirs[k]->recall[3], dirs[k]->recall[4]);
      os << buf;
      if (k == 1) {
        std::snprintf(buf, sizeof(buf), " %10.2f", p.rsum);
        os << buf;
      }
      os << "\n";
    }
  }
  if (r.has_m2m) {
    std::snprintf(buf, sizeof(buf), "m2m            mAP %8.4f  nDCG %8.4f\n", r.m2m.map,
                  r.m2m.ndcg);
    os << buf;
  }
  return os.str();
}

nlohmann::json report_to_json(const EvalResult& r) {
  nlohmann::json j;
  j["protocols"] = nlohmann::json::array();
  for (const ProtocolReport& p : r.reports) {
    nlohmann::json e;
    e["protocol"] = p.protocol;
    for (int k = 0; k < 2; ++k) {
      const DirectionReport& d = (k == 0) ? p.t2m : p.m2t;
      nlohmann::json dj;
      dj["medr"] = d.med_r;
      for (size_t ki = 0; ki < kRecallKs.size(); ++ki)
        dj["recall"][std::to_string(kRecallKs[ki])] = d.recall[ki];
      e[(k == 0) ? "t2m" : "m2t"] = dj;
    }
    e["rsum"] = p.rsum;
    j["protocols"].push_back(e);
  }
  if (r.has_m2m) {
    j["m2m"]["map"] = r.m2m.map;
    j["m2m"]["ndcg"] = r.m2m.ndcg;
  }
  return j;
}

}  // namespace motret
