#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "motret/checkpoint.hpp"
#include "motret/trainer.hpp"

using namespace motret;
using ad::Var;

namespace {

// A deliberately tiny model so training tests stay fast.
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.motion.model_width = 8;
  cfg.motion.latent_dim = 8;
  cfg.motion.heads = 2;
  cfg.motion.ffn_width = 16;
  cfg.motion.depth = 2;
  cfg.motion.max_frames = 16;
  cfg.text.model_width = 8;
  cfg.text.heads = 2;
  cfg.text.ffn_width = 16;
  cfg.text.depth = 2;
  cfg.text.latent_dim = 8;
  cfg.decoder.latent_dim = 8;
  cfg.decoder.heads = 2;
  cfg.decoder.ffn_width = 16;
  cfg.decoder.depth = 2;
  return cfg;
}

RetrievalModel tiny_model(const Dataset& ds, uint64_t seed) {
  std::vector<std::string> corpus;
  for (const auto& p : ds.pairs)
    for (const auto& t : p.texts) corpus.push_back(t);
  return RetrievalModel(tiny_config(), Vocab::build(corpus), TfidfTeacher::build(corpus), seed);
}

std::string temp_path(const std::string& name) {
  return std::string("/tmp/motret_trainer_test_") + name;
}

}  // namespace

TEST_CASE("loss mode strings round-trip") {
  for (LossMode m : {LossMode::Cccl, LossMode::InfoNceF, LossMode::CcclSelf,
                     LossMode::CcclSupervised}) {
    CHECK(loss_mode_from_string(to_string(m)) == m);
  }
  CHECK(to_string(LossMode::Cccl) == "cccl");
  CHECK(to_string(LossMode::InfoNceF) == "infonce_f");
  CHECK(to_string(LossMode::CcclSelf) == "cccl_self");
  CHECK(to_string(LossMode::CcclSupervised) == "cccl_supervised");
  CHECK_THROWS_AS(loss_mode_from_string("nope"), DataError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  TrainConfig bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = cfg;
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = cfg;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = cfg;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = cfg;
  bad.lambda_rec = -0.5;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = cfg;
  bad.swipe = {50, 50};
  CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("batching: sizes, membership, determinism") {
  Dataset ds = synth_dataset(21, 100, 4, 0.8, 0.1);  // 80 train pairs
  const std::vector<int> train = ds.split_indices(Split::Train);
  REQUIRE(train.size() == 80);

  std::vector<Batch> batches = make_batches(ds, 32, 777);
  CHECK(batches.size() == 2);  // floor(80/32), remainder dropped
  std::set<int> seen;
  const std::set<int> train_set(train.begin(), train.end());
  for (const Batch& b : batches) {
    CHECK(b.size() == 32);
    for (const BatchItem& it : b) {
      CHECK(train_set.count(it.pair_index) == 1);
      CHECK(seen.insert(it.pair_index).second);  // each pair at most once per epoch
      const auto& texts = ds.pairs[static_cast<size_t>(it.pair_index)].texts;
      CHECK(it.caption_index >= 0);
      CHECK(it.caption_index < static_cast<int>(texts.size()));
    }
  }
  CHECK(seen.size() == 64);

  // Same epoch seed: identical batches. Different seed: some difference.
  std::vector<Batch> again = make_batches(ds, 32, 777);
  REQUIRE(again.size() == batches.size());
  bool identical = true;
  for (size_t i = 0; i < batches.size(); ++i)
    for (size_t j = 0; j < batches[i].size(); ++j)
      if (batches[i][j].pair_index != again[i][j].pair_index ||
          batches[i][j].caption_index != again[i][j].caption_index)
        identical = false;
  CHECK(identical);

  std::vector<Batch> other = make_batches(ds, 32, 778);
  bool any_diff = false;
  for (size_t i = 0; i < batches.size() && !any_diff; ++i)
    for (size_t j = 0; j < batches[i].size(); ++j)
      if (batches[i][j].pair_index != other[i][j].pair_index) {
        any_diff = true;
        break;
      }
  CHECK(any_diff);

  CHECK_THROWS_AS(make_batches(ds, 81, 1), DataError);  // batch larger than split
}

TEST_CASE("batching: every train pair and caption gets sampled over epochs") {
  Dataset ds = synth_dataset(5, 40, 4);  // all pairs train, 1-3 captions each
  std::map<int, int> pair_count;
  std::map<std::pair<int, int>, int> caption_count;
  const int epochs = 200;
  for (int e = 0; e < epochs; ++e) {
    for (const Batch& b : make_batches(ds, 8, 1000 + static_cast<uint64_t>(e))) {
      for (const BatchItem& it : b) {
        ++pair_count[it.pair_index];
        ++caption_count[{it.pair_index, it.caption_index}];
      }
    }
  }
  // 40 of 40 pairs used each epoch (40/8=5 batches), so every pair appears
  // exactly `epochs` times.
  REQUIRE(pair_count.size() == 40);
  for (const auto& [pair, count] : pair_count) CHECK(count == epochs);
  // Every caption of every pair should be drawn at least once in 200 epochs.
  for (size_t i = 0; i < ds.pairs.size(); ++i) {
    for (int c = 0; c < static_cast<int>(ds.pairs[i].texts.size()); ++c) {
      CHECK(caption_count[{static_cast<int>(i), c}] > 0);
    }
  }
}

TEST_CASE("batching: dropped remainder is fair across epochs") {
  Dataset ds = synth_dataset(9, 50, 5);  // 50 train pairs, batch 16 -> 48 used
  std::map<int, int> count;
  const int epochs = 300;
  for (int e = 0; e < epochs; ++e)
    for (const Batch& b : make_batches(ds, 16, 42 + static_cast<uint64_t>(e)))
      for (const BatchItem& it : b) ++count[it.pair_index];
  REQUIRE(count.size() == 50);
  const double expected = epochs * 48.0 / 50.0;  // 288
  for (const auto& [pair, c] : count) {
    CHECK(c > expected * 0.93);
    CHECK(c <= epochs);
  }
}

TEST_CASE("optimizer matches a hand-computed adaptive-moment update") {
  nn::ParamStore ps;
  Rng rng(1);
  ps.add("w", Tensor({2}, {1.0, -2.0}));
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  AdamOptimizer opt(ps, lr, b1, b2, eps);

  // Expected trajectory computed alongside, including the binary32 snap.
  std::vector<double> w = {static_cast<double>(static_cast<float>(1.0)),
                           static_cast<double>(static_cast<float>(-2.0))};
  std::vector<double> m(2, 0.0), v(2, 0.0);
  for (int t = 1; t <= 3; ++t) {
    // Loss sum(w*w): gradient 2w, recomputed from the live (rounded) weights.
    ps.zero_grads();
    Var loss = ad::sum_all(ad::mul(ps.get("w"), ps.get("w")));
    ad::backward(loss);

    std::vector<double> g = {2.0 * w[0], 2.0 * w[1]};
    for (int i = 0; i < 2; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mhat = m[i] / (1 - std::pow(b1, t));
      const double vhat = v[i] / (1 - std::pow(b2, t));
      w[i] = static_cast<double>(
          static_cast<float>(w[i] - lr * mhat / (std::sqrt(vhat) + eps)));
    }
    opt.step();
    CHECK(ps.get("w").value().at(0) == doctest::Approx(w[0]).epsilon(1e-12));
    CHECK(ps.get("w").value().at(1) == doctest::Approx(w[1]).epsilon(1e-12));
  }
  CHECK(opt.steps_taken() == 3);

  // A parameter that never receives a gradient must stay put.
  nn::ParamStore ps2;
  ps2.add("used", Tensor({1}, {3.0}));
  ps2.add("idle", Tensor({2}, {5.0, -7.0}));
  AdamOptimizer opt2(ps2, 0.5);
  ps2.zero_grads();
  ad::backward(ad::sum_all(ad::mul(ps2.get("used"), ps2.get("used"))));
  opt2.step();
  CHECK(ps2.get("used").value().at(0) != 3.0);
  CHECK(ps2.get("idle").value().at(0) == 5.0);
  CHECK(ps2.get("idle").value().at(1) == -7.0);
}

TEST_CASE("training: identical seeds give bit-identical runs") {
  Dataset ds = synth_dataset(3, 10, 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  cfg.seed = 11;
  cfg.swipe = {1, 2};
  cfg.dropout = 0.1;

  RetrievalModel m1 = tiny_model(ds, 7);
  RetrievalModel m2 = tiny_model(ds, 7);
  TrainResult r1 = train(m1, ds, cfg);
  TrainResult r2 = train(m2, ds, cfg);

  REQUIRE(r1.history.size() == 2);
  REQUIRE(r2.history.size() == 2);
  // Epoch-1 loss must agree to the last bit, not approximately.
  CHECK(r1.history[0].terms.at("total") == r2.history[0].terms.at("total"));
  CHECK(r1.history[1].terms.at("total") == r2.history[1].terms.at("total"));

  // Final parameters and embeddings identical.
  for (const auto& [name, var] : m1.params().items()) {
    CHECK(bit_equal(var.value(), m2.params().get(name).value()));
  }
  CHECK(bit_equal(m1.embed_motion(ds.pairs[0].motion), m2.embed_motion(ds.pairs[0].motion)));
  CHECK(bit_equal(m1.embed_text(ds.pairs[0].texts[0]), m2.embed_text(ds.pairs[0].texts[0])));

  // A different data-order seed must actually change the outcome.
  RetrievalModel m3 = tiny_model(ds, 7);
  TrainConfig cfg3 = cfg;
  cfg3.seed = 12;
  TrainResult r3 = train(m3, ds, cfg3);
  CHECK(r1.history[0].terms.at("total") != r3.history[0].terms.at("total"));
}

TEST_CASE("training: lambda follows the configured schedule per mode") {
  Dataset ds = synth_dataset(4, 8, 2);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-4;
  cfg.swipe = {2, 4};
  cfg.dropout = 0.0;

  {
    RetrievalModel m = tiny_model(ds, 1);
    TrainResult r = train(m, ds, cfg);
    REQUIRE(r.history.size() == 4);
    CHECK(r.history[0].lambda == 0.0);
    CHECK(r.history[1].lambda == 0.0);
    CHECK(r.history[2].lambda == 0.5);
    CHECK(r.history[3].lambda == 1.0);
    CHECK(r.history[0].terms.count("nce") == 1);
    CHECK(r.history[0].terms.count("cross_to_uni") == 1);
    CHECK(r.history[0].terms.count("teacher_to_uni") == 1);
    CHECK(r.history[0].terms.count("rec") == 1);
    CHECK(r.history[0].terms.count("kl") == 1);
  }
  {
    TrainConfig c2 = cfg;
    c2.epochs = 2;
    c2.loss_mode = LossMode::CcclSelf;
    RetrievalModel m = tiny_model(ds, 1);
    TrainResult r = train(m, ds, c2);
    CHECK(r.history[0].lambda == 1.0);
    CHECK(r.history[1].lambda == 1.0);
  }
  {
    TrainConfig c3 = cfg;
    c3.epochs = 2;
    c3.loss_mode = LossMode::CcclSupervised;
    RetrievalModel m = tiny_model(ds, 1);
    TrainResult r = train(m, ds, c3);
    CHECK(r.history[0].lambda == 0.0);
    CHECK(r.history[1].lambda == 0.0);
  }
  {
    TrainConfig c4 = cfg;
    c4.epochs = 2;
    c4.loss_mode = LossMode::InfoNceF;
    RetrievalModel m = tiny_model(ds, 1);
    TrainResult r = train(m, ds, c4);
    CHECK(r.history[0].terms.count("nce") == 1);
    CHECK(r.history[0].terms.count("cross_to_uni") == 0);
    CHECK(r.history[0].terms.count("teacher_to_uni") == 0);
  }
}

TEST_CASE("training: loss decreases on a tiny overfit set") {
  Dataset ds = synth_dataset(6, 8, 2);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 4;
  cfg.learning_rate = 3e-3;
  cfg.seed = 2;
  cfg.swipe = {2, 6};
  cfg.dropout = 0.0;

  RetrievalModel m = tiny_model(ds, 3);
  TrainResult r = train(m, ds, cfg);
  REQUIRE(r.history.size() == 15);
  const double first = r.history.front().terms.at("total");
  const double last = r.history.back().terms.at("total");
  CHECK(last < first);
}

TEST_CASE("training: history file is structured line records") {
  Dataset ds = synth_dataset(8, 8, 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-4;
  cfg.dropout = 0.0;
  const std::string path = temp_path("history.jsonl");

  RetrievalModel m = tiny_model(ds, 4);
  train(m, ds, cfg, "", path);

  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  int lines = 0;
  std::set<int> epochs_seen;
  bool saw_lambda = false, saw_total = false;
  while (std::getline(in, line)) {
    ++lines;
    nlohmann::json j = nlohmann::json::parse(line);
    REQUIRE(j.contains("epoch"));
    REQUIRE(j.contains("term"));
    REQUIRE(j.contains("value"));
    epochs_seen.insert(j["epoch"].get<int>());
    if (j["term"] == "lambda") saw_lambda = true;
    if (j["term"] == "total") saw_total = true;
  }
  CHECK(lines > 0);
  CHECK(epochs_seen == std::set<int>{1, 2});
  CHECK(saw_lambda);
  CHECK(saw_total);
  std::remove(path.c_str());
}

TEST_CASE("training: joint dataset equals the merge of its parts") {
  Dataset a = synth_dataset(31, 6, 2);
  Dataset b = synth_dataset(32, 6, 2);
  for (auto& p : b.pairs) p.id += "_b";  // distinct corpora carry distinct ids
  b.provenance = {"synthetic_b"};
  Dataset joint = unify(a, b);
  REQUIRE(joint.pairs.size() == 12);

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-4;
  cfg.seed = 5;
  cfg.dropout = 0.0;

  // Re-merging in the same order must reproduce the exact same run.
  Dataset joint2 = unify(a, b);
  RetrievalModel m1 = tiny_model(joint, 9);
  RetrievalModel m2 = tiny_model(joint2, 9);
  TrainResult r1 = train(m1, joint, cfg);
  TrainResult r2 = train(m2, joint2, cfg);
  CHECK(r1.history[0].terms.at("total") == r2.history[0].terms.at("total"));

  // All pairs from both sources are reachable by the batcher.
  std::set<int> seen;
  for (int e = 0; e < 50; ++e)
    for (const Batch& batch : make_batches(joint, 4, static_cast<uint64_t>(e)))
      for (const BatchItem& it : batch) seen.insert(it.pair_index);
  CHECK(seen.size() == 12);
}

TEST_CASE("training: runaway learning rate raises a numeric error") {
  Dataset ds = synth_dataset(10, 8, 2);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e18;
  cfg.dropout = 0.0;

  RetrievalModel m = tiny_model(ds, 6);
  CHECK_THROWS(train(m, ds, cfg));
}

TEST_CASE("checkpoint: save/load round-trips the whole model bit-for-bit") {
  Dataset ds = synth_dataset(12, 8, 2);
  RetrievalModel m = tiny_model(ds, 13);
  const std::string path = temp_path("roundtrip.mckp");
  save_checkpoint(m, path);
  RetrievalModel loaded = load_checkpoint(path);

  // Identical parameter tensors, in the same registration order.
  REQUIRE(loaded.params().items().size() == m.params().items().size());
  for (size_t i = 0; i < m.params().items().size(); ++i) {
    CHECK(m.params().items()[i].first == loaded.params().items()[i].first);
    CHECK(bit_equal(m.params().items()[i].second.value(),
                    loaded.params().items()[i].second.value()));
  }
  // Identical teacher state and embeddings.
  REQUIRE(loaded.teacher().idf().size() == m.teacher().idf().size());
  for (size_t i = 0; i < m.teacher().idf().size(); ++i)
    CHECK(loaded.teacher().idf()[i] == m.teacher().idf()[i]);
  CHECK(loaded.teacher().doc_count() == m.teacher().doc_count());
  CHECK(bit_equal(m.embed_motion(ds.pairs[3].motion), loaded.embed_motion(ds.pairs[3].motion)));
  CHECK(bit_equal(m.embed_text(ds.pairs[3].texts[0]), loaded.embed_text(ds.pairs[3].texts[0])));
  CHECK(config_to_json(m.config()) == config_to_json(loaded.config()));
  std::remove(path.c_str());
}

TEST_CASE("checkpoint: corruption and truncation are rejected") {
  Dataset ds = synth_dataset(14, 8, 2);
  RetrievalModel m = tiny_model(ds, 15);
  const std::string path = temp_path("corrupt.mckp");
  save_checkpoint(m, path);

  // Flip one payload byte: checksum must catch it.
  {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string bytes = ss.str();
    REQUIRE(bytes.size() > 100);
    bytes[bytes.size() / 2] ^= 0x40;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("checksum"), DataError);

  // Truncation is also a hard error.
  save_checkpoint(m, path);
  {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string bytes = ss.str();
    bytes.resize(bytes.size() - 9);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_checkpoint(path), DataError);

  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.mckp")), DataError);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint written by training matches the live model") {
  Dataset ds = synth_dataset(16, 8, 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  cfg.seed = 3;
  cfg.dropout = 0.1;
  const std::string path = temp_path("train_ckpt.mckp");

  RetrievalModel m = tiny_model(ds, 17);
  train(m, ds, cfg, path, "");
  RetrievalModel loaded = load_checkpoint(path);
  for (size_t i = 0; i < m.params().items().size(); ++i) {
    CHECK(bit_equal(m.params().items()[i].second.value(),
                    loaded.params().items()[i].second.value()));
  }
  CHECK(bit_equal(m.embed_motion(ds.pairs[1].motion), loaded.embed_motion(ds.pairs[1].motion)));
  std::remove(path.c_str());
}

TEST_CASE("model config JSON round-trips") {
  ModelConfig cfg = tiny_config();
  cfg.text.vocab_size = 64;
  cfg.motion.attention_mode = AttentionMode::FactorizedSelfAttention;
  cfg.log_tau_init = -1.5;
  ModelConfig back = config_from_json(config_to_json(cfg));
  CHECK(config_to_json(back) == config_to_json(cfg));
  CHECK(back.motion.attention_mode == AttentionMode::FactorizedSelfAttention);
  CHECK(back.log_tau_init == -1.5);
  CHECK(back.motion.body_groups == cfg.motion.body_groups);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse("{\"motion\": 3}")), DataError);
}
