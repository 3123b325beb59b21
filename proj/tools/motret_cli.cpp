#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "motret/checkpoint.hpp"
#include "motret/eval.hpp"
#include "motret/gradsuite.hpp"
#include "motret/store.hpp"
#include "motret/trainer.hpp"

namespace {

using namespace motret;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// Accepts either a manifest file or a dataset directory containing one.
std::string resolve_manifest(const std::string& path) {
  if (std::filesystem::is_directory(path))
    return (std::filesystem::path(path) / "manifest.jsonl").string();
  return path;
}

Dataset load_datasets(const std::vector<std::string>& manifests) {
  check_data(!manifests.empty(), "no dataset manifests given");
  Dataset ds = load_manifest(resolve_manifest(manifests[0]));
  for (size_t i = 1; i < manifests.size(); ++i)
    ds = unify(ds, load_manifest(resolve_manifest(manifests[i])));
  return ds;
}

// User config files may give just the fields they care about; the rest come
// from the defaults, and the vocabulary size always comes from the corpus.
ModelConfig load_model_config(const std::string& path, int vocab_size) {
  nlohmann::json base = config_to_json(ModelConfig{});
  base["text"]["vocab_size"] = vocab_size;
  if (!path.empty()) {
    std::ifstream in(path);
    check_data(in.good(), "cannot open model config: " + path);
    nlohmann::json user = nlohmann::json::parse(in, nullptr, false);
    check_data(!user.is_discarded(), "model config is not valid JSON: " + path);
    check_data(user.is_object(), "model config must be a JSON object: " + path);
    base.merge_patch(user);
  }
  return config_from_json(base);
}

std::vector<std::string> train_corpus(const Dataset& ds) {
  std::vector<std::string> corpus;
  for (int i : ds.split_indices(Split::Train))
    for (const auto& t : ds.pairs[static_cast<size_t>(i)].texts) corpus.push_back(t);
  check_data(!corpus.empty(), "training split has no captions");
  return corpus;
}

// ---- subcommand payloads ----

struct SynthArgs {
  uint64_t seed = 0;
  int n = 64;
  int k = 4;
  double train_frac = 0.7;
  double val_frac = 0.1;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  Dataset ds = synth_dataset(a.seed, a.n, a.k, a.train_frac, a.val_frac);
  save_dataset(ds, a.out);
  std::cout << "wrote " << ds.pairs.size() << " pairs (" << a.k << " archetypes) to " << a.out
            << "\n";
  return kExitOk;
}

struct PrepareArgs {
  std::string manifest;
};

int run_prepare(const PrepareArgs& a) {
  Dataset ds = load_manifest(resolve_manifest(a.manifest));
  long n_train = static_cast<long>(ds.split_indices(Split::Train).size());
  long n_val = static_cast<long>(ds.split_indices(Split::Val).size());
  long n_test = static_cast<long>(ds.split_indices(Split::Test).size());
  long captions = 0;
  long labeled = 0;
  int max_frames = 0;
  for (const auto& p : ds.pairs) {
    captions += static_cast<long>(p.texts.size());
    labeled += p.label.empty() ? 0 : 1;
    max_frames = std::max(max_frames, p.motion.frames());
  }
  std::string sources;
  for (const auto& s : ds.provenance) sources += (sources.empty() ? "" : "+") + s;
  std::cout << "manifest ok: " << ds.pairs.size() << " pairs (train " << n_train << " / val "
            << n_val << " / test " << n_test << "), " << captions << " captions, " << labeled
            << " labeled, longest clip " << max_frames << " frames, sources: " << sources << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> datasets;
  std::string out = "model.mckp";
  std::string history;
  uint64_t seed = 0;
  int epochs = 80;
  int batch_size = 16;
  double lr = 5e-5;
  double dropout = 0.1;
  std::string loss = "cccl";
  std::string swipe = "40:100";
  double filter_threshold = 0.95;
};

SwipeConfig parse_swipe(const std::string& s) {
  const auto colon = s.find(':');
  check_data(colon != std::string::npos && colon > 0 && colon + 1 < s.size(),
             "swipe must be 'start:end', got: " + s);
  SwipeConfig cfg;
  try {
    cfg.t_start = std::stoi(s.substr(0, colon));
    cfg.t_end = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    throw DataError("swipe must be 'start:end' with integer epochs, got: " + s);
  }
  cfg.validate();
  return cfg;
}

int run_train(const TrainArgs& a) {
  Dataset ds = load_datasets(a.datasets);
  const std::vector<std::string> corpus = train_corpus(ds);

  Vocab vocab = Vocab::build(corpus);
  ModelConfig mc = load_model_config(a.config, static_cast<int>(vocab.size()));
  RetrievalModel model(mc, std::move(vocab), TfidfTeacher::build(corpus), a.seed);

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch_size;
  tc.learning_rate = a.lr;
  tc.seed = a.seed;
  tc.swipe = parse_swipe(a.swipe);
  tc.loss_mode = loss_mode_from_string(a.loss);
  tc.dropout = a.dropout;
  tc.filter_threshold = a.filter_threshold;

  TrainResult res = train(model, ds, tc, a.out, a.history);
  const EpochRecord& last = res.history.back();
  std::cout << "trained " << a.epochs << " epochs (" << to_string(tc.loss_mode) << ", seed "
            << a.seed << "); final loss " << last.terms.at("total") << "; checkpoint: " << a.out
            << "\n";
  return kExitOk;
}

struct EmbedArgs {
  std::string checkpoint;
  std::vector<std::string> datasets;
  std::string split = "test";
  std::string out = "embeddings.embd";
  std::string stamp;
};

int run_embed(const EmbedArgs& a) {
  RetrievalModel model = load_checkpoint(a.checkpoint);
  Dataset ds = load_datasets(a.datasets);
  DbMetadata meta;
  meta.checkpoint_hash = file_fingerprint(a.checkpoint);
  meta.created = a.stamp;  // empty by default: rebuilds stay bit-identical
  EmbeddingDB db = build_db(model, ds, split_from_string(a.split), meta);
  db.save(a.out);
  std::cout << "wrote " << db.size() << " embeddings (dim " << db.dim() << ") to " << a.out
            << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::vector<std::string> datasets;
  std::string split = "test";
  std::vector<std::string> protocols = {"all", "all_threshold", "dissimilar", "small_batches"};
  double threshold = 0.95;
  int subset = 100;
  int batch = 32;
  int reps = 10;
  uint64_t seed = 0;
  std::string out;
  bool no_m2m = false;
};

int run_eval(const EvalArgs& a) {
  RetrievalModel model = load_checkpoint(a.checkpoint);
  Dataset ds = load_datasets(a.datasets);
  EvalOptions opt;
  opt.protocols = a.protocols;
  opt.threshold = a.threshold;
  opt.subset = a.subset;
  opt.batch = a.batch;
  opt.reps = a.reps;
  opt.seed = a.seed;
  opt.m2m = !a.no_m2m;
  EvalResult res = evaluate_model(model, ds, split_from_string(a.split), opt);
  std::cout << render_report(res);
  if (!a.out.empty()) {
    std::ofstream os(a.out);
    check_data(os.good(), "cannot open report file: " + a.out);
    os << report_to_json(res).dump(2) << "\n";
    std::cout << "record written to " << a.out << "\n";
  }
  return kExitOk;
}

struct QueryArgs {
  std::string db;
  std::string checkpoint;
  std::string text;
  int k = 5;
};

int run_query(const QueryArgs& a) {
  check_data(!a.text.empty(), "query text must be non-empty");
  EmbeddingDB db = EmbeddingDB::load(a.db);
  RetrievalModel model = load_checkpoint(a.checkpoint);
  bool truncated = false;
  const auto hits = db.query(model.embed_text(a.text), a.k, &truncated);
  if (truncated)
    std::cerr << "warning: k=" << a.k << " exceeds database size " << db.size()
              << "; returning all entries\n";
  for (const auto& h : hits) {
    char line[64];
    std::snprintf(line, sizeof(line), "%.6f", h.score);
    std::cout << line << "  " << h.id << "\n";
  }
  return kExitOk;
}

struct GradcheckArgs {
  double tol = 1e-4;
  uint64_t seed = 0;
};

int run_gradcheck(const GradcheckArgs& a) {
  GradSuiteResult res = run_gradient_suite(a.seed);
  for (const GradSuiteEntry& e : res.entries) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-22s max_rel_err %.3e  (%ld coords)", e.op.c_str(),
                  e.max_rel_err, e.coords_checked);
    std::cout << line << "\n";
  }
  std::cout << "worst " << res.worst << " vs tolerance " << a.tol << "\n";
  if (!res.ok(a.tol)) {
    std::cerr << "gradient check FAILED\n";
    return kExitNumeric;
  }
  std::cout << "gradient check passed\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale text-motion retrieval toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* sc_synth = app.add_subcommand("synth", "generate a synthetic text-motion dataset");
  sc_synth->add_option("--seed", synth.seed, "generator seed");
  sc_synth->add_option("--n", synth.n, "number of pairs")->check(CLI::PositiveNumber);
  sc_synth->add_option("--k", synth.k, "number of motion archetypes")->check(CLI::PositiveNumber);
  sc_synth->add_option("--train-frac", synth.train_frac, "train fraction");
  sc_synth->add_option("--val-frac", synth.val_frac, "validation fraction");
  sc_synth->add_option("--out", synth.out, "output dataset directory")->required();

  PrepareArgs prepare;
  auto* sc_prepare = app.add_subcommand("prepare", "validate a dataset manifest");
  sc_prepare->add_option("manifest", prepare.manifest, "manifest path")->required();

  TrainArgs train_args;
  auto* sc_train = app.add_subcommand("train", "train a retrieval model");
  sc_train->add_option("--config", train_args.config, "model config JSON");
  sc_train->add_option("--datasets", train_args.datasets, "dataset manifest(s), joint when several")
      ->required()
      ->delimiter(',');
  sc_train->add_option("--out", train_args.out, "checkpoint output path");
  sc_train->add_option("--history", train_args.history, "JSONL loss history path");
  sc_train->add_option("--seed", train_args.seed, "training seed");
  sc_train->add_option("--epochs", train_args.epochs, "epochs")->check(CLI::PositiveNumber);
  sc_train->add_option("--batch-size", train_args.batch_size, "batch size");
  sc_train->add_option("--lr", train_args.lr, "learning rate");
  sc_train->add_option("--dropout", train_args.dropout, "input-token dropout rate");
  sc_train->add_option("--loss", train_args.loss, "loss mode")
      ->check(CLI::IsMember({"cccl", "infonce_f", "cccl_self", "cccl_supervised"}));
  sc_train->add_option("--swipe", train_args.swipe, "lambda schedule 'start:end' epochs");
  sc_train->add_option("--filter-threshold", train_args.filter_threshold,
                       "wrong-negative similarity threshold (infonce_f)");

  EmbedArgs embed;
  auto* sc_embed = app.add_subcommand("embed", "embed a dataset split into a vector database");
  sc_embed->add_option("--checkpoint", embed.checkpoint, "model checkpoint")->required();
  sc_embed->add_option("--dataset", embed.datasets, "dataset manifest(s)")
      ->required()
      ->delimiter(',');
  sc_embed->add_option("--split", embed.split, "split to embed")
      ->check(CLI::IsMember({"train", "val", "test"}));
  sc_embed->add_option("--out", embed.out, "database output path");
  sc_embed->add_option("--stamp", embed.stamp, "creation timestamp to record (default: none)");

  EvalArgs eval_args;
  auto* sc_eval = app.add_subcommand("eval", "run retrieval protocols on a split");
  sc_eval->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")->required();
  sc_eval->add_option("--dataset", eval_args.datasets, "dataset manifest(s)")
      ->required()
      ->delimiter(',');
  sc_eval->add_option("--split", eval_args.split, "split to evaluate")
      ->check(CLI::IsMember({"train", "val", "test"}));
  sc_eval->add_option("--protocols", eval_args.protocols, "protocols to run")
      ->delimiter(',')
      ->check(CLI::IsMember({"all", "all_threshold", "dissimilar", "small_batches"}));
  sc_eval->add_option("--threshold", eval_args.threshold, "caption-similarity threshold");
  sc_eval->add_option("--subset", eval_args.subset, "dissimilar-subset size");
  sc_eval->add_option("--batch", eval_args.batch, "small-batch size");
  sc_eval->add_option("--reps", eval_args.reps, "small-batch partition count");
  sc_eval->add_option("--seed", eval_args.seed, "protocol seed");
  sc_eval->add_option("--out", eval_args.out, "machine-readable JSON record path");
  sc_eval->add_flag("--no-m2m", eval_args.no_m2m, "skip motion-to-motion metrics");

  QueryArgs query;
  auto* sc_query = app.add_subcommand("query", "retrieve nearest motions for a text");
  sc_query->add_option("--db", query.db, "embedding database")->required();
  sc_query->add_option("--checkpoint", query.checkpoint, "model checkpoint")->required();
  sc_query->add_option("--text", query.text, "query text")->required();
  sc_query->add_option("--k", query.k, "results to return")->check(CLI::PositiveNumber);

  GradcheckArgs gradcheck;
  auto* sc_gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient sweep");
  sc_gradcheck->add_option("--tol", gradcheck.tol, "max relative error tolerance");
  sc_gradcheck->add_option("--seed", gradcheck.seed, "instance seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (sc_synth->parsed()) return run_synth(synth);
    if (sc_prepare->parsed()) return run_prepare(prepare);
    if (sc_train->parsed()) return run_train(train_args);
    if (sc_embed->parsed()) return run_embed(embed);
    if (sc_eval->parsed()) return run_eval(eval_args);
    if (sc_query->parsed()) return run_query(query);
    if (sc_gradcheck->parsed()) return run_gradcheck(gradcheck);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
