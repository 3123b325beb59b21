#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "motret/checkpoint.hpp"
#include "motret/eval.hpp"
#include "motret/gradsuite.hpp"
#include "motret/store.hpp"
#include "motret/trainer.hpp"

namespace py = pybind11;
using namespace motret;

namespace {

py::object json_to_py(const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::object: {
      py::dict d;
      for (const auto& kv : j.items()) d[py::str(kv.key())] = json_to_py(kv.value());
      return d;
    }
    case nlohmann::json::value_t::array: {
      py::list l;
      for (const auto& v : j) l.append(json_to_py(v));
      return l;
    }
    case nlohmann::json::value_t::string:
      return py::str(j.get<std::string>());
    case nlohmann::json::value_t::boolean:
      return py::bool_(j.get<bool>());
    case nlohmann::json::value_t::number_integer:
      return py::int_(j.get<long long>());
    case nlohmann::json::value_t::number_unsigned:
      return py::int_(j.get<unsigned long long>());
    case nlohmann::json::value_t::number_float:
      return py::float_(j.get<double>());
    default:
      return py::none();
  }
}

std::vector<std::string> train_corpus(const Dataset& ds) {
  std::vector<std::string> corpus;
  for (int i : ds.split_indices(Split::Train))
    for (const auto& t : ds.pairs[static_cast<size_t>(i)].texts) corpus.push_back(t);
  check_data(!corpus.empty(), "training split has no captions");
  return corpus;
}

std::unique_ptr<RetrievalModel> build_model_py(const Dataset& ds, const std::string& config_json,
                                               uint64_t seed) {
  const std::vector<std::string> corpus = train_corpus(ds);
  Vocab vocab = Vocab::build(corpus);
  nlohmann::json base = config_to_json(ModelConfig{});
  base["text"]["vocab_size"] = vocab.size();
  if (!config_json.empty()) {
    nlohmann::json user = nlohmann::json::parse(config_json, nullptr, false);
    check_data(!user.is_discarded() && user.is_object(),
               "model config must be a JSON object string");
    base.merge_patch(user);
  }
  return std::make_unique<RetrievalModel>(config_from_json(base), std::move(vocab),
                                          TfidfTeacher::build(corpus), seed);
}

const TextMotionPair& pair_at(const Dataset& ds, long i) {
  check_data(i >= 0 && i < static_cast<long>(ds.pairs.size()), "pair index out of range");
  return ds.pairs[static_cast<size_t>(i)];
}

}  // namespace

PYBIND11_MODULE(motret, m) {
  m.doc() = "text-motion retrieval: encoders, contrastive training, protocols, vector store";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  // ---- datasets ----
  py::class_<Dataset>(m, "Dataset")
      .def("__len__", [](const Dataset& ds) { return ds.pairs.size(); })
      .def_readonly("provenance", &Dataset::provenance)
      .def("split_indices",
           [](const Dataset& ds, const std::string& s) { return ds.split_indices(split_from_string(s)); },
           py::arg("split"))
      .def("pair_id", [](const Dataset& ds, long i) { return pair_at(ds, i).id; }, py::arg("index"))
      .def("pair_texts", [](const Dataset& ds, long i) { return pair_at(ds, i).texts; },
           py::arg("index"))
      .def("pair_label", [](const Dataset& ds, long i) { return pair_at(ds, i).label; },
           py::arg("index"))
      .def("pair_frames", [](const Dataset& ds, long i) { return pair_at(ds, i).motion.frames(); },
           py::arg("index"));

  m.def("synth_dataset", &synth_dataset, py::arg("seed"), py::arg("n_pairs"),
        py::arg("n_archetypes"), py::arg("train_frac") = 1.0, py::arg("val_frac") = 0.0,
        "Generate a labeled synthetic text-motion dataset.");
  m.def("load_manifest", &load_manifest, py::arg("path"),
        "Load a dataset from a manifest.jsonl file.");
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("dir"),
        "Write manifest.jsonl plus motion tensors under the given directory.");
  m.def("unify", &unify, py::arg("a"), py::arg("b"),
        "Join two datasets, prefixing ids with their source.");

  // ---- model ----
  py::class_<RetrievalModel>(m, "RetrievalModel")
      .def("embed_text",
           [](const RetrievalModel& mo, const std::string& text) {
             return mo.embed_text(text).vec();
           },
           py::arg("text"), "Latent mean for a caption (inference mode).")
      .def("embed_pair_motion",
           [](const RetrievalModel& mo, const Dataset& ds, long i) {
             return mo.embed_motion(pair_at(ds, i).motion).vec();
           },
           py::arg("dataset"), py::arg("index"),
           "Latent mean for the motion of dataset pair `index`.")
      .def("param_count", [](const RetrievalModel& mo) { return mo.params().value_count(); })
      .def("config", [](const RetrievalModel& mo) { return json_to_py(config_to_json(mo.config())); })
      .def("teacher_similarity",
           [](const RetrievalModel& mo, const std::string& a, const std::string& b) {
             return mo.teacher().similarity(a, b);
           },
           py::arg("a"), py::arg("b"), "Frozen caption-teacher similarity.");

  m.def("build_model", &build_model_py, py::arg("dataset"), py::arg("config_json") = std::string(),
        py::arg("seed") = 0,
        "Build a model over the dataset's training captions; config_json overrides defaults.");
  m.def("save_checkpoint", &save_checkpoint, py::arg("model"), py::arg("path"));
  m.def("load_checkpoint",
        [](const std::string& path) { return std::make_unique<RetrievalModel>(load_checkpoint(path)); },
        py::arg("path"));

  // ---- training ----
  m.def(
      "train_model",
      [](RetrievalModel& model, const Dataset& ds, int epochs, int batch_size, double lr,
         uint64_t seed, std::pair<int, int> swipe, const std::string& loss, double dropout,
         double filter_threshold, const std::string& checkpoint_path,
         const std::string& history_path) {
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.learning_rate = lr;
        cfg.seed = seed;
        cfg.swipe = SwipeConfig{swipe.first, swipe.second};
        cfg.loss_mode = loss_mode_from_string(loss);
        cfg.dropout = dropout;
        cfg.filter_threshold = filter_threshold;
        TrainResult res = train(model, ds, cfg, checkpoint_path, history_path);
        py::list hist;
        for (const EpochRecord& r : res.history) {
          py::dict d;
          d["epoch"] = r.epoch;
          d["lambda"] = r.lambda;
          py::dict terms;
          for (const auto& kv : r.terms) terms[py::str(kv.first)] = kv.second;
          d["terms"] = terms;
          hist.append(d);
        }
        return hist;
      },
      py::arg("model"), py::arg("dataset"), py::arg("epochs") = 80, py::arg("batch_size") = 16,
      py::arg("lr") = 5e-5, py::arg("seed") = 0, py::arg("swipe") = std::pair<int, int>(40, 100),
      py::arg("loss") = "cccl", py::arg("dropout") = 0.1, py::arg("filter_threshold") = 0.95,
      py::arg("checkpoint_path") = std::string(), py::arg("history_path") = std::string(),
      "Train in place; returns the per-epoch loss-term history.");

  // ---- evaluation ----
  m.def(
      "evaluate",
      [](const RetrievalModel& model, const Dataset& ds, const std::string& split,
         const std::vector<std::string>& protocols, double threshold, int subset, int batch,
         int reps, uint64_t seed, bool m2m) {
        EvalOptions opt;
        opt.protocols = protocols;
        opt.threshold = threshold;
        opt.subset = subset;
        opt.batch = batch;
        opt.reps = reps;
        opt.seed = seed;
        opt.m2m = m2m;
        EvalResult res = evaluate_model(model, ds, split_from_string(split), opt);
        return json_to_py(report_to_json(res));
      },
      py::arg("model"), py::arg("dataset"), py::arg("split") = "test",
      py::arg("protocols") =
          std::vector<std::string>{"all", "all_threshold", "dissimilar", "small_batches"},
      py::arg("threshold") = 0.95, py::arg("subset") = 100, py::arg("batch") = 32,
      py::arg("reps") = 10, py::arg("seed") = 0, py::arg("m2m") = true,
      "Run retrieval protocols on a split; returns the structured report.");

  // ---- embedding store ----
  py::class_<EmbeddingDB>(m, "EmbeddingDB")
      .def("__len__", &EmbeddingDB::size)
      .def("dim", &EmbeddingDB::dim)
      .def("ids", &EmbeddingDB::ids)
      .def("metadata",
           [](const EmbeddingDB& db) {
             py::dict d;
             d["checkpoint"] = db.metadata().checkpoint_hash;
             d["dataset"] = db.metadata().dataset_name;
             d["created"] = db.metadata().created;
             return d;
           })
      .def("save", &EmbeddingDB::save, py::arg("path"))
      .def(
          "query",
          [](const EmbeddingDB& db, const std::vector<double>& v, int k) {
            Tensor q({static_cast<int>(v.size())}, v);
            std::vector<std::pair<std::string, double>> out;
            for (const EmbeddingDB::Hit& h : db.query(q, k)) out.emplace_back(h.id, h.score);
            return out;
          },
          py::arg("embedding"), py::arg("k") = 5,
          "Top-k cosine matches as (id, score), best first.")
      .def(
          "query_text",
          [](const EmbeddingDB& db, const RetrievalModel& model, const std::string& text, int k) {
            std::vector<std::pair<std::string, double>> out;
            for (const EmbeddingDB::Hit& h : db.query(model.embed_text(text), k)) out.emplace_back(h.id, h.score);
            return out;
          },
          py::arg("model"), py::arg("text"), py::arg("k") = 5);

  m.def(
      "build_db",
      [](const RetrievalModel& model, const Dataset& ds, const std::string& split) {
        return build_db(model, ds, split_from_string(split));
      },
      py::arg("model"), py::arg("dataset"), py::arg("split") = "test",
      "Embed every motion in the split into a queryable store.");
  m.def("load_db", &EmbeddingDB::load, py::arg("path"));
  m.def("file_fingerprint", &file_fingerprint, py::arg("path"),
        "CRC-32 hex fingerprint of a file's bytes.");

  // ---- diagnostics ----
  m.def(
      "gradient_suite",
      [](uint64_t seed) {
        GradSuiteResult res = run_gradient_suite(seed);
        py::list out;
        for (const GradSuiteEntry& e : res.entries) {
          py::dict d;
          d["op"] = e.op;
          d["max_rel_err"] = e.max_rel_err;
          d["coords_checked"] = e.coords_checked;
          out.append(d);
        }
        py::dict top;
        top["entries"] = out;
        top["worst"] = res.worst;
        return top;
      },
      py::arg("seed") = 0,
      "Finite-difference check of every loss op and both encoders.");
}
