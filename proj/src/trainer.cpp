#include "motret/trainer.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "motret/common.hpp"
#include "motret/generative.hpp"

namespace motret {

using ad::Var;

std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::Cccl: return "cccl";
    case LossMode::InfoNceF: return "infonce_f";
    case LossMode::CcclSelf: return "cccl_self";
    case LossMode::CcclSupervised: return "cccl_supervised";
  }
  throw DataError("unknown loss mode");
}

LossMode loss_mode_from_string(const std::string& s) {
  if (s == "cccl") return LossMode::Cccl;
  if (s == "infonce_f") return LossMode::InfoNceF;
  if (s == "cccl_self") return LossMode::CcclSelf;
  if (s == "cccl_supervised") return LossMode::CcclSupervised;
  throw DataError("unknown loss mode '" + s + "'");
}

void TrainConfig::validate() const {
  check_data(epochs >= 1, "train config: epochs must be at least 1");
  check_data(batch_size >= 2, "train config: batch size must be at least 2");
  check_data(learning_rate > 0.0, "train config: learning rate must be positive");
  check_data(lambda_rec >= 0.0 && lambda_kl >= 0.0, "train config: loss weights must be >= 0");
  check_data(dropout >= 0.0 && dropout < 1.0, "train config: dropout must lie in [0,1)");
  swipe.validate();
}

std::vector<Batch> make_batches(const Dataset& ds, int batch_size, uint64_t epoch_seed) {
  check_data(batch_size >= 2, "make_batches: batch size must be at least 2");
  std::vector<int> train = ds.split_indices(Split::Train);
  check_data(static_cast<int>(train.size()) >= batch_size,
             "make_batches: train split smaller than one batch");
  Rng rng(epoch_seed);
  shuffle_vec(train, rng);

  std::vector<Batch> batches;
  const int n_batches = static_cast<int>(train.size()) / batch_size;
  for (int b = 0; b < n_batches; ++b) {
    Batch batch;
    for (int i = 0; i < batch_size; ++i) {
      const int pair = train[static_cast<size_t>(b * batch_size + i)];
      const auto& texts = ds.pairs[static_cast<size_t>(pair)].texts;
      batch.push_back({pair, static_cast<int>(rng.uniform_int(texts.size()))});
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

AdamOptimizer::AdamOptimizer(nn::ParamStore& ps, double lr, double beta1, double beta2, double eps)
    : ps_(ps), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [_, var] : ps_.items()) {
    m_.emplace_back(var.value().vec().size(), 0.0);
    v_.emplace_back(var.value().vec().size(), 0.0);
  }
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t p = 0; p < ps_.items().size(); ++p) {
    const std::string& name = ps_.items()[p].first;
    Var& var = ps_.get(name);
    const bool have_grad = var.has_grad();
    const std::vector<double>* g = have_grad ? &var.grad().vec() : nullptr;
    std::vector<double>& w = var.mutable_value().vec();
    for (size_t i = 0; i < w.size(); ++i) {
      const double gi = have_grad ? (*g)[i] : 0.0;
      m_[p][i] = beta1_ * m_[p][i] + (1.0 - beta1_) * gi;
      v_[p][i] = beta2_ * v_[p][i] + (1.0 - beta2_) * gi * gi;
      const double mhat = m_[p][i] / bc1;
      const double vhat = v_[p][i] / bc2;
      w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
    var.mutable_value().round_to_f32();
  }
}

namespace {

struct BatchLoss {
  Var total;
  std::map<std::string, double> terms;
};

BatchLoss batch_loss(RetrievalModel& model, const Dataset& ds, const Batch& batch,
                     const TrainConfig& cfg, double lambda, Rng& step_rng) {
  std::vector<Var> t_mu, m_mu;
  std::vector<std::string> captions;
  Var rec = Var::constant(Tensor::scalar(0.0));
  Var kl = Var::constant(Tensor::scalar(0.0));

  for (const BatchItem& item : batch) {
    const TextMotionPair& pair = ds.pairs[static_cast<size_t>(item.pair_index)];
    const std::string& caption = pair.texts[static_cast<size_t>(item.caption_index)];
    captions.push_back(caption);

    MotionSequence motion = downsample(pair.motion, model.config().motion.max_frames);
    LatentGaussianVar mg =
        model.motion_encoder().encode(motion, cfg.dropout, cfg.dropout > 0 ? &step_rng : nullptr);
    LatentGaussianVar tg = model.text_encoder().encode(
        tokenize(caption, model.vocab()), cfg.dropout, cfg.dropout > 0 ? &step_rng : nullptr);
    t_mu.push_back(tg.mu);
    m_mu.push_back(mg.mu);

    Tensor noise({model.config().motion.latent_dim});
    for (double& v : noise.vec()) v = step_rng.normal();
    LatentSample z = reparameterize(mg, noise);
    DecodedMotion decoded = model.decoder().decode(z.z, motion.frames());
    rec = ad::add(rec, loss_reconstruction(motion, decoded));
    kl = ad::add(kl, loss_kl(mg, tg));
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  rec = ad::scale(rec, inv_b);
  kl = ad::scale(kl, inv_b);

  Var t_feats = ad::stack_rows(t_mu);
  Var m_feats = ad::stack_rows(m_mu);
  Tensor teacher = teacher_matrix(captions, model.teacher());

  BatchLoss out;
  Var retrieval;
  if (cfg.loss_mode == LossMode::InfoNceF) {
    retrieval =
        info_nce_filtered(cosine_matrix(t_feats, m_feats), model.log_tau(), teacher,
                          cfg.filter_threshold);
    out.terms["nce"] = retrieval.value().at(0);
  } else {
    CcclTerms terms = cccl_total(t_feats, m_feats, model.log_tau(), teacher, lambda, cfg.cccl);
    retrieval = terms.total;
    out.terms["nce"] = terms.nce.value().at(0);
    out.terms["cross_to_uni"] = terms.cross_to_uni.value().at(0);
    out.terms["teacher_to_uni"] = terms.teacher_to_uni.value().at(0);
  }
  out.total =
      ad::add(retrieval, ad::add(ad::scale(rec, cfg.lambda_rec), ad::scale(kl, cfg.lambda_kl)));
  out.terms["retrieval"] = retrieval.value().at(0);
  out.terms["rec"] = rec.value().at(0);
  out.terms["kl"] = kl.value().at(0);
  out.terms["total"] = out.total.value().at(0);
  return out;
}

}  // namespace

TrainResult train(RetrievalModel& model, const Dataset& ds, const TrainConfig& cfg,
                  const std::string& checkpoint_path, const std::string& history_path) {
  cfg.validate();
  std::ofstream hist;
  if (!history_path.empty()) {
    hist.open(history_path, std::ios::trunc);
    check_data(hist.good(), "train: cannot open history file: " + history_path);
  }

  AdamOptimizer opt(model.params(), cfg.learning_rate);
  TrainResult result;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double lambda = 0.0;
    switch (cfg.loss_mode) {
      case LossMode::Cccl: lambda = lambda_schedule(epoch, cfg.swipe); break;
      case LossMode::CcclSelf: lambda = 1.0; break;
      case LossMode::CcclSupervised: lambda = 0.0; break;
      case LossMode::InfoNceF: lambda = 0.0; break;
    }

    const uint64_t epoch_seed =
        splitmix64(splitmix64(cfg.seed ^ splitmix64(0xb47c4)) ^ static_cast<uint64_t>(epoch));
    std::vector<Batch> batches = make_batches(ds, cfg.batch_size, epoch_seed);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lambda = lambda;
    for (size_t step = 0; step < batches.size(); ++step) {
      Rng step_rng(Rng::derive(cfg.seed, static_cast<uint64_t>(epoch),
                               0x57e9 + static_cast<uint64_t>(step)));
      model.params().zero_grads();
      BatchLoss loss = batch_loss(model, ds, batches[step], cfg, lambda, step_rng);
      check_numeric(std::isfinite(loss.total.value().at(0)),
                    "train: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                        std::to_string(step));
      ad::backward(loss.total);
      opt.step();
      for (const auto& [k, v] : loss.terms) rec.terms[k] += v;
    }
    for (auto& [k, v] : rec.terms) v /= static_cast<double>(batches.size());

    if (hist.is_open()) {
      for (const auto& [k, v] : rec.terms) {
        nlohmann::json line{{"epoch", epoch}, {"term", k}, {"value", v}};
        hist << line.dump() << "\n";
      }
      nlohmann::json line{{"epoch", epoch}, {"term", "lambda"}, {"value", lambda}};
      hist << line.dump() << "\n";
      hist.flush();
    }
    if (!checkpoint_path.empty()) save_checkpoint(model, checkpoint_path);
    result.history.push_back(std::move(rec));
  }
  return result;
}

}  // namespace motret
