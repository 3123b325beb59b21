#pragma once

#include <map>
#include <string>
#include <vector>

#include "motret/checkpoint.hpp"
#include "motret/losses.hpp"
#include "motret/model.hpp"

namespace motret {

enum class LossMode { Cccl, InfoNceF, CcclSelf, CcclSupervised };
std::string to_string(LossMode m);
LossMode loss_mode_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 80;
  int batch_size = 16;
  double learning_rate = 5e-5;
  uint64_t seed = 0;
  SwipeConfig swipe{40, 100};
  LossMode loss_mode = LossMode::Cccl;
  double lambda_rec = 1.0;
  double lambda_kl = 1e-5;
  double dropout = 0.1;
  double filter_threshold = 0.95;  // InfoNCE+F wrong-negative threshold
  CcclOptions cccl;

  void validate() const;
};

struct BatchItem {
  int pair_index;
  int caption_index;
};
using Batch = std::vector<BatchItem>;

// Epoch-seeded global shuffle of the train split, one caption drawn per pair,
// fixed-size batches with the remainder dropped.
std::vector<Batch> make_batches(const Dataset& ds, int batch_size, uint64_t epoch_seed);

// Adaptive-moment gradient descent over a parameter store; every update ends
// on the binary32 grid so checkpoints round-trip exactly.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(nn::ParamStore& ps, double lr, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8);
  void step();
  long steps_taken() const { return t_; }

 private:
  nn::ParamStore& ps_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochRecord {
  int epoch = 0;
  double lambda = 0.0;
  std::map<std::string, double> terms;  // batch-averaged loss terms
};

struct TrainResult {
  std::vector<EpochRecord> history;
};

// Full training loop: per-epoch batching, loss-mode dispatch, lambda schedule,
// optimizer step with f32 rounding, optional history/checkpoint emission.
TrainResult train(RetrievalModel& model, const Dataset& ds, const TrainConfig& cfg,
                  const std::string& checkpoint_path = "", const std::string& history_path = "");

}  // namespace motret
