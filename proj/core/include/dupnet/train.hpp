#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dupnet/dataset.hpp"
#include "dupnet/model.hpp"

namespace dupnet {

struct TrainConfig {
  std::size_t total_iters = 2000;
  double base_lr = 0.01;
  std::vector<double> lr_milestones = {0.3, 0.6, 0.8, 0.9};  // fractions of total_iters
  double lr_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;  // applied to conv weights only
  std::size_t batch = 16;
  std::uint64_t seed = 1;
  GradReduce reduce = GradReduce::average;
  DupWeightMode wmode = DupWeightMode::tile;
  DupFeatureMode xmode = DupFeatureMode::dup;
  bool hflip = true;
  // After the last step, BN running statistics are re-estimated over this many
  // batches taken in dataset order, with the weights frozen. 0 keeps the moving averages.
  std::size_t bn_recalib_batches = 0;
  DetectionLossConfig loss;

  void validate() const;
};

// base_lr * factor^(milestones passed); milestone m is passed at iteration round(m * total_iters).
double lr_at(std::size_t iter, const TrainConfig& cfg);

// v <- momentum * v + g; p <- p - lr * v.
void sgd_step(Tensor& p, const Tensor& g, Tensor& v, double lr, double momentum);

struct Batch {
  Tensor images;  // [n, c, h, w] scaled to [0, 1]
  std::vector<std::vector<GroundTruth>> truths;
};

// flip[k] mirrors image k horizontally (labels follow).
Batch make_batch(const Dataset& d, std::span<const std::size_t> indices, const std::vector<bool>& flip = {});

// Per-parameter gradients, laid out like ParamVars.
struct ParamGrads {
  std::vector<Tensor> weight, gamma, beta, bias;
  std::vector<double> alpha;
};

struct StepResult {
  double loss = 0.0;
  ParamGrads grads;
  std::vector<ops::BatchStats> stats;
};

// One forward/backward pass. Loss is averaged over the batch. Throws
// NumericError naming the layer when anything goes non-finite.
StepResult forward_backward(const Model& m, const Batch& b, const TrainConfig& cfg);

class Trainer {
 public:
  Trainer(Model m, const TrainConfig& cfg);

  // Applies one SGD step with lr_at(iter) and updates BN running statistics.
  double step(const Batch& b, std::size_t iter);

  const Model& model() const { return model_; }
  Model& model() { return model_; }

 private:
  Model model_;
  TrainConfig cfg_;
  ParamGrads velocity_;
};

// Replaces every BN layer's running mean and variance with population
// estimates over `batches` consecutive batches (wrapping around the dataset).
void recalibrate_batchnorm(Model& m, const Dataset& data, const TrainConfig& cfg, std::size_t batches);

using TrainLog = std::function<void(std::size_t iter, double lr, double loss)>;

// Seeded minibatch SGD over the dataset. Bit-reproducible for a given (model, data, cfg).
Model train(Model m, const Dataset& data, const TrainConfig& cfg, const TrainLog& log = {});

// Inference over a dataset: boxes with score > thresh after NMS, per image.
std::vector<std::vector<DetectionBox>> predict(const ExportedModel& m, const Dataset& d, double thresh = 0.01,
                                               KernelPath path = KernelPath::ref, std::size_t chunk = 32);

DetectionRate evaluate(const ExportedModel& m, const Dataset& d, std::optional<std::size_t> fp_budget = std::nullopt,
                       KernelPath path = KernelPath::ref);

}  // namespace dupnet
