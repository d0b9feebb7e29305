#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dupnet/conv.hpp"
#include "dupnet/detect.hpp"
#include "dupnet/quantize.hpp"
#include "dupnet/tensor.hpp"

namespace dupnet {

using VarId = std::size_t;

// Reverse-mode tape. Forward ops append a record; backward() walks the
// records in strict reverse order and accumulates into per-variable grads.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  VarId leaf(Tensor value, bool requires_grad = true);
  VarId record(std::string op, Tensor value, std::span<const VarId> inputs, Backward backward);

  const Tensor& value(VarId v) const { return nodes_.at(v).value; }
  bool requires_grad(VarId v) const { return nodes_.at(v).requires_grad; }
  bool has_grad(VarId v) const { return nodes_.at(v).has_grad; }
  // Zero tensor of the variable's shape when nothing flowed into it.
  Tensor grad(VarId v) const;

  void accumulate(VarId v, const Tensor& g);
  void backward(VarId root);
  void backward(VarId root, const Tensor& seed);

  std::size_t num_vars() const { return nodes_.size(); }
  std::size_t num_records() const { return records_.size(); }
  const std::string& op_name(std::size_t record) const { return records_.at(record).op; }
  // Record indices in the order backward visited them during the last pass.
  const std::vector<std::size_t>& visit_order() const { return visited_; }

  // Branch decisions of piecewise ops (leaky sign, pool argmax, clip region).
  // Finite-difference checks skip coordinates whose perturbation flips one.
  // Recording is off by default.
  void track_branches(bool on) { track_branches_ = on; }
  bool tracks_branches() const { return track_branches_; }
  const std::vector<std::uint8_t>& branches() const { return branches_; }
  void note_branch(std::uint8_t b) {
    if (track_branches_) branches_.push_back(b);
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
  };
  struct Record {
    std::string op;
    VarId out;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::vector<Record> records_;
  std::vector<std::size_t> visited_;
  std::vector<std::uint8_t> branches_;
  bool track_branches_ = false;
};

// Differentiable ops. Parameters are shaped [1, c, 1, 1] for per-channel
// vectors and [1, 1, 1, 1] for scalars.
namespace ops {

VarId conv2d(Tape& t, VarId x, VarId w, ConvGeometry g);
VarId add_bias(Tape& t, VarId x, VarId bias);
// Backward reduces duplicate groups with `reduce` (mean or exact sum).
VarId channel_tile(Tape& t, VarId x, std::size_t d, GradReduce reduce);
VarId channel_group_sum(Tape& t, VarId x, std::size_t d);
// Identity forward; backward multiplies the gradient by `scale`.
VarId grad_scale(Tape& t, VarId x, double scale);

// Forward: dequantized codes. Backward: STE in [0, alpha] plus PACT alpha
// gradient. `alpha` is a scalar variable; a frozen alpha is a non-grad leaf.
VarId quantize_act(Tape& t, VarId x, VarId alpha, int bits);
// Forward: levels * per-filter scale. Backward: STE masked to |w| <= 1.
VarId quantize_weights(Tape& t, VarId w, const QuantSpec& spec);

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;
};
// Normalizes with batch statistics (biased variance); stats are written to `stats` if given.
VarId batchnorm_train(Tape& t, VarId x, VarId gamma, VarId beta, double eps, BatchStats* stats = nullptr);
// Fixed statistics; differentiable in x, gamma and beta.
VarId batchnorm_infer(Tape& t, VarId x, VarId gamma, VarId beta, std::span<const double> mean,
                      std::span<const double> var, double eps);

VarId leaky(Tape& t, VarId x, double slope);
VarId maxpool(Tape& t, VarId x, std::size_t size, std::size_t stride);

// Scalar detection loss scaled by `normalizer` (e.g. 1 / batch).
VarId detection_loss(Tape& t, VarId head, std::span<const Anchor> anchors, int classes,
                     std::span<const std::vector<GroundTruth>> truths, const DetectionLossConfig& cfg,
                     double normalizer = 1.0);
// sum(x * r) for a fixed tensor r; used for gradient checks.
VarId project(Tape& t, VarId x, const Tensor& r);

}  // namespace ops

}  // namespace dupnet
