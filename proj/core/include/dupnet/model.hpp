#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dupnet/conv.hpp"
#include "dupnet/detect.hpp"
#include "dupnet/network.hpp"
#include "dupnet/tape.hpp"

namespace dupnet {

inline constexpr double kBatchNormMomentum = 0.9;

// Trainable state of one convolution. Weights are stored at
// [c_out, stored_c_in, k, k]: the template for dup_w layers, the enlarged
// weights for dup_x layers.
struct ConvParams {
  Tensor weight;
  Tensor gamma;  // [1, c_out, 1, 1], present with bn
  Tensor beta;
  Tensor bias;   // present without bn
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double alpha = kDefaultClipAlpha;
  // The first convolution reads 8-bit image codes scaled to [0, 1]; its clip is fixed at 1.
  bool alpha_trainable = true;

  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

struct Model {
  NetworkSpec spec;  // resolved
  std::vector<ConvParams> convs;  // one per conv layer, in layer order

  friend bool operator==(const Model&, const Model&) = default;
};

// He-normal weights, gamma = 1, beta = 0, running stats (0, 1).
Model init_model(const NetworkSpec& spec, std::uint64_t seed);

struct ForwardOptions {
  DupWeightMode wmode = DupWeightMode::tile;
  DupFeatureMode xmode = DupFeatureMode::dup;
  GradReduce reduce = GradReduce::average;
  bool training = true;      // batch statistics for BN
  bool quantize = true;      // false forces the real-valued path
};

// Tape variables bound to one model's parameters.
struct ParamVars {
  std::vector<VarId> weight, gamma, beta, bias, alpha;
};
ParamVars bind_params(Tape& t, const Model& m, bool requires_grad = true);

struct ForwardResult {
  VarId head = 0;
  std::vector<VarId> outputs;  // per layer
  std::vector<ops::BatchStats> stats;  // per conv, filled when training with bn
};

// Builds the network graph on the tape. Throws NumericError naming the layer
// when an output goes non-finite.
ForwardResult forward(Tape& t, const Model& m, const ParamVars& p, VarId input, const ForwardOptions& opt);

// Real-valued input tensor for a batch of 8-bit images: codes / 255.
Tensor image_input(const IntTensor& codes);

// Inference-ready parameters, narrowed to 32-bit floats exactly as stored on disk.
struct ExportedConv {
  // w_bits < 32: integer levels (+ optional per-filter scales); otherwise reals.
  IntTensor levels;
  std::vector<double> scales;
  Tensor weight;
  std::vector<double> gamma, beta, mean, var;  // bn
  std::vector<double> bias;                    // no bn
  double alpha = kDefaultClipAlpha;

  friend bool operator==(const ExportedConv&, const ExportedConv&) = default;
};

struct ExportedModel {
  NetworkSpec spec;
  std::vector<ExportedConv> convs;

  friend bool operator==(const ExportedModel&, const ExportedModel&) = default;
};

ExportedModel export_model(const Model& m);

enum class KernelPath { ref, packed };

// Integer-core inference. `ref` evaluates the compact rewrites (W_t * X_sum,
// W_sum * X) on the reference integer path; `packed` runs the duplicated
// forms through the popcount kernels wherever w_bits = 1 and activations are
// quantized. Both share the affine stages, so their outputs are bit-identical.
Tensor infer(const ExportedModel& m, const Tensor& input, KernelPath path = KernelPath::ref);

// Decode + threshold (score > thresh) + NMS for one image of the batch.
std::vector<DetectionBox> detect_boxes(const ExportedModel& m, const Tensor& head, std::size_t image,
                                       double thresh, double nms_iou = 0.45);

}  // namespace dupnet
