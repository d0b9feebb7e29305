#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dupnet/tensor.hpp"

namespace dupnet {

// Prior box size in grid-cell units.
struct Anchor {
  double pw = 1.0;
  double ph = 1.0;
  friend bool operator==(const Anchor&, const Anchor&) = default;
};

// Center/size box, normalized to the image.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
};

struct DetectionBox {
  Box box;
  double objectness = 0.0;
  double score = 0.0;
  int cls = 0;
};

struct GroundTruth {
  int cls = 0;
  Box box;
};

double iou(const Box& a, const Box& b);
double sigmoid(double x);

// Head layout per anchor a: channels a*(5+classes) + {tx, ty, tw, th, to, cls...}.
std::size_t head_channels(std::size_t anchors, int classes);

// Decodes every (anchor, cell) of one image in the batch; score = objectness * sigma(class).
std::vector<DetectionBox> yolo_decode(const Tensor& head, std::span<const Anchor> anchors,
                                      int classes, std::size_t image = 0);

// Greedy descending-score suppression.
std::vector<DetectionBox> nms(std::vector<DetectionBox> boxes, double iou_threshold = 0.45);

struct DetectionLossConfig {
  double lambda_coord = 5.0;
  double lambda_noobj = 0.5;
};

struct DetectionLoss {
  double total = 0.0;
  double coord = 0.0;
  double obj = 0.0;
  double noobj = 0.0;
  double cls = 0.0;
  Tensor grad;  // d total / d head logits
};

// Sum-squared YOLO-style loss over the batch. Each ground truth is assigned to
// the anchor of its cell with the best shape IoU; on a collision the first
// ground truth keeps the slot.
DetectionLoss detection_loss(const Tensor& head, std::span<const Anchor> anchors, int classes,
                             std::span<const std::vector<GroundTruth>> truths,
                             const DetectionLossConfig& cfg = {});

struct DetectionRate {
  double rate = 0.0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t ground_truths = 0;
};

inline std::size_t default_fp_budget(std::size_t num_images) { return (num_images + 9) / 10; }

// Recall at the lowest confidence threshold whose cumulative false positives do
// not exceed fp_budget (default ceil(0.1 * images)). Greedy one-to-one matching
// in descending score order.
DetectionRate eval_detection(std::span<const std::vector<DetectionBox>> predictions,
                             std::span<const std::vector<GroundTruth>> truths,
                             std::optional<std::size_t> fp_budget = std::nullopt,
                             double iou_threshold = 0.5);

}  // namespace dupnet
