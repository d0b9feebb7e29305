#include "dupnet/detect.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dupnet {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double iou(const Box& a, const Box& b) {
  const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
  const double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
  const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2;
  const double by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::size_t head_channels(std::size_t anchors, int classes) {
  return anchors * (5 + static_cast<std::size_t>(classes));
}

namespace {

void check_head(const Tensor& head, std::size_t anchors, int classes) {
  if (classes < 1) throw Error("detection head: classes must be >= 1");
  if (anchors == 0) throw Error("detection head: at least one anchor is required");
  if (head.shape().c != head_channels(anchors, classes))
    throw ShapeError("detection head: expected " + std::to_string(head_channels(anchors, classes)) +
                     " channels for " + std::to_string(anchors) + " anchors and " +
                     std::to_string(classes) + " classes, got " + std::to_string(head.shape().c));
}

}  // namespace

std::vector<DetectionBox> yolo_decode(const Tensor& head, std::span<const Anchor> anchors, int classes,
                                      std::size_t image) {
  check_head(head, anchors.size(), classes);
  const Shape s = head.shape();
  if (image >= s.n) throw ShapeError("yolo_decode: image index out of range");
  const std::size_t stride = 5 + static_cast<std::size_t>(classes);
  const double gh = static_cast<double>(s.h), gw = static_cast<double>(s.w);
  std::vector<DetectionBox> out;
  out.reserve(anchors.size() * s.plane());
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const std::size_t base = a * stride;
    for (std::size_t i = 0; i < s.h; ++i)
      for (std::size_t j = 0; j < s.w; ++j) {
        DetectionBox d;
        d.box.cx = (static_cast<double>(j) + sigmoid(head.at(image, base + 0, i, j))) / gw;
        d.box.cy = (static_cast<double>(i) + sigmoid(head.at(image, base + 1, i, j))) / gh;
        d.box.w = anchors[a].pw * std::exp(head.at(image, base + 2, i, j)) / gw;
        d.box.h = anchors[a].ph * std::exp(head.at(image, base + 3, i, j)) / gh;
        d.objectness = sigmoid(head.at(image, base + 4, i, j));
        double best = -1.0;
        for (int c = 0; c < classes; ++c) {
          const double p = sigmoid(head.at(image, base + 5 + c, i, j));
          if (p > best) {
            best = p;
            d.cls = c;
          }
        }
        d.score = d.objectness * best;
        out.push_back(d);
      }
  }
  return out;
}

std::vector<DetectionBox> nms(std::vector<DetectionBox> boxes, double iou_threshold) {
  std::stable_sort(boxes.begin(), boxes.end(),
                   [](const DetectionBox& a, const DetectionBox& b) { return a.score > b.score; });
  std::vector<DetectionBox> kept;
  for (const auto& cand : boxes) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (iou(k.box, cand.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

DetectionLoss detection_loss(const Tensor& head, std::span<const Anchor> anchors, int classes,
                             std::span<const std::vector<GroundTruth>> truths,
                             const DetectionLossConfig& cfg) {
  check_head(head, anchors.size(), classes);
  const Shape s = head.shape();
  if (truths.size() != s.n)
    throw ShapeError("detection_loss: " + std::to_string(truths.size()) + " label sets for a batch of " +
                     std::to_string(s.n));
  const std::size_t stride = 5 + static_cast<std::size_t>(classes);
  const double gh = static_cast<double>(s.h), gw = static_cast<double>(s.w);
  DetectionLoss L;
  L.grad = Tensor(s);

  for (std::size_t n = 0; n < s.n; ++n) {
    // slot -> index into truths[n]; slot = (a * h + i) * w + j
    std::vector<int> owner(anchors.size() * s.plane(), -1);
    for (std::size_t t = 0; t < truths[n].size(); ++t) {
      const Box& b = truths[n][t].box;
      const auto j = static_cast<std::size_t>(std::clamp(std::floor(b.cx * gw), 0.0, gw - 1));
      const auto i = static_cast<std::size_t>(std::clamp(std::floor(b.cy * gh), 0.0, gh - 1));
      std::size_t best_a = 0;
      double best_iou = -1.0;
      for (std::size_t a = 0; a < anchors.size(); ++a) {
        const double v = iou(Box{0, 0, b.w * gw, b.h * gh}, Box{0, 0, anchors[a].pw, anchors[a].ph});
        if (v > best_iou) {
          best_iou = v;
          best_a = a;
        }
      }
      int& slot = owner[(best_a * s.h + i) * s.w + j];
      if (slot < 0) slot = static_cast<int>(t);
    }

    for (std::size_t a = 0; a < anchors.size(); ++a) {
      const std::size_t base = a * stride;
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j) {
          const double to = head.at(n, base + 4, i, j);
          const double po = sigmoid(to);
          const int t = owner[(a * s.h + i) * s.w + j];
          if (t < 0) {
            L.noobj += cfg.lambda_noobj * po * po;
            L.grad.at(n, base + 4, i, j) = cfg.lambda_noobj * 2.0 * po * po * (1.0 - po);
            continue;
          }
          const GroundTruth& gt = truths[n][static_cast<std::size_t>(t)];
          const double target[4] = {gt.box.cx * gw - static_cast<double>(j), gt.box.cy * gh - static_cast<double>(i),
                                    std::log(std::max(gt.box.w * gw, 1e-9) / anchors[a].pw),
                                    std::log(std::max(gt.box.h * gh, 1e-9) / anchors[a].ph)};
          for (std::size_t k = 0; k < 4; ++k) {
            const double z = head.at(n, base + k, i, j);
            if (k < 2) {
              const double p = sigmoid(z);
              const double e = p - target[k];
              L.coord += cfg.lambda_coord * e * e;
              L.grad.at(n, base + k, i, j) = cfg.lambda_coord * 2.0 * e * p * (1.0 - p);
            } else {
              const double e = z - target[k];
              L.coord += cfg.lambda_coord * e * e;
              L.grad.at(n, base + k, i, j) = cfg.lambda_coord * 2.0 * e;
            }
          }
          L.obj += (po - 1.0) * (po - 1.0);
          L.grad.at(n, base + 4, i, j) = 2.0 * (po - 1.0) * po * (1.0 - po);
          for (int c = 0; c < classes; ++c) {
            const double pc = sigmoid(head.at(n, base + 5 + c, i, j));
            const double e = pc - (c == gt.cls ? 1.0 : 0.0);
            L.cls += e * e;
            L.grad.at(n, base + 5 + c, i, j) = 2.0 * e * pc * (1.0 - pc);
          }
        }
    }
  }
  L.total = L.coord + L.obj + L.noobj + L.cls;
  return L;
}

DetectionRate eval_detection(std::span<const std::vector<DetectionBox>> predictions,
                             std::span<const std::vector<GroundTruth>> truths,
                             std::optional<std::size_t> fp_budget, double iou_threshold) {
  if (truths.empty()) throw Error("eval_detection: empty dataset");
  if (predictions.size() != truths.size())
    throw Error("eval_detection: prediction and ground-truth image counts differ");
  const std::size_t budget = fp_budget.value_or(default_fp_budget(truths.size()));

  struct Ranked {
    double score;
    std::size_t image;
    std::size_t index;
  };
  std::vector<Ranked> ranked;
  for (std::size_t im = 0; im < predictions.size(); ++im)
    for (std::size_t k = 0; k < predictions[im].size(); ++k)
      ranked.push_back({predictions[im][k].score, im, k});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  DetectionRate r;
  std::vector<std::vector<bool>> matched(truths.size());
  for (std::size_t im = 0; im < truths.size(); ++im) {
    matched[im].assign(truths[im].size(), false);
    r.ground_truths += truths[im].size();
  }
  for (const Ranked& p : ranked) {
    const Box& box = predictions[p.image][p.index].box;
    double best = 0.0;
    std::optional<std::size_t> hit;
    for (std::size_t g = 0; g < truths[p.image].size(); ++g) {
      if (matched[p.image][g]) continue;
      const double v = iou(box, truths[p.image][g].box);
      if (v >= iou_threshold && (!hit || v > best)) {
        best = v;
        hit = g;
      }
    }
    if (hit) {
      matched[p.image][*hit] = true;
      ++r.true_positives;
    } else {
      if (r.false_positives == budget) break;
      ++r.false_positives;
    }
  }
  r.rate = r.ground_truths ? static_cast<double>(r.true_positives) / static_cast<double>(r.ground_truths) : 0.0;
  return r;
}

}  // namespace dupnet
