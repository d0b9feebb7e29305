#pragma once

#include <vector>

#include "dupnet/tensor.hpp"

namespace dupnet {

enum class WeightScaleMode { none, per_filter_mean_abs };

inline constexpr int kFullPrecision = 32;
inline constexpr double kDefaultClipAlpha = 3.0;

// Precision of one convolution. 32 bits on either side bypasses the quantizer.
struct QuantSpec {
  int a_bits = kFullPrecision;
  int w_bits = kFullPrecision;
  double clip_alpha = kDefaultClipAlpha;
  WeightScaleMode weight_scale_mode = WeightScaleMode::per_filter_mean_abs;

  bool act_quantized() const { return a_bits < kFullPrecision; }
  bool weight_quantized() const { return w_bits < kFullPrecision; }
  int max_code() const { return (1 << a_bits) - 1; }
  double act_delta() const { return clip_alpha / max_code(); }

  // Throws on bit widths outside {1,2,4,8,32} / {1,2,3,4,8,32} or alpha <= 0.
  void validate() const;

  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

bool valid_act_bits(int bits);
bool valid_weight_bits(int bits);

// Integer-coded activations; value = code * delta.
struct QTensor {
  IntTensor codes;
  double delta = 1.0;
  int bits = 8;

  Tensor dequantize() const;
};

// Integer weight levels with optional per-output-filter scale (empty = 1).
struct QWeights {
  IntTensor levels;
  std::vector<double> scale;
  int bits = 1;

  double filter_scale(std::size_t o) const { return scale.empty() ? 1.0 : scale[o]; }
  Tensor dequantize() const;
};

QTensor quantize_act(const Tensor& x, const QuantSpec& spec);

struct ActGrad {
  Tensor dx;
  double dalpha = 0.0;
};
ActGrad quantize_act_backward(const Tensor& dy, const Tensor& x, const QuantSpec& spec);

QWeights binarize_weights(const Tensor& w, WeightScaleMode mode);

// Odd-integer symmetric grid; bits == 1 delegates to binarize_weights.
QWeights quantize_weights_kbit(const Tensor& w, int bits,
                               WeightScaleMode mode = WeightScaleMode::per_filter_mean_abs);

QWeights quantize_weights(const Tensor& w, const QuantSpec& spec);

// Straight-through estimator, gradient cancelled where |w| > 1.
Tensor ste_weight_backward(const Tensor& dy_levels, const Tensor& w);

}  // namespace dupnet
