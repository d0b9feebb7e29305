#include "dupnet/quantize.hpp"

#include <algorithm>
#include <cmath>

namespace dupnet {

bool valid_act_bits(int bits) {
  return bits == 1 || bits == 2 || bits == 4 || bits == 8 || bits == kFullPrecision;
}

bool valid_weight_bits(int bits) {
  return bits == 1 || bits == 2 || bits == 3 || bits == 4 || bits == 8 ||
         bits == kFullPrecision;
}

void QuantSpec::validate() const {
  if (!valid_act_bits(a_bits))
    throw Error("a_bits must be one of 1, 2, 4, 8, 32 (got " + std::to_string(a_bits) + ")");
  if (!valid_weight_bits(w_bits))
    throw Error("w_bits must be one of 1, 2, 3, 4, 8, 32 (got " + std::to_string(w_bits) + ")");
  if (!(clip_alpha > 0.0) || !std::isfinite(clip_alpha))
    throw Error("clip_alpha must be a positive finite value");
}

Tensor QTensor::dequantize() const {
  Tensor out(codes.shape());
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = codes[i] * delta;
  return out;
}

Tensor QWeights::dequantize() const {
  Tensor out(levels.shape());
  const Shape s = levels.shape();
  const std::size_t per_filter = s.c * s.h * s.w;
  for (std::size_t o = 0; o < s.n; ++o) {
    const double f = filter_scale(o);
    for (std::size_t i = 0; i < per_filter; ++i)
      out[o * per_filter + i] = levels[o * per_filter + i] * f;
  }
  return out;
}

namespace {
// Round half up; keeps sign(0) = +1 consistent between the 1-bit and k-bit grids.
inline double round_half_up(double v) { return std::floor(v + 0.5); }
}  // namespace

QTensor quantize_act(const Tensor& x, const QuantSpec& spec) {
  if (!spec.act_quantized()) throw Error("quantize_act: a_bits=32 bypasses the quantizer");
  if (!(spec.clip_alpha > 0.0)) throw Error("quantize_act: clip_alpha must be positive");
  const int top = spec.max_code();
  const double delta = spec.act_delta();
  QTensor q{IntTensor(x.shape()), delta, spec.a_bits};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (!std::isfinite(v)) throw NumericError("quantize_act: non-finite activation");
    const double r = round_half_up(v / delta);
    q.codes[i] = static_cast<std::int32_t>(std::clamp(r, 0.0, static_cast<double>(top)));
  }
  return q;
}

ActGrad quantize_act_backward(const Tensor& dy, const Tensor& x, const QuantSpec& spec) {
  if (dy.shape() != x.shape()) throw ShapeError("quantize_act_backward: dy/x shape mismatch");
  ActGrad g{Tensor(x.shape()), 0.0};
  const double alpha = spec.clip_alpha;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (v >= 0.0 && v <= alpha) {
      g.dx[i] = dy[i];
    } else if (v > alpha) {
      g.dalpha += dy[i];
    }
  }
  return g;
}

QWeights binarize_weights(const Tensor& w, WeightScaleMode mode) {
  const Shape s = w.shape();
  QWeights q{IntTensor(s), {}, 1};
  for (std::size_t i = 0; i < w.size(); ++i) q.levels[i] = w[i] >= 0.0 ? 1 : -1;
  if (mode == WeightScaleMode::per_filter_mean_abs && s.n > 0) {
    const std::size_t per_filter = s.c * s.h * s.w;
    q.scale.assign(s.n, 0.0);
    for (std::size_t o = 0; o < s.n; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < per_filter; ++i) acc += std::abs(w[o * per_filter + i]);
      q.scale[o] = per_filter ? acc / static_cast<double>(per_filter) : 0.0;
    }
  }
  return q;
}

QWeights quantize_weights_kbit(const Tensor& w, int bits, WeightScaleMode mode) {
  if (bits == 1) return binarize_weights(w, mode);
  if (bits < 2 || bits > 8) throw Error("quantize_weights_kbit: bits must be in [1, 8]");
  const Shape s = w.shape();
  const std::size_t per_filter = s.c * s.h * s.w;
  const double top = static_cast<double>((1 << bits) - 1);
  const double lo = -static_cast<double>(1 << (bits - 1));
  const double hi = static_cast<double>((1 << (bits - 1)) - 1);
  QWeights q{IntTensor(s), std::vector<double>(s.n, 1.0), bits};
  for (std::size_t o = 0; o < s.n; ++o) {
    double peak = 0.0;
    for (std::size_t i = 0; i < per_filter; ++i) peak = std::max(peak, std::abs(w[o * per_filter + i]));
    const double step = peak > 0.0 ? peak / top : 1.0;
    q.scale[o] = step;
    for (std::size_t i = 0; i < per_filter; ++i) {
      const double t = round_half_up((w[o * per_filter + i] / step - 1.0) / 2.0);
      q.levels[o * per_filter + i] = static_cast<std::int32_t>(2.0 * std::clamp(t, lo, hi) + 1.0);
    }
  }
  return q;
}

QWeights quantize_weights(const Tensor& w, const QuantSpec& spec) {
  if (!spec.weight_quantized()) throw Error("quantize_weights: w_bits=32 bypasses the quantizer");
  return quantize_weights_kbit(w, spec.w_bits, spec.weight_scale_mode);
}

Tensor ste_weight_backward(const Tensor& dy_levels, const Tensor& w) {
  if (dy_levels.shape() != w.shape()) throw ShapeError("ste_weight_backward: shape mismatch");
  Tensor dw(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i)
    dw[i] = std::abs(w[i]) <= 1.0 ? dy_levels[i] : 0.0;
  return dw;
}

}  // namespace dupnet
