#pragma once

#include <cstddef>

#include "dupnet/quantize.hpp"
#include "dupnet/tensor.hpp"

namespace dupnet {

enum class DupWeightMode { tile, fast };
enum class DupFeatureMode { dup, fast };
// `average` is the published backward rule; `sum` is the exact adjoint of tiling.
enum class GradReduce { average, sum };

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad);

// Exact integer convolution. Every output element is one left-to-right
// accumulation over (c, kh, kw).
IntTensor conv2d_int_ref(const IntTensor& x, const IntTensor& w, ConvGeometry g);
IntTensor conv2d_int_ref(const QTensor& x, const QWeights& w, ConvGeometry g);

// Real-valued convolution used by training.
Tensor conv2d(const Tensor& x, const Tensor& w, ConvGeometry g);

struct ConvGrads {
  Tensor dx;
  Tensor dw;
};
// dx is skipped (left empty) when need_dx is false.
ConvGrads conv2d_backward(const Tensor& dy, const Tensor& x, const Tensor& w, ConvGeometry g,
                          bool need_dx = true);

inline IntTensor conv2d_any(const IntTensor& x, const IntTensor& w, ConvGeometry g) {
  return conv2d_int_ref(x, w, g);
}
inline Tensor conv2d_any(const Tensor& x, const Tensor& w, ConvGeometry g) { return conv2d(x, w, g); }

// tile: conv(x, tile(W_t, d)); fast: conv(group_sum(x, d), W_t).
template <typename T>
BasicTensor<T> dupweight_conv_forward(const BasicTensor<T>& x, const BasicTensor<T>& wt,
                                      std::size_t d_w, DupWeightMode mode, ConvGeometry g) {
  if (d_w == 0 || x.shape().c % d_w != 0)
    throw ShapeError("dupweight_conv: " + std::to_string(x.shape().c) +
                     " input channels are not divisible by d_w=" + std::to_string(d_w));
  if (wt.shape().c * d_w != x.shape().c)
    throw ShapeError("dupweight_conv: template has " + std::to_string(wt.shape().c) +
                     " channels, expected " + std::to_string(x.shape().c / d_w));
  if (mode == DupWeightMode::tile) return conv2d_any(x, channel_tile(wt, d_w), g);
  return conv2d_any(channel_group_sum(x, d_w), wt, g);
}

// Sums the d_x duplicate input-channel groups of the enlarged weights.
template <typename T>
BasicTensor<T> weight_group_sum(const BasicTensor<T>& w, std::size_t d_x) {
  return channel_group_sum(w, d_x);
}

// dup: conv(tile(x, d), W); fast: conv(x, W_sum).
template <typename T>
BasicTensor<T> dupfeature_conv_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                       std::size_t d_x, DupFeatureMode mode, ConvGeometry g) {
  if (d_x == 0 || w.shape().c != x.shape().c * d_x)
    throw ShapeError("dupfeature_conv: weights have " + std::to_string(w.shape().c) +
                     " input channels, expected " + std::to_string(x.shape().c * d_x));
  if (mode == DupFeatureMode::dup) return conv2d_any(channel_tile(x, d_x), w, g);
  return conv2d_any(x, weight_group_sum(w, d_x), g);
}

Tensor dupweight_grad_template(const Tensor& dw_dup, std::size_t d_w, GradReduce reduce);
Tensor dupfeature_grad_input(const Tensor& dx_dup, std::size_t d_x, GradReduce reduce);

}  // namespace dupnet
