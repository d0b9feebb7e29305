#pragma once

#include <vector>

#include "dupnet/tensor.hpp"

namespace dupnet {

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kLeakySlope = 0.1;

struct BatchNormParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> mean;
  std::vector<double> var;
  double eps = kBatchNormEps;
};

// Per-channel y = scale * x + shift.
struct Affine {
  std::vector<double> scale;
  std::vector<double> shift;
};

// scale = gamma / sqrt(var + eps), shift = beta - mean * scale.
Affine batchnorm_fold(const BatchNormParams& bn);
// Normalize with the stored statistics, then apply gamma/beta.
Tensor batchnorm_apply(const Tensor& x, const BatchNormParams& bn);
Tensor affine_apply(const Tensor& x, const Affine& a);

// Windows start at (i*stride, j*stride) and clip at the border. Stride-1
// pools keep the input extent (implicit -inf padding on the far side).
std::size_t maxpool_out_dim(std::size_t in, std::size_t size, std::size_t stride);
Tensor maxpool(const Tensor& x, std::size_t size, std::size_t stride);
// Routes each output gradient to the first maximal element of its window.
Tensor maxpool_backward(const Tensor& dy, const Tensor& x, std::size_t size, std::size_t stride);

Tensor leaky(const Tensor& x, double slope = kLeakySlope);
Tensor leaky_backward(const Tensor& dy, const Tensor& x, double slope = kLeakySlope);

}  // namespace dupnet
