#include "dupnet/layers.hpp"

#include <cmath>
#include <limits>

namespace dupnet {

Affine batchnorm_fold(const BatchNormParams& bn) {
  const std::size_t c = bn.gamma.size();
  if (bn.beta.size() != c || bn.mean.size() != c || bn.var.size() != c)
    throw ShapeError("batchnorm_fold: parameter arrays differ in length");
  Affine a{std::vector<double>(c), std::vector<double>(c)};
  for (std::size_t i = 0; i < c; ++i) {
    if (bn.var[i] < 0.0) throw Error("batchnorm_fold: negative variance");
    a.scale[i] = bn.gamma[i] / std::sqrt(bn.var[i] + bn.eps);
    a.shift[i] = bn.beta[i] - bn.mean[i] * a.scale[i];
  }
  return a;
}

Tensor batchnorm_apply(const Tensor& x, const BatchNormParams& bn) {
  const Shape s = x.shape();
  if (bn.gamma.size() != s.c) throw ShapeError("batchnorm_apply: channel count mismatch");
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const double inv = 1.0 / std::sqrt(bn.var[c] + bn.eps);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const std::size_t idx = (n * s.c + c) * s.plane() + i;
        out[idx] = bn.gamma[c] * ((x[idx] - bn.mean[c]) * inv) + bn.beta[c];
      }
    }
  return out;
}

Tensor affine_apply(const Tensor& x, const Affine& a) {
  const Shape s = x.shape();
  if (a.scale.size() != s.c || a.shift.size() != s.c)
    throw ShapeError("affine_apply: channel count mismatch");
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const std::size_t idx = (n * s.c + c) * s.plane() + i;
        out[idx] = a.scale[c] * x[idx] + a.shift[c];
      }
  return out;
}

std::size_t maxpool_out_dim(std::size_t in, std::size_t size, std::size_t stride) {
  if (size == 0 || stride == 0) throw ShapeError("maxpool: size and stride must be >= 1");
  if (stride == 1) return in;
  if (in < size) throw ShapeError("maxpool: window larger than input");
  return (in - size) / stride + 1;
}

namespace {

template <typename Visit>
void for_each_window(const Shape& s, std::size_t size, std::size_t stride, Visit&& visit) {
  const std::size_t oh = maxpool_out_dim(s.h, size, stride);
  const std::size_t ow = maxpool_out_dim(s.w, size, stride);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const std::size_t y1 = std::min(s.h, oy * stride + size);
          const std::size_t x1 = std::min(s.w, ox * stride + size);
          visit(n, c, oy, ox, oy * stride, y1, ox * stride, x1);
        }
}

}  // namespace

Tensor maxpool(const Tensor& x, std::size_t size, std::size_t stride) {
  const Shape s = x.shape();
  Tensor out(Shape{s.n, s.c, maxpool_out_dim(s.h, size, stride), maxpool_out_dim(s.w, size, stride)});
  for_each_window(s, size, stride,
                  [&](std::size_t n, std::size_t c, std::size_t oy, std::size_t ox, std::size_t y0,
                      std::size_t y1, std::size_t x0, std::size_t x1) {
                    double best = -std::numeric_limits<double>::infinity();
                    for (std::size_t y = y0; y < y1; ++y)
                      for (std::size_t xx = x0; xx < x1; ++xx) best = std::max(best, x.at(n, c, y, xx));
                    out.at(n, c, oy, ox) = best;
                  });
  return out;
}

Tensor maxpool_backward(const Tensor& dy, const Tensor& x, std::size_t size, std::size_t stride) {
  const Shape s = x.shape();
  Tensor dx(s);
  for_each_window(s, size, stride,
                  [&](std::size_t n, std::size_t c, std::size_t oy, std::size_t ox, std::size_t y0,
                      std::size_t y1, std::size_t x0, std::size_t x1) {
                    std::size_t by = y0, bx = x0;
                    double best = x.at(n, c, y0, x0);
                    for (std::size_t y = y0; y < y1; ++y)
                      for (std::size_t xx = x0; xx < x1; ++xx)
                        if (x.at(n, c, y, xx) > best) {
                          best = x.at(n, c, y, xx);
                          by = y;
                          bx = xx;
                        }
                    dx.at(n, c, by, bx) += dy.at(n, c, oy, ox);
                  });
  return dx;
}

Tensor leaky(const Tensor& x, double slope) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
  return out;
}

Tensor leaky_backward(const Tensor& dy, const Tensor& x, double slope) {
  if (dy.shape() != x.shape()) throw ShapeError("leaky_backward: shape mismatch");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : slope * dy[i];
  return dx;
}

}  // namespace dupnet
