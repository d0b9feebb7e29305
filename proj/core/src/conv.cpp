#include "dupnet/conv.hpp"

#include <algorithm>

namespace dupnet {

std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("conv: stride must be >= 1");
  if (in + 2 * pad < k)
    throw ShapeError("conv: kernel " + std::to_string(k) + " exceeds padded extent " +
                     std::to_string(in + 2 * pad));
  return (in + 2 * pad - k) / stride + 1;
}

namespace {

struct ConvDims {
  std::size_t n, c, h, w, co, k, oh, ow;
};

ConvDims check_conv(const Shape& xs, const Shape& ws, ConvGeometry g) {
  if (ws.c != xs.c)
    throw ShapeError("conv: weights expect " + std::to_string(ws.c) + " input channels, got " +
                     std::to_string(xs.c));
  if (ws.h != ws.w) throw ShapeError("conv: only square kernels are supported");
  return {xs.n, xs.c, xs.h, xs.w, ws.n, ws.h,
          conv_out_dim(xs.h, ws.h, g.stride, g.pad), conv_out_dim(xs.w, ws.w, g.stride, g.pad)};
}

// col[q][p], q over (c, kh, kw), p over output pixels of image n.
void im2col(const Tensor& x, std::size_t n, const ConvDims& d, ConvGeometry g, std::vector<double>& col) {
  const std::size_t P = d.oh * d.ow;
  col.assign(d.c * d.k * d.k * P, 0.0);
  const double* src = x.data().data() + n * d.c * d.h * d.w;
  std::size_t q = 0;
  for (std::size_t c = 0; c < d.c; ++c) {
    const double* plane = src + c * d.h * d.w;
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      for (std::size_t kx = 0; kx < d.k; ++kx, ++q) {
        double* row = col.data() + q * P;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          const double* in_row = plane + iy * d.w;
          double* out_row = row + oy * d.ow;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(d.w)) out_row[ox] = in_row[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const std::vector<double>& col, std::size_t n, const ConvDims& d, ConvGeometry g, Tensor& dx) {
  const std::size_t P = d.oh * d.ow;
  double* dst = dx.data().data() + n * d.c * d.h * d.w;
  std::size_t q = 0;
  for (std::size_t c = 0; c < d.c; ++c) {
    double* plane = dst + c * d.h * d.w;
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      for (std::size_t kx = 0; kx < d.k; ++kx, ++q) {
        const double* row = col.data() + q * P;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          double* out_row = plane + iy * d.w;
          const double* in_row = row + oy * d.ow;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(d.w)) out_row[ix] += in_row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

IntTensor conv2d_int_ref(const IntTensor& x, const IntTensor& w, ConvGeometry g) {
  const ConvDims d = check_conv(x.shape(), w.shape(), g);
  IntTensor out(Shape{d.n, d.co, d.oh, d.ow});
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.co; ++o) {
      for (std::size_t oy = 0; oy < d.oh; ++oy) {
        for (std::size_t ox = 0; ox < d.ow; ++ox) {
          std::int32_t acc = 0;
          for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t ky = 0; ky < d.k; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
              for (std::size_t kx = 0; kx < d.k; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                acc += x.at(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                       w.at(o, c, ky, kx);
              }
            }
          }
          out.at(n, o, oy, ox) = acc;
        }
      }
    }
  }
  return out;
}

IntTensor conv2d_int_ref(const QTensor& x, const QWeights& w, ConvGeometry g) {
  return conv2d_int_ref(x.codes, w.levels, g);
}

Tensor conv2d(const Tensor& x, const Tensor& w, ConvGeometry g) {
  const ConvDims d = check_conv(x.shape(), w.shape(), g);
  const std::size_t P = d.oh * d.ow;
  const std::size_t Q = d.c * d.k * d.k;
  Tensor out(Shape{d.n, d.co, d.oh, d.ow});
  std::vector<double> col;
  const double* W = w.data().data();
  for (std::size_t n = 0; n < d.n; ++n) {
    im2col(x, n, d, g, col);
    double* y = out.data().data() + n * d.co * P;
    for (std::size_t o = 0; o < d.co; ++o) {
      double* yo = y + o * P;
      const double* wo = W + o * Q;
      for (std::size_t q = 0; q < Q; ++q) {
        const double wv = wo[q];
        const double* cq = col.data() + q * P;
        for (std::size_t p = 0; p < P; ++p) yo[p] += wv * cq[p];
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& dy, const Tensor& x, const Tensor& w, ConvGeometry g, bool need_dx) {
  const ConvDims d = check_conv(x.shape(), w.shape(), g);
  if (dy.shape() != Shape{d.n, d.co, d.oh, d.ow}) throw ShapeError("conv2d_backward: dy shape mismatch");
  const std::size_t P = d.oh * d.ow;
  const std::size_t Q = d.c * d.k * d.k;
  ConvGrads grads{need_dx ? Tensor(x.shape()) : Tensor(), Tensor(w.shape())};
  std::vector<double> col;
  std::vector<double> dcol;
  const double* W = w.data().data();
  double* dW = grads.dw.data().data();
  for (std::size_t n = 0; n < d.n; ++n) {
    im2col(x, n, d, g, col);
    const double* gy = dy.data().data() + n * d.co * P;
    for (std::size_t o = 0; o < d.co; ++o) {
      const double* go = gy + o * P;
      double* dwo = dW + o * Q;
      for (std::size_t q = 0; q < Q; ++q) {
        const double* cq = col.data() + q * P;
        // Fixed lane partition keeps the summation order independent of the compiler's vector width.
        double lane[8] = {};
        std::size_t p = 0;
        for (; p + 8 <= P; p += 8)
          for (std::size_t j = 0; j < 8; ++j) lane[j] += go[p + j] * cq[p + j];
        for (; p < P; ++p) lane[0] += go[p] * cq[p];
        dwo[q] += ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
      }
    }
    if (!need_dx) continue;
    dcol.assign(Q * P, 0.0);
    for (std::size_t o = 0; o < d.co; ++o) {
      const double* go = gy + o * P;
      const double* wo = W + o * Q;
      for (std::size_t q = 0; q < Q; ++q) {
        const double wv = wo[q];
        double* dq = dcol.data() + q * P;
        for (std::size_t p = 0; p < P; ++p) dq[p] += wv * go[p];
      }
    }
    col2im_add(dcol, n, d, g, grads.dx);
  }
  return grads;
}

Tensor dupweight_grad_template(const Tensor& dw_dup, std::size_t d_w, GradReduce reduce) {
  return reduce == GradReduce::average ? channel_group_mean(dw_dup, d_w)
                                       : channel_group_sum(dw_dup, d_w);
}

Tensor dupfeature_grad_input(const Tensor& dx_dup, std::size_t d_x, GradReduce reduce) {
  return reduce == GradReduce::average ? channel_group_mean(dx_dup, d_x)
                                       : channel_group_sum(dx_dup, d_x);
}

}  // namespace dupnet
