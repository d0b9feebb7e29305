#include "dupnet/tape.hpp"

#include <cmath>

#include "dupnet/layers.hpp"

namespace dupnet {

namespace {
const Shape kScalar{1, 1, 1, 1};

Tensor scalar(double v) { return Tensor(kScalar, v); }

std::vector<double> channel_vector(const Tensor& t, std::size_t c, const char* what) {
  if (t.size() != c)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(c) + " values, got " +
                     std::to_string(t.size()));
  return t.vec();
}
}  // namespace

VarId Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, false});
  return nodes_.size() - 1;
}

VarId Tape::record(std::string op, Tensor value, std::span<const VarId> inputs, Backward backward) {
  bool needs = false;
  for (VarId v : inputs) needs = needs || nodes_.at(v).requires_grad;
  nodes_.push_back(Node{std::move(value), Tensor(), needs, false});
  const VarId out = nodes_.size() - 1;
  if (needs) records_.push_back(Record{std::move(op), out, std::move(backward)});
  return out;
}

Tensor Tape::grad(VarId v) const {
  const Node& n = nodes_.at(v);
  return n.has_grad ? n.grad : Tensor(n.value.shape());
}

void Tape::accumulate(VarId v, const Tensor& g) {
  Node& n = nodes_.at(v);
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape())
    throw ShapeError("tape: gradient shape " + to_string(g.shape()) + " does not match value " +
                     to_string(n.value.shape()));
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Tape::backward(VarId root) { backward(root, Tensor(value(root).shape(), 1.0)); }

void Tape::backward(VarId root, const Tensor& seed) {
  accumulate(root, seed);
  visited_.clear();
  for (std::size_t r = records_.size(); r-- > 0;) {
    const Record& rec = records_[r];
    if (rec.out > root || !nodes_[rec.out].has_grad) continue;
    visited_.push_back(r);
    const Tensor g = nodes_[rec.out].grad;
    rec.backward(*this, g);
  }
}

namespace ops {

VarId conv2d(Tape& t, VarId x, VarId w, ConvGeometry g) {
  const VarId in[] = {x, w};
  return t.record("conv2d", dupnet::conv2d(t.value(x), t.value(w), g), in,
                  [x, w, g](Tape& tp, const Tensor& gy) {
                    const bool need_dx = tp.requires_grad(x);
                    ConvGrads cg = conv2d_backward(gy, tp.value(x), tp.value(w), g, need_dx);
                    if (need_dx) tp.accumulate(x, cg.dx);
                    tp.accumulate(w, cg.dw);
                  });
}

VarId add_bias(Tape& t, VarId x, VarId bias) {
  const Tensor& xv = t.value(x);
  const Shape s = xv.shape();
  const auto b = channel_vector(t.value(bias), s.c, "add_bias");
  Tensor out = xv;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < s.plane(); ++i) out[(n * s.c + c) * s.plane() + i] += b[c];
  const VarId in[] = {x, bias};
  return t.record("add_bias", std::move(out), in, [x, bias, s](Tape& tp, const Tensor& gy) {
    tp.accumulate(x, gy);
    Tensor gb(tp.value(bias).shape());
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t i = 0; i < s.plane(); ++i) gb[c] += gy[(n * s.c + c) * s.plane() + i];
    tp.accumulate(bias, gb);
  });
}

VarId channel_tile(Tape& t, VarId x, std::size_t d, GradReduce reduce) {
  const VarId in[] = {x};
  return t.record("channel_tile", dupnet::channel_tile(t.value(x), d), in,
                  [x, d, reduce](Tape& tp, const Tensor& gy) {
                    tp.accumulate(x, reduce == GradReduce::average ? channel_group_mean(gy, d)
                                                                   : dupnet::channel_group_sum(gy, d));
                  });
}

VarId channel_group_sum(Tape& t, VarId x, std::size_t d) {
  const VarId in[] = {x};
  return t.record("channel_group_sum", dupnet::channel_group_sum(t.value(x), d), in,
                  [x, d](Tape& tp, const Tensor& gy) { tp.accumulate(x, dupnet::channel_tile(gy, d)); });
}

VarId grad_scale(Tape& t, VarId x, double scale) {
  const VarId in[] = {x};
  return t.record("grad_scale", t.value(x), in,
                  [x, scale](Tape& tp, const Tensor& gy) { tp.accumulate(x, scale * gy); });
}

VarId quantize_act(Tape& t, VarId x, VarId alpha, int bits) {
  QuantSpec spec;
  spec.a_bits = bits;
  spec.clip_alpha = t.value(alpha)[0];
  if (t.tracks_branches())
    for (double v : t.value(x).data()) t.note_branch(v < 0.0 ? 0 : (v <= spec.clip_alpha ? 1 : 2));
  Tensor out = dupnet::quantize_act(t.value(x), spec).dequantize();
  const VarId in[] = {x, alpha};
  return t.record("quantize_act", std::move(out), in, [x, alpha, spec](Tape& tp, const Tensor& gy) {
    ActGrad ag = quantize_act_backward(gy, tp.value(x), spec);
    tp.accumulate(x, ag.dx);
    tp.accumulate(alpha, scalar(ag.dalpha));
  });
}

VarId quantize_weights(Tape& t, VarId w, const QuantSpec& spec) {
  const VarId in[] = {w};
  return t.record("quantize_weights", dupnet::quantize_weights(t.value(w), spec).dequantize(), in,
                  [w](Tape& tp, const Tensor& gy) { tp.accumulate(w, ste_weight_backward(gy, tp.value(w))); });
}

VarId batchnorm_train(Tape& t, VarId x, VarId gamma, VarId beta, double eps, BatchStats* stats) {
  const Tensor& xv = t.value(x);
  const Shape s = xv.shape();
  const auto gm = channel_vector(t.value(gamma), s.c, "batchnorm gamma");
  const auto bt = channel_vector(t.value(beta), s.c, "batchnorm beta");
  const double m = static_cast<double>(s.n * s.plane());
  std::vector<double> mean(s.c, 0.0), var(s.c, 0.0), inv_std(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    double acc = 0.0;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < s.plane(); ++i) acc += xv[(n * s.c + c) * s.plane() + i];
    mean[c] = acc / m;
    double sq = 0.0;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double dv = xv[(n * s.c + c) * s.plane() + i] - mean[c];
        sq += dv * dv;
      }
    var[c] = sq / m;
    inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  }
  Tensor xhat(s), out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const std::size_t idx = (n * s.c + c) * s.plane() + i;
        xhat[idx] = (xv[idx] - mean[c]) * inv_std[c];
        out[idx] = gm[c] * xhat[idx] + bt[c];
      }
  if (stats) *stats = BatchStats{mean, var};
  const VarId in[] = {x, gamma, beta};
  return t.record("batchnorm_train", std::move(out), in,
                  [x, gamma, beta, s, m, xhat = std::move(xhat), inv_std = std::move(inv_std), gm](
                      Tape& tp, const Tensor& gy) {
                    Tensor dg(tp.value(gamma).shape()), db(tp.value(beta).shape());
                    Tensor dx(s);
                    for (std::size_t c = 0; c < s.c; ++c) {
                      double sum_dy = 0.0, sum_dy_xhat = 0.0;
                      for (std::size_t n = 0; n < s.n; ++n)
                        for (std::size_t i = 0; i < s.plane(); ++i) {
                          const std::size_t idx = (n * s.c + c) * s.plane() + i;
                          sum_dy += gy[idx];
                          sum_dy_xhat += gy[idx] * xhat[idx];
                        }
                      db[c] = sum_dy;
                      dg[c] = sum_dy_xhat;
                      const double k = gm[c] * inv_std[c] / m;
                      for (std::size_t n = 0; n < s.n; ++n)
                        for (std::size_t i = 0; i < s.plane(); ++i) {
                          const std::size_t idx = (n * s.c + c) * s.plane() + i;
                          dx[idx] = k * (m * gy[idx] - sum_dy - xhat[idx] * sum_dy_xhat);
                        }
                    }
                    tp.accumulate(x, dx);
                    tp.accumulate(gamma, dg);
                    tp.accumulate(beta, db);
                  });
}

VarId batchnorm_infer(Tape& t, VarId x, VarId gamma, VarId beta, std::span<const double> mean,
                      std::span<const double> var, double eps) {
  const Tensor& xv = t.value(x);
  const Shape s = xv.shape();
  const auto gm = channel_vector(t.value(gamma), s.c, "batchnorm gamma");
  const auto bt = channel_vector(t.value(beta), s.c, "batchnorm beta");
  if (mean.size() != s.c || var.size() != s.c) throw ShapeError("batchnorm_infer: statistics length mismatch");
  std::vector<double> inv_std(s.c);
  for (std::size_t c = 0; c < s.c; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  Tensor xhat(s), out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const std::size_t idx = (n * s.c + c) * s.plane() + i;
        xhat[idx] = (xv[idx] - mean[c]) * inv_std[c];
        out[idx] = gm[c] * xhat[idx] + bt[c];
      }
  const VarId in[] = {x, gamma, beta};
  return t.record("batchnorm_infer", std::move(out), in,
                  [x, gamma, beta, s, xhat = std::move(xhat), inv_std, gm](Tape& tp, const Tensor& gy) {
                    Tensor dg(tp.value(gamma).shape()), db(tp.value(beta).shape()), dx(s);
                    for (std::size_t n = 0; n < s.n; ++n)
                      for (std::size_t c = 0; c < s.c; ++c)
                        for (std::size_t i = 0; i < s.plane(); ++i) {
                          const std::size_t idx = (n * s.c + c) * s.plane() + i;
                          db[c] += gy[idx];
                          dg[c] += gy[idx] * xhat[idx];
                          dx[idx] = gy[idx] * gm[c] * inv_std[c];
                        }
                    tp.accumulate(x, dx);
                    tp.accumulate(gamma, dg);
                    tp.accumulate(beta, db);
                  });
}

VarId leaky(Tape& t, VarId x, double slope) {
  if (t.tracks_branches())
    for (double v : t.value(x).data()) t.note_branch(v > 0.0);
  const VarId in[] = {x};
  return t.record("leaky", dupnet::leaky(t.value(x), slope), in, [x, slope](Tape& tp, const Tensor& gy) {
    tp.accumulate(x, leaky_backward(gy, tp.value(x), slope));
  });
}

VarId maxpool(Tape& t, VarId x, std::size_t size, std::size_t stride) {
  // The argmax pattern is the pool's branch; a unit gradient per output exposes it.
  const Tensor& xv = t.value(x);
  const Tensor y = dupnet::maxpool(xv, size, stride);
  if (t.tracks_branches()) {
    const Tensor route = maxpool_backward(Tensor(y.shape(), 1.0), xv, size, stride);
    for (double v : route.data()) t.note_branch(static_cast<std::uint8_t>(v));
  }
  const VarId in[] = {x};
  return t.record("maxpool", y, in,
                  [x, size, stride](Tape& tp, const Tensor& gy) {
                    tp.accumulate(x, maxpool_backward(gy, tp.value(x), size, stride));
                  });
}

VarId detection_loss(Tape& t, VarId head, std::span<const Anchor> anchors, int classes,
                     std::span<const std::vector<GroundTruth>> truths, const DetectionLossConfig& cfg,
                     double normalizer) {
  DetectionLoss L = dupnet::detection_loss(t.value(head), anchors, classes, truths, cfg);
  const VarId in[] = {head};
  return t.record("detection_loss", scalar(L.total * normalizer), in,
                  [head, normalizer, grad = std::move(L.grad)](Tape& tp, const Tensor& gy) {
                    tp.accumulate(head, (gy[0] * normalizer) * grad);
                  });
}

VarId project(Tape& t, VarId x, const Tensor& r) {
  const VarId in[] = {x};
  return t.record("project", scalar(dot(t.value(x), r)), in,
                  [x, r](Tape& tp, const Tensor& gy) { tp.accumulate(x, gy[0] * r); });
}

}  // namespace ops

}  // namespace dupnet
