#include "dupnet/model.hpp"

#include <cmath>

#include "dupnet/bitpack.hpp"
#include "dupnet/layers.hpp"
#include "dupnet/rng.hpp"

namespace dupnet {

namespace {

Shape vec_shape(std::size_t c) { return Shape{1, c, 1, 1}; }

double narrow(double v) { return static_cast<double>(static_cast<float>(v)); }

std::vector<double> narrow(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x = narrow(x);
  return out;
}

Tensor narrow(const Tensor& t) {
  Tensor out = t;
  for (double& x : out.data()) x = narrow(x);
  return out;
}

void check_finite(const Tensor& t, const LayerSpec& l) {
  if (!all_finite(t)) throw NumericError(l.name + ": non-finite output", l.name);
}

}  // namespace

Model init_model(const NetworkSpec& spec_in, std::uint64_t seed) {
  Model m;
  m.spec = resolved(spec_in);
  Rng rng(seed);
  for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
    const LayerSpec& l = m.spec.layers[i];
    if (!l.is_conv()) continue;
    ConvParams p;
    const Shape ws{l.c_out, l.stored_c_in(), l.k, l.k};
    const double fan_in = static_cast<double>(l.effective_c_in() * l.k * l.k);
    const double sd = std::sqrt(2.0 / fan_in);
    p.weight = Tensor(ws);
    for (double& v : p.weight.data()) v = rng.normal(0.0, sd);
    if (l.has_bn) {
      p.gamma = Tensor(vec_shape(l.c_out), 1.0);
      p.beta = Tensor(vec_shape(l.c_out), 0.0);
      p.running_mean.assign(l.c_out, 0.0);
      p.running_var.assign(l.c_out, 1.0);
    } else {
      p.bias = Tensor(vec_shape(l.c_out), 0.0);
    }
    if (i == 0) {
      p.alpha = 1.0;
      p.alpha_trainable = false;
    } else {
      p.alpha = l.quant.clip_alpha;
    }
    m.convs.push_back(std::move(p));
  }
  return m;
}

ParamVars bind_params(Tape& t, const Model& m, bool requires_grad) {
  ParamVars v;
  for (const ConvParams& p : m.convs) {
    v.weight.push_back(t.leaf(p.weight, requires_grad));
    const bool bn = !p.gamma.empty();
    v.gamma.push_back(bn ? t.leaf(p.gamma, requires_grad) : 0);
    v.beta.push_back(bn ? t.leaf(p.beta, requires_grad) : 0);
    v.bias.push_back(bn ? 0 : t.leaf(p.bias, requires_grad));
    v.alpha.push_back(t.leaf(Tensor(Shape{1, 1, 1, 1}, p.alpha), requires_grad && p.alpha_trainable));
  }
  return v;
}

ForwardResult forward(Tape& t, const Model& m, const ParamVars& p, VarId input, const ForwardOptions& opt) {
  const NetworkSpec& spec = m.spec;
  const Shape in = t.value(input).shape();
  if (in.c != spec.in_c || in.h != spec.in_h || in.w != spec.in_w)
    throw ShapeError("forward: input " + to_string(in) + " does not match network input " +
                     std::to_string(spec.in_c) + "x" + std::to_string(spec.in_h) + "x" +
                     std::to_string(spec.in_w));
  ForwardResult r;
  r.stats.resize(m.convs.size());
  VarId cur = input;
  std::size_t ci = 0;
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::conv: {
        const ConvParams& cp = m.convs[ci];
        VarId x = cur;
        if (opt.quantize && l.quant.act_quantized()) {
          try {
            x = ops::quantize_act(t, x, p.alpha[ci], l.quant.a_bits);
          } catch (const NumericError& e) {
            throw NumericError(l.name + ": " + e.what(), l.name);
          }
        }
        VarId w = p.weight[ci];
        if (opt.quantize && l.quant.weight_quantized()) w = ops::quantize_weights(t, w, l.quant);
        const ConvGeometry g{l.stride, l.pad};
        VarId y;
        if (l.d_w > 1) {
          if (opt.wmode == DupWeightMode::tile) {
            y = ops::conv2d(t, x, ops::channel_tile(t, w, l.d_w, opt.reduce), g);
          } else {
            if (opt.reduce == GradReduce::average) w = ops::grad_scale(t, w, 1.0 / static_cast<double>(l.d_w));
            y = ops::conv2d(t, ops::channel_group_sum(t, x, l.d_w), w, g);
          }
        } else if (l.d_x > 1) {
          if (opt.xmode == DupFeatureMode::dup) {
            y = ops::conv2d(t, ops::channel_tile(t, x, l.d_x, opt.reduce), w, g);
          } else {
            if (opt.reduce == GradReduce::average) x = ops::grad_scale(t, x, 1.0 / static_cast<double>(l.d_x));
            y = ops::conv2d(t, x, ops::channel_group_sum(t, w, l.d_x), g);
          }
        } else {
          y = ops::conv2d(t, x, w, g);
        }
        if (l.has_bn) {
          if (opt.training)
            y = ops::batchnorm_train(t, y, p.gamma[ci], p.beta[ci], kBatchNormEps, &r.stats[ci]);
          else
            y = ops::batchnorm_infer(t, y, p.gamma[ci], p.beta[ci], cp.running_mean, cp.running_var,
                                     kBatchNormEps);
        } else {
          y = ops::add_bias(t, y, p.bias[ci]);
        }
        if (l.activation == Activation::leaky) y = ops::leaky(t, y, kLeakySlope);
        check_finite(t.value(y), l);
        cur = y;
        ++ci;
        break;
      }
      case LayerKind::maxpool:
        cur = ops::maxpool(t, cur, l.k, l.stride);
        break;
      case LayerKind::detect:
        break;
    }
    r.outputs.push_back(cur);
  }
  r.head = cur;
  return r;
}

Tensor image_input(const IntTensor& codes) {
  Tensor out(codes.shape());
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = codes[i] / 255.0;
  return out;
}

ExportedModel export_model(const Model& m) {
  ExportedModel e;
  e.spec = m.spec;
  const auto idx = m.spec.conv_indices();
  for (std::size_t ci = 0; ci < m.convs.size(); ++ci) {
    const LayerSpec& l = m.spec.layers[idx[ci]];
    const ConvParams& p = m.convs[ci];
    ExportedConv c;
    if (l.quant.weight_quantized()) {
      QWeights q = quantize_weights(p.weight, l.quant);
      c.levels = std::move(q.levels);
      c.scales = narrow(q.scale);
    } else {
      c.weight = narrow(p.weight);
    }
    if (l.has_bn) {
      c.gamma = narrow(p.gamma.data());
      c.beta = narrow(p.beta.data());
      c.mean = narrow(p.running_mean);
      c.var = narrow(p.running_var);
    } else {
      c.bias = narrow(p.bias.data());
    }
    c.alpha = narrow(p.alpha);
    e.convs.push_back(std::move(c));
  }
  return e;
}

namespace {

Tensor real_weights(const ExportedConv& c) {
  if (c.levels.empty()) return c.weight;
  QWeights q{c.levels, c.scales, 1};
  return q.dequantize();
}

// Integer accumulators of one quantized convolution.
IntTensor integer_core(const IntTensor& codes, int a_bits, const ExportedConv& c, const LayerSpec& l,
                       KernelPath path) {
  const ConvGeometry g{l.stride, l.pad};
  const bool packable = path == KernelPath::packed && l.quant.w_bits == 1 && a_bits <= 8;
  if (packable) {
    if (l.d_w > 1)
      return packed_conv2d(pack_act(codes, a_bits), pack_weights(channel_tile(c.levels, l.d_w)), g);
    if (l.d_x > 1)
      return packed_conv2d(pack_act(channel_tile(codes, l.d_x), a_bits), pack_weights(c.levels), g);
    return packed_conv2d(pack_act(codes, a_bits), pack_weights(c.levels), g);
  }
  if (l.d_w > 1) return conv2d_int_ref(channel_group_sum(codes, l.d_w), c.levels, g);
  if (l.d_x > 1) return conv2d_int_ref(codes, weight_group_sum(c.levels, l.d_x), g);
  return conv2d_int_ref(codes, c.levels, g);
}

Tensor real_core(const Tensor& x, const Tensor& w, const LayerSpec& l) {
  const ConvGeometry g{l.stride, l.pad};
  if (l.d_w > 1) return conv2d(channel_group_sum(x, l.d_w), w, g);
  if (l.d_x > 1) return conv2d(x, weight_group_sum(w, l.d_x), g);
  return conv2d(x, w, g);
}

}  // namespace

Tensor infer(const ExportedModel& m, const Tensor& input, KernelPath path) {
  const NetworkSpec& spec = m.spec;
  const Shape in = input.shape();
  if (in.c != spec.in_c || in.h != spec.in_h || in.w != spec.in_w)
    throw ShapeError("infer: input " + to_string(in) + " does not match the network input");
  Tensor cur = input;
  std::size_t ci = 0;
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::conv: {
        const ExportedConv& c = m.convs.at(ci);
        Tensor y;
        if (l.quant.act_quantized()) {
          QuantSpec qs;
          qs.a_bits = l.quant.a_bits;
          qs.clip_alpha = c.alpha;
          QTensor q;
          try {
            q = quantize_act(cur, qs);
          } catch (const NumericError& e) {
            throw NumericError(l.name + ": " + e.what(), l.name);
          }
          if (!c.levels.empty()) {
            const IntTensor acc = integer_core(q.codes, q.bits, c, l, path);
            const Shape s = acc.shape();
            y = Tensor(s);
            for (std::size_t n = 0; n < s.n; ++n)
              for (std::size_t o = 0; o < s.c; ++o) {
                const double f = q.delta * (c.scales.empty() ? 1.0 : c.scales[o]);
                for (std::size_t i = 0; i < s.plane(); ++i) {
                  const std::size_t k = (n * s.c + o) * s.plane() + i;
                  y[k] = acc[k] * f;
                }
              }
          } else {
            y = real_core(q.dequantize(), c.weight, l);
          }
        } else {
          y = real_core(cur, real_weights(c), l);
        }
        if (l.has_bn) {
          y = affine_apply(y, batchnorm_fold(BatchNormParams{c.gamma, c.beta, c.mean, c.var, kBatchNormEps}));
        } else {
          y = affine_apply(y, Affine{std::vector<double>(c.bias.size(), 1.0), c.bias});
        }
        if (l.activation == Activation::leaky) y = leaky(y, kLeakySlope);
        check_finite(y, l);
        cur = std::move(y);
        ++ci;
        break;
      }
      case LayerKind::maxpool:
        cur = maxpool(cur, l.k, l.stride);
        break;
      case LayerKind::detect:
        break;
    }
  }
  return cur;
}

std::vector<DetectionBox> detect_boxes(const ExportedModel& m, const Tensor& head, std::size_t image,
                                       double thresh, double nms_iou) {
  std::vector<DetectionBox> kept;
  for (const DetectionBox& b : yolo_decode(head, m.spec.anchors, m.spec.classes, image))
    if (b.score > thresh) kept.push_back(b);
  return nms(std::move(kept), nms_iou);
}

}  // namespace dupnet
