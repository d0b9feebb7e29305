#include "dupnet/presets.hpp"

#include <algorithm>

namespace dupnet {

namespace {

LayerSpec conv(std::size_t filters, std::size_t k, int a_bits, int w_bits, bool bn = true,
               Activation act = Activation::leaky) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.c_out = filters;
  l.k = k;
  l.stride = 1;
  l.pad = k / 2;
  l.quant.a_bits = a_bits;
  l.quant.w_bits = w_bits;
  l.has_bn = bn;
  l.activation = act;
  return l;
}

LayerSpec pool(std::size_t stride) {
  LayerSpec l;
  l.kind = LayerKind::maxpool;
  l.k = 2;
  l.stride = stride;
  return l;
}

LayerSpec detect() {
  LayerSpec l;
  l.kind = LayerKind::detect;
  return l;
}

NetworkSpec chain(const std::vector<std::size_t>& filters, bool quantized) {
  NetworkSpec s;
  s.in_c = 3;
  s.in_h = 608;
  s.in_w = 608;
  s.anchors = default_face_anchors();
  s.classes = 1;
  const int a1 = quantized ? 8 : kFullPrecision;
  const int a = quantized ? 2 : kFullPrecision;
  const int w = quantized ? 1 : kFullPrecision;
  // Conv1-Conv5 each followed by a 2x2 pool; the fifth one keeps 38x38.
  for (std::size_t i = 0; i < 5; ++i) {
    s.layers.push_back(conv(filters[i], 3, i == 0 ? a1 : a, w));
    s.layers.push_back(pool(i < 4 ? 2 : 1));
  }
  s.layers.push_back(conv(filters[5], 3, a, w));
  s.layers.push_back(conv(filters[6], 3, a, w));
  s.layers.push_back(conv(filters[7], 1, a, w));
  s.layers.push_back(conv(head_channels(s.anchors.size(), s.classes), 3, a, w, false, Activation::linear));
  s.layers.push_back(detect());
  resolve(s);
  return s;
}

std::vector<std::string> conv_names(std::size_t from, std::size_t to) {
  std::vector<std::string> out;
  for (std::size_t i = from; i <= to; ++i) out.push_back("conv" + std::to_string(i));
  return out;
}

LayerSpec& conv_layer(NetworkSpec& s, const std::string& name) {
  LayerSpec* l = s.find(name);
  if (!l || !l->is_conv()) throw Error("no conv layer named " + name);
  return *l;
}

}  // namespace

std::vector<Anchor> default_face_anchors() {
  return {{0.5, 0.65}, {1.0, 1.3}, {2.0, 2.6}, {4.0, 5.2}, {8.0, 10.4}};
}

NetworkSpec preset_tinier_yolo() { return chain({8, 16, 32, 64, 128, 256, 512, 512}, true); }

NetworkSpec preset_tinier_yolo_halved(bool quantized) {
  return chain({8, 16, 32, 64, 128, 128, 256, 256}, quantized);
}

NetworkSpec sensitivity_variant(const NetworkSpec& base, int row) {
  if (row < 1 || row > 5) throw Error("sensitivity row must be in 1..5");
  NetworkSpec s = resolved(base);
  const auto idx = s.conv_indices();
  const std::size_t n = idx.size();
  if (n < 5) throw Error("sensitivity sweep needs at least 5 conv layers");
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t num = i + 1;  // conv number, 1-based
    bool q = false;
    switch (row) {
      case 1: q = false; break;
      case 2: q = num >= 4 && num < n; break;
      case 3: q = num >= 2 && num < n; break;
      case 4: q = num < n; break;
      case 5: q = true; break;
    }
    LayerSpec& l = s.layers[idx[i]];
    l.quant.a_bits = q ? (num == 1 ? 8 : 2) : kFullPrecision;
    l.quant.w_bits = q ? 1 : kFullPrecision;
  }
  resolve(s);
  return s;
}

std::string sensitivity_label(int row, std::size_t convs) {
  const std::string last = "conv" + std::to_string(convs - 1);
  switch (row) {
    case 1: return "none";
    case 2: return "conv4-" + last;
    case 3: return "conv2-" + last;
    case 4: return "conv1-" + last;
    case 5: return "all";
  }
  throw Error("sensitivity row must be in 1..5");
}

NetworkSpec feature_dup_variant(int row) {
  if (row < 1 || row > 4) throw Error("feature-duplication row must be in 1..4");
  NetworkSpec s = preset_tinier_yolo_halved(true);
  if (row >= 2) {
    s = with_feature_dup(s, {"conv2"}, 4);
    s = with_feature_dup(s, {"conv3"}, 2);
  }
  if (row >= 3) s = with_feature_dup(s, {"conv1"}, 4);
  if (row >= 4) s = with_feature_dup(s, {"conv9"}, 2);
  return s;
}

NetworkSpec weight_dup_variant(std::size_t d) {
  return with_weight_dup(preset_tinier_yolo_halved(true), conv_names(6, 8), d);
}

NetworkSpec preset_dupnet() { return with_weight_dup(feature_dup_variant(2), conv_names(6, 8), 4); }

NetworkSpec preset_dupnet_l() { return with_weight_dup(feature_dup_variant(4), conv_names(6, 8), 4); }

NetworkSpec slim_filters(const NetworkSpec& spec, const std::vector<std::string>& layers, std::size_t factor) {
  if (factor == 0) throw Error("slim factor must be >= 1");
  NetworkSpec s = resolved(spec);
  for (const auto& name : layers) {
    LayerSpec& l = conv_layer(s, name);
    if (l.c_out % factor != 0)
      throw ShapeError(name + ": " + std::to_string(l.c_out) + " filters are not divisible by " + std::to_string(factor));
    l.c_out /= factor;
  }
  resolve(s);
  return s;
}

NetworkSpec with_weight_dup(NetworkSpec spec, const std::vector<std::string>& layers, std::size_t d) {
  resolve(spec);
  for (const auto& name : layers) conv_layer(spec, name).d_w = d;
  resolve(spec);
  return spec;
}

NetworkSpec with_feature_dup(NetworkSpec spec, const std::vector<std::string>& layers, std::size_t d) {
  resolve(spec);
  for (const auto& name : layers) conv_layer(spec, name).d_x = d;
  resolve(spec);
  return spec;
}

}  // namespace dupnet
