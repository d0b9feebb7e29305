#include "dupnet/network.hpp"

#include "dupnet/conv.hpp"
#include "dupnet/layers.hpp"

namespace dupnet {

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::detect: return "detect";
  }
  return "?";
}

const char* to_string(Activation a) {
  switch (a) {
    case Activation::leaky: return "leaky";
    case Activation::linear: return "linear";
    case Activation::quant: return "quant";
  }
  return "?";
}

std::vector<std::size_t> NetworkSpec::conv_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].is_conv()) out.push_back(i);
  return out;
}

const LayerSpec* NetworkSpec::find(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

LayerSpec* NetworkSpec::find(const std::string& name) {
  for (auto& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

void resolve(NetworkSpec& spec) {
  if (spec.in_c == 0 || spec.in_h == 0 || spec.in_w == 0)
    throw ShapeError("network input dimensions must be >= 1");
  std::size_t convs = 0, pools = 0;
  for (auto& l : spec.layers) {
    if (!l.name.empty()) continue;
    switch (l.kind) {
      case LayerKind::conv: l.name = "conv" + std::to_string(++convs); break;
      case LayerKind::maxpool: l.name = "maxpool" + std::to_string(++pools); break;
      case LayerKind::detect: l.name = "detect"; break;
    }
  }

  std::size_t c = spec.in_c, h = spec.in_h, w = spec.in_w;
  std::string prev = "input";
  for (std::size_t idx = 0; idx < spec.layers.size(); ++idx) {
    LayerSpec& l = spec.layers[idx];
    const std::string edge = prev + " -> " + l.name;
    l.c_in = c;
    l.in_h = h;
    l.in_w = w;
    switch (l.kind) {
      case LayerKind::conv: {
        if (l.c_out == 0) throw ShapeError(edge + ": filters must be >= 1");
        if (l.k == 0) throw ShapeError(edge + ": kernel size must be >= 1");
        if (l.d_w == 0 || l.d_x == 0) throw ShapeError(edge + ": duplication factors must be >= 1");
        if (l.d_w > 1 && l.d_x > 1)
          throw ShapeError(l.name + ": dup_w and dup_x cannot both exceed 1 on one layer");
        if (l.d_w > 1 && c % l.d_w != 0)
          throw ShapeError(edge + ": dup_w=" + std::to_string(l.d_w) + " does not divide " +
                           std::to_string(c) + " input channels");
        try {
          l.quant.validate();
        } catch (const Error& e) {
          throw ShapeError(l.name + ": " + e.what());
        }
        try {
          l.out_h = conv_out_dim(h, l.k, l.stride, l.pad);
          l.out_w = conv_out_dim(w, l.k, l.stride, l.pad);
        } catch (const ShapeError& e) {
          throw ShapeError(edge + ": " + e.what());
        }
        c = l.c_out;
        break;
      }
      case LayerKind::maxpool: {
        try {
          l.out_h = maxpool_out_dim(h, l.k, l.stride);
          l.out_w = maxpool_out_dim(w, l.k, l.stride);
        } catch (const ShapeError& e) {
          throw ShapeError(edge + ": " + e.what());
        }
        l.c_out = c;
        break;
      }
      case LayerKind::detect: {
        if (idx + 1 != spec.layers.size()) throw ShapeError(l.name + ": detect layer must be last");
        const std::size_t want = head_channels(spec.anchors.size(), spec.classes);
        if (spec.anchors.empty()) throw ShapeError(l.name + ": no anchors given");
        if (spec.classes < 1) throw ShapeError(l.name + ": classes must be >= 1");
        if (c != want)
          throw ShapeError(edge + ": detect expects " + std::to_string(want) + " channels (" +
                           std::to_string(spec.anchors.size()) + " anchors x (5 + " +
                           std::to_string(spec.classes) + ")), got " + std::to_string(c));
        l.out_h = h;
        l.out_w = w;
        l.c_out = c;
        break;
      }
    }
    if (l.out_h == 0 || l.out_w == 0) throw ShapeError(edge + ": spatial size collapses to zero");
    h = l.out_h;
    w = l.out_w;
    prev = l.name;
  }
}

NetworkSpec resolved(NetworkSpec spec) {
  resolve(spec);
  return spec;
}

}  // namespace dupnet
