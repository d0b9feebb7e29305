#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dupnet/detect.hpp"
#include "dupnet/quantize.hpp"

namespace dupnet {

enum class LayerKind { conv, maxpool, detect };
// `quant` leaves the output linear; the next layer's activation quantizer is the nonlinearity.
enum class Activation { leaky, linear, quant };

const char* to_string(LayerKind k);
const char* to_string(Activation a);

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::string name;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t k = 1;  // kernel or pool window
  std::size_t stride = 1;
  std::size_t pad = 0;
  QuantSpec quant;
  std::size_t d_w = 1;
  std::size_t d_x = 1;
  bool has_bn = false;
  Activation activation = Activation::linear;

  // Filled by resolve().
  std::size_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;

  bool is_conv() const { return kind == LayerKind::conv; }
  // Input channels of the stored weights: c_in * d_x / d_w.
  std::size_t stored_c_in() const { return c_in * d_x / d_w; }
  // Input channels the convolution logically sees: c_in * d_x.
  std::size_t effective_c_in() const { return c_in * d_x; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkSpec {
  std::size_t in_c = 0, in_h = 0, in_w = 0;
  std::vector<LayerSpec> layers;
  std::vector<Anchor> anchors;
  int classes = 1;

  std::vector<std::size_t> conv_indices() const;
  const LayerSpec* find(const std::string& name) const;
  LayerSpec* find(const std::string& name);

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// Assigns default names (conv1.., maxpool1.., detect), propagates channel
// counts and spatial sizes, and validates the chain. Throws ShapeError naming
// the offending pair of layers.
void resolve(NetworkSpec& spec);

// Rebuilds c_in/spatial sizes after a caller edits filters or factors.
NetworkSpec resolved(NetworkSpec spec);

}  // namespace dupnet
