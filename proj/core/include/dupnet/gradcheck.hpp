#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dupnet/network.hpp"
#include "dupnet/tape.hpp"

namespace dupnet {

// Builds a scalar on the tape from leaves holding the given inputs.
using GraphFn = std::function<VarId(Tape&, std::span<const VarId>)>;

struct GradcheckOptions {
  double eps = 1e-3;
  std::size_t max_coords = 0;  // per input; 0 checks every coordinate
  std::uint64_t seed = 1;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose +-eps perturbation flips a branch (leaky sign, pool
  // argmax, clip region); the central difference is meaningless there.
  std::size_t skipped = 0;
};

// Central differences against the tape gradient, one result per input.
// Relative error = |numeric - analytic| / max(1, |analytic|).
std::vector<GradcheckResult> finite_diff_gradcheck(const GraphFn& f, const std::vector<Tensor>& inputs,
                                                   const GradcheckOptions& opt = {});
double max_rel_error(std::span<const GradcheckResult> r);

struct LayerGradcheck {
  std::string layer;    // e.g. "conv6 (tile)"
  std::string params;   // which tensors were checked
  GradcheckResult result;
};

// Checks each layer of the network in isolation on the real-valued path with
// small random inputs (exact-adjoint reduce). Dup layers are checked in both modes.
std::vector<LayerGradcheck> gradcheck_network(const NetworkSpec& spec, const GradcheckOptions& opt = {},
                                              std::size_t spatial = 4, std::size_t batch = 2);

}  // namespace dupnet
