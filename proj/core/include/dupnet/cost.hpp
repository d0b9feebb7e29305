#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dupnet/network.hpp"

namespace dupnet {

// dup_full charges weight-duplicated layers for the full W_dup * X product.
// dup_optimized adds columns for the W_t * X_sum rewrite.
enum class CostMode { dup_full, dup_optimized };

const char* to_string(CostMode m);

struct CostRow {
  std::string layer;
  std::uint64_t madds = 0;
  int divisor = 1;
  double mflops = 0.0;
  std::uint64_t weight_bits = 0;
  double weight_kb = 0.0;
  // dup_optimized only: MAdds of W_t * X_sum and the adds forming X_sum.
  std::uint64_t opt_madds = 0;
  std::uint64_t opt_adds = 0;
  double opt_mflops = 0.0;
};

struct CostReport {
  CostMode mode = CostMode::dup_full;
  std::vector<CostRow> rows;
  std::uint64_t total_madds = 0;
  double total_mflops = 0.0;
  std::uint64_t total_weight_bits = 0;
  double total_weight_kb = 0.0;
  double total_opt_mflops = 0.0;
};

// max(1, floor(64 / (a * w))); 32 bits on either side counts as full precision.
int flops_divisor(int a_bits, int w_bits);

std::uint64_t layer_madds(const LayerSpec& l, std::size_t out_h, std::size_t out_w);
inline std::uint64_t layer_madds(const LayerSpec& l) { return layer_madds(l, l.out_h, l.out_w); }

// (c_in * d_x / d_w) * k^2 * c_out * w_bits.
std::uint64_t layer_weight_bits(const LayerSpec& l);

inline double bits_to_kb(std::uint64_t bits) { return static_cast<double>(bits) / 8192.0; }

// One row per conv layer. The spec is resolved internally.
CostReport analyze(const NetworkSpec& spec, CostMode mode = CostMode::dup_full);

std::string format_table(const CostReport& r);
// layer,madds,mflops,weight_bits,weight_kb[,opt_madds,opt_mflops]
std::string format_csv(const CostReport& r);

}  // namespace dupnet
