#include "dupnet/cost.hpp"

#include <algorithm>
#include <cstdio>

namespace dupnet {

const char* to_string(CostMode m) { return m == CostMode::dup_full ? "dup_full" : "dup_optimized"; }

int flops_divisor(int a_bits, int w_bits) {
  if (a_bits >= kFullPrecision || w_bits >= kFullPrecision) return 1;
  if (a_bits < 1 || w_bits < 1) throw Error("flops_divisor: bit widths must be >= 1");
  return std::max(1, 64 / (a_bits * w_bits));
}

std::uint64_t layer_madds(const LayerSpec& l, std::size_t out_h, std::size_t out_w) {
  if (!l.is_conv()) return 0;
  return std::uint64_t{out_h} * out_w * l.effective_c_in() * l.k * l.k * l.c_out;
}

std::uint64_t layer_weight_bits(const LayerSpec& l) {
  if (!l.is_conv()) return 0;
  const int bits = l.quant.weight_quantized() ? l.quant.w_bits : kFullPrecision;
  return std::uint64_t{l.stored_c_in()} * l.k * l.k * l.c_out * static_cast<std::uint64_t>(bits);
}

CostReport analyze(const NetworkSpec& spec_in, CostMode mode) {
  const NetworkSpec spec = resolved(spec_in);
  CostReport r;
  r.mode = mode;
  for (const LayerSpec& l : spec.layers) {
    if (!l.is_conv()) continue;
    CostRow row;
    row.layer = l.name;
    row.madds = layer_madds(l);
    row.divisor = flops_divisor(l.quant.a_bits, l.quant.w_bits);
    row.mflops = static_cast<double>(row.madds) / row.divisor / 1e6;
    row.weight_bits = layer_weight_bits(l);
    row.weight_kb = bits_to_kb(row.weight_bits);
    if (mode == CostMode::dup_optimized) {
      row.opt_madds = row.madds / l.d_w;
      if (l.d_w > 1) row.opt_adds = std::uint64_t{l.d_w - 1} * (l.c_in / l.d_w) * l.in_h * l.in_w;
      row.opt_mflops = (static_cast<double>(row.opt_madds) / row.divisor + static_cast<double>(row.opt_adds)) / 1e6;
      r.total_opt_mflops += row.opt_mflops;
    }
    r.total_madds += row.madds;
    r.total_mflops += row.mflops;
    r.total_weight_bits += row.weight_bits;
    r.rows.push_back(std::move(row));
  }
  r.total_weight_kb = bits_to_kb(r.total_weight_bits);
  return r;
}

namespace {
std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}
}  // namespace

std::string format_table(const CostReport& r) {
  const bool opt = r.mode == CostMode::dup_optimized;
  std::string out = fmt("%-10s %16s %4s %10s %12s %10s", "layer", "madds", "div", "mflops", "weight_bits", "weight_kb");
  if (opt) out += fmt(" %16s %10s", "opt_madds", "opt_mflops");
  out += '\n';
  for (const CostRow& row : r.rows) {
    out += fmt("%-10s %16llu %4d %10.1f %12llu %10.2f", row.layer.c_str(),
               static_cast<unsigned long long>(row.madds), row.divisor, row.mflops,
               static_cast<unsigned long long>(row.weight_bits), row.weight_kb);
    if (opt) out += fmt(" %16llu %10.1f", static_cast<unsigned long long>(row.opt_madds), row.opt_mflops);
    out += '\n';
  }
  out += fmt("%-10s %16llu %4s %10.1f %12llu %10.2f", "total", static_cast<unsigned long long>(r.total_madds), "",
             r.total_mflops, static_cast<unsigned long long>(r.total_weight_bits), r.total_weight_kb);
  if (opt) out += fmt(" %16s %10.1f", "", r.total_opt_mflops);
  out += '\n';
  return out;
}

std::string format_csv(const CostReport& r) {
  const bool opt = r.mode == CostMode::dup_optimized;
  std::string out = "layer,madds,mflops,weight_bits,weight_kb";
  if (opt) out += ",opt_madds,opt_mflops";
  out += '\n';
  for (const CostRow& row : r.rows) {
    out += fmt("%s,%llu,%.4f,%llu,%.4f", row.layer.c_str(), static_cast<unsigned long long>(row.madds), row.mflops,
               static_cast<unsigned long long>(row.weight_bits), row.weight_kb);
    if (opt) out += fmt(",%llu,%.4f", static_cast<unsigned long long>(row.opt_madds), row.opt_mflops);
    out += '\n';
  }
  out += fmt("total,%llu,%.4f,%llu,%.4f", static_cast<unsigned long long>(r.total_madds), r.total_mflops,
             static_cast<unsigned long long>(r.total_weight_bits), r.total_weight_kb);
  if (opt) out += fmt(",,%.4f", r.total_opt_mflops);
  out += '\n';
  return out;
}

}  // namespace dupnet
