#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dupnet/model.hpp"

namespace dupnet {

inline constexpr std::uint32_t kWeightsVersion = 1;

// Little-endian container:
//   "DUPW", u32 version, u32 conv count
//   per conv: descriptor (kind, c_out, stored c_in, k, d_w, d_x, w_bits, a_bits, flags)
//             weights  packed sign bits for w_bits = 1, else f32 values
//             scales   f32[c_out] when flags & 2
//             bn       f32 gamma, beta, mean, var [c_out] when flags & 1, else f32 bias [c_out]
//             alpha    f32
std::vector<std::uint8_t> save_weights(const ExportedModel& m);
// The spec must match the stored descriptors. Throws FormatError.
ExportedModel load_weights(std::span<const std::uint8_t> bytes, const NetworkSpec& spec);

void write_weights_file(const std::filesystem::path& path, const ExportedModel& m);
ExportedModel read_weights_file(const std::filesystem::path& path, const NetworkSpec& spec);

struct ContainerSize {
  std::uint64_t weight_bytes = 0;    // weight payloads only
  std::uint64_t overhead_bytes = 0;  // header, descriptors, scales, bn, alpha
  std::uint64_t total_bytes() const { return weight_bytes + overhead_bytes; }
};
ContainerSize container_size(const ExportedModel& m);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace dupnet
