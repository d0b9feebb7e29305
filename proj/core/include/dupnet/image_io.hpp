#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "dupnet/tensor.hpp"

namespace dupnet {

// Binary PGM (P5) / PPM (P6), maxval 255. Returns codes shaped [1, c, h, w]
// with c = 1 or 3 (RGB order). Header comments are accepted.
IntTensor decode_pnm(std::span<const std::uint8_t> bytes);
IntTensor load_image(const std::filesystem::path& path);

// c = 1 writes P5, c = 3 writes P6. Codes must lie in 0..255; n must be 1.
std::vector<std::uint8_t> encode_pnm(const IntTensor& codes);
void save_image(const std::filesystem::path& path, const IntTensor& codes);

// "DUPT", u32 rank (4), u32 dims[4], f32 data; little-endian.
std::vector<std::uint8_t> encode_tensor_raw(const Tensor& t);
Tensor decode_tensor_raw(std::span<const std::uint8_t> bytes);
void save_tensor_raw(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor_raw(const std::filesystem::path& path);

}  // namespace dupnet
