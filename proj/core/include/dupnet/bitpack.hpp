#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dupnet/conv.hpp"
#include "dupnet/quantize.hpp"
#include "dupnet/tensor.hpp"

namespace dupnet {

inline constexpr std::size_t kWordBits = 64;

inline std::size_t words_for(std::size_t bits) { return (bits + kWordBits - 1) / kWordBits; }
// Mask of the valid low bits in the last word of a `bits`-long stream.
inline std::uint64_t tail_mask(std::size_t bits) {
  const std::size_t r = bits % kWordBits;
  return r == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << r) - 1;
}

// Element i of a stream maps to bit (i % 64) of word (i / 64).
std::vector<std::vector<std::uint64_t>> pack_code_planes(std::span<const std::int32_t> codes, int bits);
std::vector<std::uint64_t> pack_sign_bits(std::span<const std::int32_t> levels);

// sum_i w_i * a_i with w_i = 2 b_i - 1. Bits past `length` are ignored.
std::int64_t packed_dot(std::span<const std::uint64_t> wbits,
                        std::span<const std::vector<std::uint64_t>> planes, std::size_t length);

// Plane p, pixel (n, y, x) holds bit p of every channel's code in
// words_per_pixel words. Tail bits past c are zero.
struct PackedActivations {
  Shape shape;
  int bits = 0;
  std::size_t words_per_pixel = 0;
  std::vector<std::uint64_t> planes;  // [bits][n][h][w][words_per_pixel]
  std::vector<std::int32_t> totals;   // [n][h][w] sum of codes over channels

  const std::uint64_t* pixel(int plane, std::size_t n, std::size_t y, std::size_t x) const {
    const std::size_t pix = (n * shape.h + y) * shape.w + x;
    return planes.data() + (static_cast<std::size_t>(plane) * shape.n * shape.plane() + pix) * words_per_pixel;
  }
};

// Per filter and kernel tap: one channel bit-stream, bit 1 <=> weight +1.
struct PackedWeights {
  Shape shape;  // [c_out, c_in, k, k]
  std::size_t words_per_tap = 0;
  std::vector<std::uint64_t> bits;  // [c_out][kh][kw][words_per_tap]
  std::vector<std::uint64_t> valid_mask;  // [words_per_tap]

  const std::uint64_t* tap(std::size_t o, std::size_t ky, std::size_t kx) const {
    return bits.data() + ((o * shape.h + ky) * shape.w + kx) * words_per_tap;
  }
};

PackedActivations pack_act(const IntTensor& codes, int bits);
inline PackedActivations pack_act(const QTensor& q) { return pack_act(q.codes, q.bits); }
IntTensor unpack_act(const PackedActivations& p);

PackedWeights pack_weights(const IntTensor& levels);
inline PackedWeights pack_weights(const QWeights& w) { return pack_weights(w.levels); }
IntTensor unpack_weights(const PackedWeights& p);

// Bit-exact with conv2d_int_ref for 1-bit weights.
IntTensor packed_conv2d(const PackedActivations& px, const PackedWeights& pw, ConvGeometry g);

// On-disk payload: flattened [c_out, c_in, k, k] index i -> bit i % 64 of
// word i / 64, words little-endian.
std::vector<std::uint8_t> pack_weight_payload(const IntTensor& levels);
IntTensor unpack_weight_payload(std::span<const std::uint8_t> bytes, const Shape& shape);
inline std::size_t weight_payload_bytes(std::size_t count) { return words_for(count) * 8; }

}  // namespace dupnet
