#include "dupnet/bitpack.hpp"

#include <bit>

namespace dupnet {

namespace {

void check_code_range(std::int32_t v, int bits) {
  if (v < 0 || v > (1 << bits) - 1)
    throw Error("pack: code " + std::to_string(v) + " out of range for " + std::to_string(bits) + " bits");
}

void check_sign(std::int32_t v) {
  if (v != 1 && v != -1) throw Error("pack: weight level " + std::to_string(v) + " is not +1/-1");
}

void check_bits(int bits) {
  if (bits < 1 || bits > 16) throw Error("pack: activation bits must be in [1, 16]");
}

}  // namespace

std::vector<std::vector<std::uint64_t>> pack_code_planes(std::span<const std::int32_t> codes, int bits) {
  check_bits(bits);
  std::vector<std::vector<std::uint64_t>> planes(static_cast<std::size_t>(bits),
                                                 std::vector<std::uint64_t>(words_for(codes.size()), 0));
  for (std::size_t i = 0; i < codes.size(); ++i) {
    check_code_range(codes[i], bits);
    for (int p = 0; p < bits; ++p)
      if ((codes[i] >> p) & 1) planes[static_cast<std::size_t>(p)][i / kWordBits] |= std::uint64_t{1} << (i % kWordBits);
  }
  return planes;
}

std::vector<std::uint64_t> pack_sign_bits(std::span<const std::int32_t> levels) {
  std::vector<std::uint64_t> words(words_for(levels.size()), 0);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    check_sign(levels[i]);
    if (levels[i] > 0) words[i / kWordBits] |= std::uint64_t{1} << (i % kWordBits);
  }
  return words;
}

std::int64_t packed_dot(std::span<const std::uint64_t> wbits, std::span<const std::vector<std::uint64_t>> planes,
                        std::size_t length) {
  const std::size_t nw = words_for(length);
  if (wbits.size() < nw) throw ShapeError("packed_dot: weight stream shorter than length");
  std::int64_t matched = 0;
  std::int64_t total = 0;
  for (std::size_t p = 0; p < planes.size(); ++p) {
    if (planes[p].size() < nw) throw ShapeError("packed_dot: activation plane shorter than length");
    std::int64_t pm = 0, pt = 0;
    for (std::size_t k = 0; k < nw; ++k) {
      const std::uint64_t mask = k + 1 == nw ? tail_mask(length) : ~std::uint64_t{0};
      const std::uint64_t a = planes[p][k] & mask;
      pm += std::popcount(wbits[k] & a);
      pt += std::popcount(a);
    }
    matched += pm << p;
    total += pt << p;
  }
  return 2 * matched - total;
}

PackedActivations pack_act(const IntTensor& codes, int bits) {
  check_bits(bits);
  const Shape s = codes.shape();
  PackedActivations p;
  p.shape = s;
  p.bits = bits;
  p.words_per_pixel = words_for(s.c);
  p.planes.assign(static_cast<std::size_t>(bits) * s.n * s.plane() * p.words_per_pixel, 0);
  p.totals.assign(s.n * s.plane(), 0);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
          const std::int32_t v = codes.at(n, c, y, x);
          check_code_range(v, bits);
          const std::size_t pix = (n * s.h + y) * s.w + x;
          p.totals[pix] += v;
          for (int b = 0; b < bits; ++b)
            if ((v >> b) & 1) {
              const std::size_t off = (static_cast<std::size_t>(b) * s.n * s.plane() + pix) * p.words_per_pixel;
              p.planes[off + c / kWordBits] |= std::uint64_t{1} << (c % kWordBits);
            }
        }
  return p;
}

IntTensor unpack_act(const PackedActivations& p) {
  const Shape s = p.shape;
  IntTensor out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x)
        for (int b = 0; b < p.bits; ++b) {
          const std::uint64_t* words = p.pixel(b, n, y, x);
          for (std::size_t c = 0; c < s.c; ++c)
            if ((words[c / kWordBits] >> (c % kWordBits)) & 1) out.at(n, c, y, x) |= 1 << b;
        }
  return out;
}

PackedWeights pack_weights(const IntTensor& levels) {
  const Shape s = levels.shape();
  if (s.h != s.w) throw ShapeError("pack_weights: only square kernels are supported");
  PackedWeights p;
  p.shape = s;
  p.words_per_tap = words_for(s.c);
  p.bits.assign(s.n * s.h * s.w * p.words_per_tap, 0);
  p.valid_mask.assign(p.words_per_tap, ~std::uint64_t{0});
  if (p.words_per_tap) p.valid_mask.back() = tail_mask(s.c);
  for (std::size_t o = 0; o < s.n; ++o)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t ky = 0; ky < s.h; ++ky)
        for (std::size_t kx = 0; kx < s.w; ++kx) {
          const std::int32_t v = levels.at(o, c, ky, kx);
          check_sign(v);
          if (v > 0) {
            const std::size_t off = ((o * s.h + ky) * s.w + kx) * p.words_per_tap;
            p.bits[off + c / kWordBits] |= std::uint64_t{1} << (c % kWordBits);
          }
        }
  return p;
}

IntTensor unpack_weights(const PackedWeights& p) {
  const Shape s = p.shape;
  IntTensor out(s);
  for (std::size_t o = 0; o < s.n; ++o)
    for (std::size_t ky = 0; ky < s.h; ++ky)
      for (std::size_t kx = 0; kx < s.w; ++kx) {
        const std::uint64_t* words = p.tap(o, ky, kx);
        for (std::size_t c = 0; c < s.c; ++c)
          out.at(o, c, ky, kx) = ((words[c / kWordBits] >> (c % kWordBits)) & 1) ? 1 : -1;
      }
  return out;
}

IntTensor packed_conv2d(const PackedActivations& px, const PackedWeights& pw, ConvGeometry g) {
  const Shape xs = px.shape;
  const Shape ws = pw.shape;
  if (ws.c != xs.c)
    throw ShapeError("packed_conv2d: weights expect " + std::to_string(ws.c) + " channels, activations have " +
                     std::to_string(xs.c));
  if (pw.words_per_tap != px.words_per_pixel) throw ShapeError("packed_conv2d: word layout mismatch");
  const std::size_t k = ws.h;
  const std::size_t oh = conv_out_dim(xs.h, k, g.stride, g.pad);
  const std::size_t ow = conv_out_dim(xs.w, k, g.stride, g.pad);
  const std::size_t nw = px.words_per_pixel;
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  IntTensor out(Shape{xs.n, ws.n, oh, ow});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::int64_t matched = 0;
          std::int64_t total = 0;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(xs.h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(xs.w)) continue;
              const auto y = static_cast<std::size_t>(iy);
              const auto x = static_cast<std::size_t>(ix);
              const std::uint64_t* wt = pw.tap(o, ky, kx);
              for (int p = 0; p < px.bits; ++p) {
                const std::uint64_t* a = px.pixel(p, n, y, x);
                std::int64_t pm = 0;
                for (std::size_t wi = 0; wi < nw; ++wi) pm += std::popcount(wt[wi] & pw.valid_mask[wi] & a[wi]);
                matched += pm << p;
              }
              total += px.totals[(n * xs.h + y) * xs.w + x];
            }
          }
          out.at(n, o, oy, ox) = static_cast<std::int32_t>(2 * matched - total);
        }
  return out;
}

std::vector<std::uint8_t> pack_weight_payload(const IntTensor& levels) {
  const auto words = pack_sign_bits(levels.data());
  std::vector<std::uint8_t> bytes(words.size() * 8);
  for (std::size_t i = 0; i < words.size(); ++i)
    for (std::size_t b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<std::uint8_t>(words[i] >> (8 * b));
  return bytes;
}

IntTensor unpack_weight_payload(std::span<const std::uint8_t> bytes, const Shape& shape) {
  const std::size_t count = shape.count();
  if (bytes.size() != weight_payload_bytes(count))
    throw FormatError("weight payload is " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(weight_payload_bytes(count)));
  IntTensor out(shape);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t byte = bytes[(i / kWordBits) * 8 + (i % kWordBits) / 8];
    out[i] = ((byte >> (i % 8)) & 1) ? 1 : -1;
  }
  return out;
}

}  // namespace dupnet
