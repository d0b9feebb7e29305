#include "dupnet/image_io.hpp"

#include <bit>
#include <cctype>
#include <string>

#include "dupnet/weights_io.hpp"

namespace dupnet {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> b) : b_(b) {}

  // Skips whitespace and '#' comments, then reads a decimal field.
  std::size_t number(const char* what) {
    skip();
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (++digits > 9) throw FormatError(std::string("image header: ") + what + " is too large");
    }
    if (digits == 0) throw FormatError(std::string("image header: missing ") + what);
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw FormatError("image header: missing raster separator");
    return pos_ + 1;
  }

 private:
  void skip() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 2;
};

}  // namespace

IntTensor decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw FormatError("image: expected a binary PGM (P5) or PPM (P6)");
  const std::size_t c = bytes[1] == '5' ? 1 : 3;
  HeaderReader h(bytes);
  const std::size_t width = h.number("width");
  const std::size_t height = h.number("height");
  const std::size_t maxval = h.number("maxval");
  if (width == 0 || height == 0) throw FormatError("image: zero width or height");
  if (maxval != 255) throw FormatError("image: maxval must be 255, got " + std::to_string(maxval));
  const std::size_t start = h.raster_start();
  const std::size_t need = width * height * c;
  if (bytes.size() - start < need) throw FormatError("image: truncated raster");
  if (bytes.size() - start > need) throw FormatError("image: trailing bytes after raster");
  IntTensor out(Shape{1, c, height, width});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) out.at(0, ch, y, x) = bytes[start + (y * width + x) * c + ch];
  return out;
}

IntTensor load_image(const std::filesystem::path& path) {
  try {
    return decode_pnm(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_pnm(const IntTensor& codes) {
  const Shape s = codes.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) throw ShapeError("encode_pnm: expected a [1, 1|3, h, w] tensor");
  const std::string header = std::string(s.c == 1 ? "P5" : "P6") + "\n" + std::to_string(s.w) + " " +
                             std::to_string(s.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x)
      for (std::size_t ch = 0; ch < s.c; ++ch) {
        const std::int32_t v = codes.at(0, ch, y, x);
        if (v < 0 || v > 255) throw Error("encode_pnm: code out of range 0..255");
        out.push_back(static_cast<std::uint8_t>(v));
      }
  return out;
}

void save_image(const std::filesystem::path& path, const IntTensor& codes) {
  write_file_bytes(path, encode_pnm(codes));
}

std::vector<std::uint8_t> encode_tensor_raw(const Tensor& t) {
  std::vector<std::uint8_t> out = {'D', 'U', 'P', 'T'};
  const auto put = [&](std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  };
  const Shape s = t.shape();
  put(4);
  for (std::size_t d : {s.n, s.c, s.h, s.w}) put(static_cast<std::uint32_t>(d));
  for (double v : t.data()) put(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Tensor decode_tensor_raw(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  const auto get = [&]() {
    if (bytes.size() - pos < 4) throw FormatError("raw tensor: truncated");
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t{bytes[pos + b]} << (8 * b);
    pos += 4;
    return v;
  };
  if (bytes.size() < 4 || bytes[0] != 'D' || bytes[1] != 'U' || bytes[2] != 'P' || bytes[3] != 'T')
    throw FormatError("raw tensor: bad magic");
  pos = 4;
  if (get() != 4) throw FormatError("raw tensor: only rank 4 is supported");
  Shape s;
  s.n = get();
  s.c = get();
  s.h = get();
  s.w = get();
  const std::size_t count = s.count();
  if ((bytes.size() - pos) / 4 != count || (bytes.size() - pos) % 4 != 0)
    throw FormatError("raw tensor: payload size does not match dims");
  Tensor t(s);
  for (std::size_t i = 0; i < count; ++i) t[i] = static_cast<double>(std::bit_cast<float>(get()));
  return t;
}

void save_tensor_raw(const std::filesystem::path& path, const Tensor& t) {
  write_file_bytes(path, encode_tensor_raw(t));
}

Tensor load_tensor_raw(const std::filesystem::path& path) { return decode_tensor_raw(read_file_bytes(path)); }

}  // namespace dupnet
