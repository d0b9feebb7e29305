#include "dupnet/weights_io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include "dupnet/bitpack.hpp"

namespace dupnet {

namespace {

constexpr std::uint8_t kMagic[4] = {'D', 'U', 'P', 'W'};
constexpr std::uint32_t kFlagBn = 1;
constexpr std::uint32_t kFlagScales = 2;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f32s(std::span<const double> v) {
    for (double x : v) f32(x);
  }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t u32() {
    need(4, "integer");
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t{b_[pos_ + b]} << (8 * b);
    pos_ += 4;
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  std::vector<double> f32s(std::size_t n) {
    need(n * 4, "real array");
    std::vector<double> v(n);
    for (double& x : v) x = f32();
    return v;
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n, "weight payload");
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw FormatError(std::string("truncated weight file while reading ") + what);
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

struct Descriptor {
  std::uint32_t kind, c_out, c_in, k, d_w, d_x, w_bits, a_bits, flags;
};

Descriptor describe(const LayerSpec& l, bool has_scales) {
  return Descriptor{0,
                    static_cast<std::uint32_t>(l.c_out),
                    static_cast<std::uint32_t>(l.stored_c_in()),
                    static_cast<std::uint32_t>(l.k),
                    static_cast<std::uint32_t>(l.d_w),
                    static_cast<std::uint32_t>(l.d_x),
                    static_cast<std::uint32_t>(l.quant.w_bits),
                    static_cast<std::uint32_t>(l.quant.a_bits),
                    (l.has_bn ? kFlagBn : 0u) | (has_scales ? kFlagScales : 0u)};
}

std::vector<double> level_values(const IntTensor& levels) {
  std::vector<double> v(levels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = levels[i];
  return v;
}

void check_len(std::size_t got, std::size_t want, const LayerSpec& l, const char* what) {
  if (got != want)
    throw FormatError(l.name + ": " + what + " has " + std::to_string(got) + " values, expected " +
                      std::to_string(want));
}

}  // namespace

std::vector<std::uint8_t> save_weights(const ExportedModel& m) {
  const auto idx = m.spec.conv_indices();
  if (idx.size() != m.convs.size()) throw FormatError("save_weights: model and spec disagree on conv count");
  Writer w;
  w.bytes(kMagic);
  w.u32(kWeightsVersion);
  w.u32(static_cast<std::uint32_t>(idx.size()));
  for (std::size_t ci = 0; ci < idx.size(); ++ci) {
    const LayerSpec& l = m.spec.layers[idx[ci]];
    const ExportedConv& c = m.convs[ci];
    const Descriptor d = describe(l, !c.scales.empty());
    for (std::uint32_t v : {d.kind, d.c_out, d.c_in, d.k, d.d_w, d.d_x, d.w_bits, d.a_bits, d.flags}) w.u32(v);
    const std::size_t count = std::size_t{d.c_out} * d.c_in * d.k * d.k;
    if (l.quant.w_bits == 1) {
      check_len(c.levels.size(), count, l, "weights");
      w.bytes(pack_weight_payload(c.levels));
    } else if (l.quant.weight_quantized()) {
      check_len(c.levels.size(), count, l, "weights");
      w.f32s(level_values(c.levels));
    } else {
      check_len(c.weight.size(), count, l, "weights");
      w.f32s(c.weight.data());
    }
    if (!c.scales.empty()) {
      check_len(c.scales.size(), l.c_out, l, "scales");
      w.f32s(c.scales);
    }
    if (l.has_bn) {
      for (const auto* v : {&c.gamma, &c.beta, &c.mean, &c.var}) {
        check_len(v->size(), l.c_out, l, "batch-norm array");
        w.f32s(*v);
      }
    } else {
      check_len(c.bias.size(), l.c_out, l, "bias");
      w.f32s(c.bias);
    }
    w.f32(c.alpha);
  }
  return w.take();
}

ExportedModel load_weights(std::span<const std::uint8_t> bytes, const NetworkSpec& spec_in) {
  ExportedModel m;
  m.spec = resolved(spec_in);
  Reader r(bytes);
  const auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) throw FormatError("not a weight file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kWeightsVersion)
    throw FormatError("unsupported weight file version " + std::to_string(version));
  const auto idx = m.spec.conv_indices();
  const std::uint32_t count = r.u32();
  if (count != idx.size())
    throw FormatError("weight file has " + std::to_string(count) + " conv layers, network has " +
                      std::to_string(idx.size()));
  for (std::size_t ci = 0; ci < idx.size(); ++ci) {
    const LayerSpec& l = m.spec.layers[idx[ci]];
    Descriptor d{};
    for (std::uint32_t* f : {&d.kind, &d.c_out, &d.c_in, &d.k, &d.d_w, &d.d_x, &d.w_bits, &d.a_bits, &d.flags})
      *f = r.u32();
    const bool has_scales = d.flags & kFlagScales;
    const Descriptor want = describe(l, has_scales);
    if (d.kind != want.kind || d.c_out != want.c_out || d.c_in != want.c_in || d.k != want.k ||
        d.d_w != want.d_w || d.d_x != want.d_x || d.w_bits != want.w_bits || d.a_bits != want.a_bits ||
        d.flags != want.flags)
      throw FormatError(l.name + ": stored layer descriptor does not match the network spec");
    const Shape ws{l.c_out, l.stored_c_in(), l.k, l.k};
    ExportedConv c;
    if (l.quant.w_bits == 1) {
      c.levels = unpack_weight_payload(r.bytes(weight_payload_bytes(ws.count())), ws);
    } else if (l.quant.weight_quantized()) {
      const auto v = r.f32s(ws.count());
      const int top = (1 << l.quant.w_bits) - 1;
      c.levels = IntTensor(ws);
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = v[i];
        if (x != std::floor(x) || std::abs(x) > top || static_cast<long long>(x) % 2 == 0)
          throw FormatError(l.name + ": invalid weight level in payload");
        c.levels[i] = static_cast<std::int32_t>(x);
      }
    } else {
      c.weight = Tensor(ws, r.f32s(ws.count()));
    }
    if (has_scales) c.scales = r.f32s(l.c_out);
    if (l.has_bn) {
      c.gamma = r.f32s(l.c_out);
      c.beta = r.f32s(l.c_out);
      c.mean = r.f32s(l.c_out);
      c.var = r.f32s(l.c_out);
    } else {
      c.bias = r.f32s(l.c_out);
    }
    c.alpha = r.f32();
    m.convs.push_back(std::move(c));
  }
  if (!r.done()) throw FormatError("trailing bytes after the last layer");
  return m;
}

void write_weights_file(const std::filesystem::path& path, const ExportedModel& m) {
  write_file_bytes(path, save_weights(m));
}

ExportedModel read_weights_file(const std::filesystem::path& path, const NetworkSpec& spec) {
  return load_weights(read_file_bytes(path), spec);
}

ContainerSize container_size(const ExportedModel& m) {
  ContainerSize s;
  const auto idx = m.spec.conv_indices();
  s.overhead_bytes = 12 + idx.size() * 9 * 4;
  for (std::size_t ci = 0; ci < idx.size(); ++ci) {
    const LayerSpec& l = m.spec.layers[idx[ci]];
    const std::size_t count = l.c_out * l.stored_c_in() * l.k * l.k;
    s.weight_bytes += l.quant.w_bits == 1 ? weight_payload_bytes(count) : count * 4;
    if (ci < m.convs.size() && !m.convs[ci].scales.empty()) s.overhead_bytes += l.c_out * 4;
    s.overhead_bytes += (l.has_bn ? 4 : 1) * l.c_out * 4 + 4;
  }
  return s;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace dupnet
