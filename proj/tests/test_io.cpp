#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dupnet/bitpack.hpp"
#include "dupnet/cost.hpp"
#include "dupnet/image_io.hpp"
#include "dupnet/netcfg.hpp"
#include "dupnet/presets.hpp"
#include "dupnet/weights_io.hpp"
#include "helpers.hpp"

using namespace dupnet;

namespace {

const std::filesystem::path kPresets = DUPNET_TEST_PRESET_DIR;

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string parse_error_of(std::string_view text) {
  try {
    parse_netcfg(text);
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

// Randomized parameters with exact float32 values so export is lossless.
ExportedModel random_export(const NetworkSpec& spec, std::uint64_t seed) {
  Model m = init_model(spec, seed);
  Rng rng(seed + 1);
  for (auto& c : m.convs) {
    for (double& v : c.gamma.data()) v = static_cast<float>(rng.uniform(0.5, 1.5));
    for (double& v : c.beta.data()) v = static_cast<float>(rng.normal());
    for (double& v : c.bias.data()) v = static_cast<float>(rng.normal());
    for (double& v : c.running_mean) v = static_cast<float>(rng.normal());
    for (double& v : c.running_var) v = static_cast<float>(rng.uniform(0.5, 2.0));
    if (c.alpha_trainable) c.alpha = static_cast<float>(rng.uniform(0.5, 4.0));
  }
  return export_model(m);
}

NetworkSpec small_net(std::size_t d_w, std::size_t d_x, int w_bits = 1) {
  return parse_netcfg("[net]\nwidth=8\nheight=8\nchannels=1\n"
                      "[conv]\nfilters=8\nsize=3\npad=1\na_bits=8\nw_bits=1\nbn=1\nactivation=leaky\n"
                      "[conv]\nfilters=64\nsize=3\npad=1\na_bits=2\nw_bits=" + std::to_string(w_bits) +
                      "\ndup_w=" + std::to_string(d_w) + "\ndup_x=" + std::to_string(d_x) +
                      "\nbn=1\nactivation=leaky\n"
                      "[conv]\nfilters=6\nsize=1\na_bits=2\nw_bits=1\nbn=0\nactivation=linear\n"
                      "[detect]\nanchors=1,1\nclasses=1\n");
}

}  // namespace

TEST_SUITE("netcfg") {
  TEST_CASE("preset files parse to the builders") {
    CHECK(load_netcfg(kPresets / "tinier-yolo.cfg") == preset_tinier_yolo());
    CHECK(load_netcfg(kPresets / "tinier-yolo-h.cfg") == preset_tinier_yolo_halved(true));
    CHECK(load_netcfg(kPresets / "dupnet.cfg") == preset_dupnet());
    CHECK(load_netcfg(kPresets / "dupnet-l.cfg") == preset_dupnet_l());
    const NetworkSpec t = load_netcfg(kPresets / "tinier-yolo.cfg");
    CHECK(t.conv_indices().size() == 9);
    CHECK(t.layers.back().kind == LayerKind::detect);
    CHECK(t.find("conv9")->c_out == 30);
  }

  TEST_CASE("round trip on every preset") {
    for (const auto& entry : std::filesystem::directory_iterator(kPresets)) {
      if (entry.path().extension() != ".cfg") continue;
      CAPTURE(entry.path().string());
      const NetworkSpec s = load_netcfg(entry.path());
      const std::string text = serialize_netcfg(s);
      CHECK(parse_netcfg(text) == s);
      CHECK(serialize_netcfg(parse_netcfg(text)) == text);
    }
    const NetworkSpec d = parse_netcfg(serialize_netcfg(preset_dupnet()));
    CHECK(d.find("conv6")->d_w == 4);
    CHECK(d.find("conv2")->d_x == 4);
    CHECK(std::abs(analyze(d).total_weight_kb - 36.9) <= 0.05);
  }

  TEST_CASE("errors") {
    CHECK(parse_error_of("") == "no [net] section");
    CHECK(parse_error_of("# only a comment\n") == "no [net] section");
    const std::string net = "[net]\nwidth=8\nheight=8\nchannels=6\n";
    const std::string msg = parse_error_of(net + "[conv]\nfilters=4\nsize=3\npad=1\ndup_w=4\n");
    CHECK(msg.find("dup_w=4") != std::string::npos);
    CHECK(msg.find("6") != std::string::npos);
    CHECK_THROWS_AS(parse_netcfg(net + "[conv]\nfilters=4\nsize=3\npad=1\ndup_w=4\n"), ShapeError);
    try {
      parse_netcfg(net + "[conv]\nfilters=4\nbogus=1\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 7);
    }
    CHECK_THROWS_AS(parse_netcfg(net + "[conv]\nfilters=4\na_bits=3\n"), ParseError);
    CHECK_THROWS_AS(parse_netcfg(net + "[maxpool]\nsize=0\n"), ParseError);
    CHECK_THROWS_AS(parse_netcfg(net + "[conv]\nfilters=4\n[detect]\nanchors=1,1\n[conv]\nfilters=2\n"), ParseError);
    CHECK_THROWS_AS(parse_netcfg(net + "[pool]\n"), ParseError);
    CHECK_THROWS_AS(parse_netcfg(net + "[conv]\nfilters\n"), ParseError);
    CHECK_THROWS_AS(parse_netcfg(net + "[conv]\nfilters=-1\n"), ParseError);
    CHECK_THROWS_AS(parse_netcfg(net + "[conv]\nfilters=4\n[detect]\nanchors=1,1,2\nclasses=1\n"), ParseError);
    // Head channel count must match anchors * (5 + classes).
    CHECK_THROWS_AS(parse_netcfg(net + "[conv]\nfilters=4\n[detect]\nanchors=1,1\nclasses=1\n"), ShapeError);
  }

  TEST_CASE("malformed text never escapes the error hierarchy") {
    const std::string base = read_text(kPresets / "dupnet.cfg");
    Rng rng(127);
    const std::string alphabet = "[]=#,\n 0123456789abcdefghijklmnopqrstuvwxyz_-.";
    int parsed = 0, rejected = 0;
    for (int trial = 0; trial < 400; ++trial) {
      std::string text = base;
      const int edits = static_cast<int>(rng.integer(1, 6));
      for (int e = 0; e < edits; ++e) {
        const auto pos = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(text.size()) - 1));
        switch (rng.integer(0, 2)) {
          case 0: text[pos] = alphabet[static_cast<std::size_t>(rng.integer(0, alphabet.size() - 1))]; break;
          case 1: text.erase(pos, static_cast<std::size_t>(rng.integer(1, 20))); break;
          default: text.insert(pos, 1, alphabet[static_cast<std::size_t>(rng.integer(0, alphabet.size() - 1))]);
        }
      }
      try {
        parse_netcfg(text);
        ++parsed;
      } catch (const Error&) {
        ++rejected;
      }
    }
    CHECK(parsed + rejected == 400);
    CHECK(rejected > 0);
  }
}

TEST_SUITE("weights_io") {
  TEST_CASE("save, load, save is the identity on bytes") {
    for (const NetworkSpec& spec : {small_net(1, 1), small_net(4, 1), small_net(1, 2), small_net(1, 1, 2),
                                    small_net(2, 1, 32)}) {
      const ExportedModel m = random_export(spec, 5);
      const auto bytes = save_weights(m);
      const ExportedModel back = load_weights(bytes, spec);
      CHECK(back == m);
      CHECK(save_weights(back) == bytes);
    }
  }

  TEST_CASE("dup-weight payloads shrink by exactly d_w") {
    for (std::size_t d : {2u, 4u, 8u}) {
      const ContainerSize plain = container_size(random_export(small_net(1, 1), 3));
      const ContainerSize dup = container_size(random_export(small_net(d, 1), 3));
      const std::uint64_t l2_plain = weight_payload_bytes(64 * 8 * 9);
      const std::uint64_t l2_dup = weight_payload_bytes(64 * 8 * 9 / d);
      CHECK(plain.weight_bytes - dup.weight_bytes == l2_plain - l2_dup);
      CHECK(l2_plain == d * l2_dup);
    }
  }

  TEST_CASE("dupnet container payload is the reported weight size") {
    const NetworkSpec spec = preset_dupnet();
    const ExportedModel m = export_model(init_model(spec, 1));
    const ContainerSize cs = container_size(m);
    CHECK(std::abs(static_cast<double>(cs.weight_bytes) / 1024.0 - 36.9) < 0.05);
    CHECK(cs.overhead_bytes > 0);
    CHECK(save_weights(m).size() == cs.total_bytes());
  }

  TEST_CASE("structured errors on malformed containers") {
    const NetworkSpec spec = small_net(4, 1);
    const auto bytes = save_weights(random_export(spec, 9));
    CHECK_THROWS_AS(load_weights(std::span(bytes).first(bytes.size() - 1), spec), FormatError);
    auto extra = bytes;
    extra.push_back(0);
    CHECK_THROWS_AS(load_weights(extra, spec), FormatError);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(load_weights(bad_magic, spec), FormatError);
    CHECK_THROWS_AS(load_weights(bytes, small_net(2, 1)), FormatError);
    CHECK_THROWS_AS(load_weights(bytes, small_net(1, 1)), FormatError);

    Rng rng(131);
    for (int trial = 0; trial < 300; ++trial) {
      auto b = bytes;
      if (rng.bernoulli(0.5)) {
        b.resize(static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(b.size()))));
      } else {
        for (int k = 0; k < 4; ++k)
          b[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(b.size()) - 1))] ^=
              static_cast<std::uint8_t>(rng.integer(1, 255));
      }
      try {
        load_weights(b, spec);
      } catch (const Error&) {
      }
    }
  }

  TEST_CASE("file round trip") {
    testutil::TempDir dir("weights");
    const NetworkSpec spec = small_net(1, 4);
    const ExportedModel m = random_export(spec, 21);
    write_weights_file(dir / "w.dupw", m);
    CHECK(read_weights_file(dir / "w.dupw", spec) == m);
    CHECK_THROWS(read_weights_file(dir / "missing.dupw", spec));
  }
}

TEST_SUITE("image_io") {
  TEST_CASE("pnm decoding") {
    const std::string ppm = "P6\n1 1\n255\n\xff\xff\xff";
    const IntTensor w = decode_pnm(std::span(reinterpret_cast<const std::uint8_t*>(ppm.data()), ppm.size()));
    CHECK(w.shape() == Shape{1, 3, 1, 1});
    CHECK(w.vec() == std::vector<std::int32_t>{255, 255, 255});
    const std::vector<std::uint8_t> pgm = {'P', '5', '\n', '#', ' ', 'c', '\n', '2', ' ', '2', '\n',
                                           '2', '5', '5', '\n', 0, 64, 128, 255};
    const IntTensor g = decode_pnm(pgm);
    CHECK(g.shape() == Shape{1, 1, 2, 2});
    CHECK(g.vec() == std::vector<std::int32_t>{0, 64, 128, 255});
    CHECK(encode_pnm(g) == std::vector<std::uint8_t>({'P', '5', '\n', '2', ' ', '2', '\n', '2', '5', '5', '\n', 0,
                                                       64, 128, 255}));
  }

  TEST_CASE("pnm round trip and errors") {
    Rng rng(137);
    for (std::size_t c : {1u, 3u}) {
      const IntTensor img = testutil::random_codes(Shape{1, c, 5, 7}, rng, 0, 255);
      CHECK(decode_pnm(encode_pnm(img)) == img);
    }
    const auto enc = encode_pnm(testutil::random_codes(Shape{1, 1, 3, 3}, rng, 0, 255));
    CHECK_THROWS_AS(decode_pnm(std::span(enc).first(enc.size() - 1)), FormatError);
    const std::string p2 = "P2\n1 1\n255\n0";
    CHECK_THROWS_AS(decode_pnm(std::span(reinterpret_cast<const std::uint8_t*>(p2.data()), p2.size())), FormatError);
    const std::string deep = "P5\n1 1\n65535\n\0\0";
    CHECK_THROWS_AS(decode_pnm(std::span(reinterpret_cast<const std::uint8_t*>(deep.data()), deep.size())),
                    FormatError);
    for (int trial = 0; trial < 200; ++trial) {
      auto b = enc;
      b[static_cast<std::size_t>(rng.integer(0, 10))] = static_cast<std::uint8_t>(rng.integer(0, 255));
      try {
        decode_pnm(b);
      } catch (const Error&) {
      }
    }
  }

  TEST_CASE("raw tensor round trip is bit exact") {
    Rng rng(139);
    Tensor t = testutil::random_real(Shape{2, 3, 4, 5}, rng);
    for (double& v : t.data()) v = static_cast<float>(v);
    CHECK(decode_tensor_raw(encode_tensor_raw(t)) == t);
    testutil::TempDir dir("raw");
    save_tensor_raw(dir / "t.bin", t);
    CHECK(load_tensor_raw(dir / "t.bin") == t);
    auto bytes = encode_tensor_raw(t);
    bytes.pop_back();
    CHECK_THROWS_AS(decode_tensor_raw(bytes), FormatError);
    bytes = encode_tensor_raw(t);
    bytes[1] = 'X';
    CHECK_THROWS_AS(decode_tensor_raw(bytes), FormatError);
  }
}
