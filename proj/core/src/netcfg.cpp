#include "dupnet/netcfg.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dupnet {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_count(std::string_view v, std::size_t line, std::string_view key) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ParseError(line, std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

int parse_int(std::string_view v, std::size_t line, std::string_view key) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ParseError(line, std::string(key) + ": expected an integer, got '" + std::string(v) + "'");
  return out;
}

double parse_real(std::string_view v, std::size_t line, std::string_view key) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ParseError(line, std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  return out;
}

bool parse_flag(std::string_view v, std::size_t line, std::string_view key) {
  if (v == "0") return false;
  if (v == "1") return true;
  throw ParseError(line, std::string(key) + ": expected 0 or 1, got '" + std::string(v) + "'");
}

Activation parse_activation(std::string_view v, std::size_t line) {
  if (v == "leaky") return Activation::leaky;
  if (v == "linear") return Activation::linear;
  if (v == "quant") return Activation::quant;
  throw ParseError(line, "activation: expected leaky, linear or quant, got '" + std::string(v) + "'");
}

std::vector<Anchor> parse_anchors(std::string_view v, std::size_t line) {
  std::vector<double> nums;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    const auto comma = v.find(',', pos);
    const auto item = trim(v.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    if (item.empty()) throw ParseError(line, "anchors: empty entry");
    const double x = parse_real(item, line, "anchors");
    if (!(x > 0.0)) throw ParseError(line, "anchors: sizes must be positive");
    nums.push_back(x);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  if (nums.size() % 2 != 0) throw ParseError(line, "anchors: expected pw,ph pairs");
  std::vector<Anchor> out;
  for (std::size_t i = 0; i < nums.size(); i += 2) out.push_back(Anchor{nums[i], nums[i + 1]});
  return out;
}

std::string real_text(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

enum class Section { none, net, conv, maxpool, detect };

}  // namespace

NetworkSpec parse_netcfg(std::string_view text) {
  NetworkSpec spec;
  spec.classes = 1;
  Section sec = Section::none;
  bool have_net = false, have_detect = false;
  bool anchors_set = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(line_no, "unterminated section header");
      const auto name = trim(line.substr(1, line.size() - 2));
      if (have_detect) throw ParseError(line_no, "[detect] must be the last section");
      if (name == "net") {
        if (have_net) throw ParseError(line_no, "duplicate [net] section");
        if (!spec.layers.empty()) throw ParseError(line_no, "[net] must come before any layer");
        have_net = true;
        sec = Section::net;
        continue;
      }
      if (!have_net) throw ParseError(line_no, "no [net] section before layers");
      LayerSpec l;
      if (name == "conv") {
        sec = Section::conv;
        l.kind = LayerKind::conv;
      } else if (name == "maxpool") {
        sec = Section::maxpool;
        l.kind = LayerKind::maxpool;
        l.k = 2;
        l.stride = 2;
      } else if (name == "detect") {
        sec = Section::detect;
        l.kind = LayerKind::detect;
        have_detect = true;
      } else {
        throw ParseError(line_no, "unknown section [" + std::string(name) + "]");
      }
      spec.layers.push_back(l);
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected key=value");
    const auto key = trim(line.substr(0, eq));
    const auto val = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(line_no, "missing key");
    if (val.empty()) throw ParseError(line_no, std::string(key) + ": missing value");
    const auto unknown = [&] {
      return ParseError(line_no, "unknown key '" + std::string(key) + "' in this section");
    };

    switch (sec) {
      case Section::none:
        throw ParseError(line_no, "key outside of any section");
      case Section::net:
        if (key == "width") spec.in_w = parse_count(val, line_no, key);
        else if (key == "height") spec.in_h = parse_count(val, line_no, key);
        else if (key == "channels") spec.in_c = parse_count(val, line_no, key);
        else throw unknown();
        break;
      case Section::conv: {
        LayerSpec& l = spec.layers.back();
        if (key == "filters") l.c_out = parse_count(val, line_no, key);
        else if (key == "size") l.k = parse_count(val, line_no, key);
        else if (key == "stride") l.stride = parse_count(val, line_no, key);
        else if (key == "pad") l.pad = parse_count(val, line_no, key);
        else if (key == "a_bits") l.quant.a_bits = parse_int(val, line_no, key);
        else if (key == "w_bits") l.quant.w_bits = parse_int(val, line_no, key);
        else if (key == "dup_w") l.d_w = parse_count(val, line_no, key);
        else if (key == "dup_x") l.d_x = parse_count(val, line_no, key);
        else if (key == "bn") l.has_bn = parse_flag(val, line_no, key);
        else if (key == "activation") l.activation = parse_activation(val, line_no);
        else if (key == "clip_alpha") l.quant.clip_alpha = parse_real(val, line_no, key);
        else throw unknown();
        if (key == "clip_alpha" && !(l.quant.clip_alpha > 0.0 && std::isfinite(l.quant.clip_alpha)))
          throw ParseError(line_no, "clip_alpha must be positive");
        if (key == "a_bits" && !valid_act_bits(l.quant.a_bits))
          throw ParseError(line_no, "a_bits must be one of 1, 2, 4, 8, 32");
        if (key == "w_bits" && !valid_weight_bits(l.quant.w_bits))
          throw ParseError(line_no, "w_bits must be one of 1, 2, 3, 4, 8, 32");
        if ((key == "stride" || key == "size") && (key == "size" ? l.k : l.stride) == 0)
          throw ParseError(line_no, std::string(key) + " must be >= 1");
        break;
      }
      case Section::maxpool: {
        LayerSpec& l = spec.layers.back();
        if (key == "size") l.k = parse_count(val, line_no, key);
        else if (key == "stride") l.stride = parse_count(val, line_no, key);
        else throw unknown();
        if ((key == "size" ? l.k : l.stride) == 0) throw ParseError(line_no, std::string(key) + " must be >= 1");
        break;
      }
      case Section::detect:
        if (key == "anchors") {
          spec.anchors = parse_anchors(val, line_no);
          anchors_set = true;
        } else if (key == "classes") {
          spec.classes = parse_int(val, line_no, key);
          if (spec.classes < 1) throw ParseError(line_no, "classes must be >= 1");
        } else {
          throw unknown();
        }
        break;
    }
  }
  if (!have_net) throw ParseError(0, "no [net] section");
  if (spec.in_w == 0 || spec.in_h == 0 || spec.in_c == 0)
    throw ParseError(0, "[net] needs width, height and channels >= 1");
  if (spec.layers.empty()) throw ParseError(0, "no layers");
  if (have_detect && !anchors_set) throw ParseError(0, "[detect] needs anchors");
  resolve(spec);
  return spec;
}

NetworkSpec load_netcfg(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_netcfg(ss.str());
}

std::string serialize_netcfg(const NetworkSpec& spec) {
  std::string out = "[net]\n";
  out += "width=" + std::to_string(spec.in_w) + "\n";
  out += "height=" + std::to_string(spec.in_h) + "\n";
  out += "channels=" + std::to_string(spec.in_c) + "\n";
  for (const LayerSpec& l : spec.layers) {
    out += "\n";
    switch (l.kind) {
      case LayerKind::conv:
        out += "[conv]\n";
        out += "filters=" + std::to_string(l.c_out) + "\n";
        out += "size=" + std::to_string(l.k) + "\n";
        out += "stride=" + std::to_string(l.stride) + "\n";
        out += "pad=" + std::to_string(l.pad) + "\n";
        out += "a_bits=" + std::to_string(l.quant.a_bits) + "\n";
        out += "w_bits=" + std::to_string(l.quant.w_bits) + "\n";
        out += "dup_w=" + std::to_string(l.d_w) + "\n";
        out += "dup_x=" + std::to_string(l.d_x) + "\n";
        out += std::string("bn=") + (l.has_bn ? "1" : "0") + "\n";
        out += std::string("activation=") + to_string(l.activation) + "\n";
        if (l.quant.clip_alpha != kDefaultClipAlpha) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.17g", l.quant.clip_alpha);
          out += std::string("clip_alpha=") + buf + "\n";
        }
        break;
      case LayerKind::maxpool:
        out += "[maxpool]\n";
        out += "size=" + std::to_string(l.k) + "\n";
        out += "stride=" + std::to_string(l.stride) + "\n";
        break;
      case LayerKind::detect: {
        out += "[detect]\n";
        std::string a;
        for (std::size_t i = 0; i < spec.anchors.size(); ++i) {
          if (i) a += ", ";
          a += real_text(spec.anchors[i].pw) + "," + real_text(spec.anchors[i].ph);
        }
        out += "anchors=" + a + "\n";
        out += "classes=" + std::to_string(spec.classes) + "\n";
        break;
      }
    }
  }
  return out;
}

}  // namespace dupnet
