#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "dupnet/network.hpp"

namespace dupnet {

// INI-style architecture text:
//
//   [net]      width, height, channels
//   [conv]     filters, size, stride, pad, a_bits, w_bits, dup_w, dup_x, bn, activation
//   [maxpool]  size, stride
//   [detect]   anchors (pw,ph pairs in grid units), classes
//
// `pad` is a pixel count. '#' starts a comment. Unknown keys are errors.
// The result is resolved; syntax errors throw ParseError with the line,
// chain errors throw ShapeError naming both layers.
NetworkSpec parse_netcfg(std::string_view text);
NetworkSpec load_netcfg(const std::filesystem::path& path);

// Canonical text: every key, fixed order. parse_netcfg(serialize_netcfg(s)) == s.
std::string serialize_netcfg(const NetworkSpec& spec);

}  // namespace dupnet
