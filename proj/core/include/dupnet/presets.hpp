#pragma once

#include <string>
#include <vector>

#include "dupnet/network.hpp"

namespace dupnet {

// Five face-shaped priors (grid units) shared by the 608x608 presets.
std::vector<Anchor> default_face_anchors();

// 608x608x3, 3->8->16->32->64->128->256->512, 1x1 512->512, 3x3 head to
// A*(5+C) channels. Conv1 a8w1, Conv2-9 a2w1.
NetworkSpec preset_tinier_yolo();

// Conv6 128->128, Conv7 128->256, Conv8 1x1 256->256, head 256 -> 30.
// `quantized` selects a8w1 / a2w1 everywhere, otherwise full precision.
NetworkSpec preset_tinier_yolo_halved(bool quantized = true);

// Progressive layer-wise quantization of the halved network.
// row 1: full precision; 2: Conv4-8; 3: Conv2-8; 4: Conv1-8; 5: all.
// For networks with n convs the middle set is conv4..conv(n-1).
NetworkSpec sensitivity_variant(const NetworkSpec& base, int row);
inline NetworkSpec quantization_row(int row) { return sensitivity_variant(preset_tinier_yolo_halved(false), row); }
std::string sensitivity_label(int row, std::size_t convs);

// Progressive feature duplication on the quantized halved network.
// row 1: none; 2: Conv2 x4, Conv3 x2; 3: also Conv1 x4; 4: also Conv9 x2.
NetworkSpec feature_dup_variant(int row);

// dup_w = d on Conv6-Conv8 of the quantized halved network.
NetworkSpec weight_dup_variant(std::size_t d);

// feature_dup_variant(2) (resp. 4) with dup_w = 4 on Conv6-Conv8.
NetworkSpec preset_dupnet();
NetworkSpec preset_dupnet_l();

// Divides the filter count of the named conv layers by `factor` and re-resolves.
NetworkSpec slim_filters(const NetworkSpec& spec, const std::vector<std::string>& layers, std::size_t factor);

// Sets d_w on the named layers.
NetworkSpec with_weight_dup(NetworkSpec spec, const std::vector<std::string>& layers, std::size_t d);
// Sets d_x on the named layers.
NetworkSpec with_feature_dup(NetworkSpec spec, const std::vector<std::string>& layers, std::size_t d);

}  // namespace dupnet
