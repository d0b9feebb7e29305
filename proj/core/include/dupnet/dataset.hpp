#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dupnet/detect.hpp"
#include "dupnet/tensor.hpp"

namespace dupnet {

struct Sample {
  IntTensor image;  // [1, c, h, w] 8-bit codes
  std::vector<GroundTruth> truths;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t size() const { return samples.size(); }
};

// Face-like ellipses with two dark eye dots on a noisy background, plus
// optional rectangle distractors. Boxes always lie fully inside the image.
struct SynthSpec {
  std::size_t num_images = 2000;
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t channels = 1;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  std::size_t min_size = 12;  // face width in pixels
  std::size_t max_size = 28;
  std::size_t max_distractors = 2;
  std::uint64_t seed = 1;

  void validate() const;
};

Dataset generate_dataset(const SynthSpec& spec);

// Label lines: "class cx cy w h", normalized to [0, 1].
std::string format_labels(const std::vector<GroundTruth>& truths);
std::vector<GroundTruth> parse_labels(std::string_view text);

// Writes img_NNNNN.pgm (or .ppm) plus img_NNNNN.txt per sample.
void write_dataset(const Dataset& d, const std::filesystem::path& dir);
// Reads every img_*.pgm/.ppm in name order with its label file.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace dupnet
