#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "textcanvas/types.hpp"

namespace textcanvas::data {

struct Sample {
  Image image;          // [-1,1]
  std::string caption;  // nonempty
  int class_id = -1;    // synthetic only; -1 for manifest data
};

struct Dataset {
  std::vector<Sample> samples;
  int image_size = 0;
  int num_colors = 0;  // 0 when loaded from a manifest
  int num_shapes = 0;

  std::size_t size() const { return samples.size(); }
};

struct SynthConfig {
  // color name -> RGB in [-1,1]
  std::vector<std::pair<std::string, std::array<double, 3>>> colors = {
      {"red", {1, -1, -1}},
      {"green", {-1, 1, -1}},
      {"blue", {-1, -1, 1}},
      {"yellow", {1, 1, -1}}};
  std::vector<std::string> shapes = {"circle", "square", "triangle"};
  int image_size = 32;
  int samples_per_class = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Raster one (color, shape) class per sample on a neutral background with
/// seeded position/scale jitter and a templated caption. Deterministic in
/// (cfg, seed) and independent of generation order: every sample derives its
/// own seed.
Dataset generate_synthetic(const SynthConfig& cfg);

/// True when the named color dominates the mean channels of the image
/// (for yellow: red and green both above blue).
bool color_dominant(const Image& image, const std::string& color_name);

/// Find the color word a caption mentions, or empty when none found.
std::string caption_color_word(const std::string& caption,
                               const SynthConfig& cfg);

/// Parse TSV lines `relative_image_path<TAB>caption`, load and resize
/// referenced images to image_size, map to [-1,1].
Dataset load_manifest(const std::string& manifest_path, int image_size);

/// Write dataset images plus a manifest.tsv under dir; returns manifest path.
std::string write_manifest(const Dataset& dataset, const std::string& dir);

}  // namespace textcanvas::data
