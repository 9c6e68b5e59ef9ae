#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wps/core.hpp"

namespace wps {

using Rgb = std::array<std::uint8_t, 3>;

// PNG (any colour type) or JPEG, decoded to RGB in [0, 1].
ImageTensor read_image(const std::string& path);
void write_png_rgb(const std::string& path, const ImageTensor& image);

// Palette PNG whose indices are the label values.
void write_indexed_png(const std::string& path, const SemanticSegmentation& seg, const std::vector<Rgb>& palette);
SemanticSegmentation read_indexed_png(const std::string& path);

ImageTensor resize_bilinear(const ImageTensor& image, int height, int width);
SemanticSegmentation resize_nearest(const SemanticSegmentation& seg, int height, int width);

// Stable per-category colours; the last entry (index num_categories) is black background.
std::vector<Rgb> category_palette(int num_categories);

inline float quantize_unit(double v) {
  const double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<float>(std::lround(clamped * 255.0) / 255.0);
}

}  // namespace wps
