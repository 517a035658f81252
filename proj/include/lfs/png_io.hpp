#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lfs {

/// 8-bit image buffer, row-major [h][w][c], channels 1 (gray) or 3 (RGB).
struct PngImage {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Decodes an 8-bit PNG; palette, 16-bit and alpha variants are folded down
/// to gray or RGB.
PngImage read_png(const std::string& path);

void write_png(const std::string& path, const PngImage& img);

}  // namespace lfs
