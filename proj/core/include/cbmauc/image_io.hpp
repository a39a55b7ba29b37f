#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cbmauc/array.hpp"

namespace cbmauc {

// 8-bit interleaved RGB raster.
struct ImageU8 {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel

  uint8_t& at(int64_t y, int64_t x, int c) {
    return rgb[static_cast<size_t>((y * width + x) * 3 + c)];
  }
  uint8_t at(int64_t y, int64_t x, int c) const {
    return rgb[static_cast<size_t>((y * width + x) * 3 + c)];
  }
};

void write_png_rgb(const std::string& path, const ImageU8& img);
ImageU8 read_png_rgb(const std::string& path);

// (3,H,W) array in [0,1] <-> 8-bit raster; values quantized by round(255*v).
ImageU8 to_u8(const Array& chw);
Array to_chw(const ImageU8& img);

uint32_t crc32_bytes(const void* data, size_t n);
uint32_t crc32_file(const std::string& path);

// Bilinear upsampling of a single-channel map to (out_h, out_w).
Array bilinear_upsample(const Array& map, int64_t out_h, int64_t out_w);

// Five-stop heat colormap (black-violet-red-orange-yellow), t in [0,1].
void heat_color(double t, uint8_t rgb[3]);

// Blend a [0,1] heat map over an image: alpha*colormap(map) + (1-alpha)*img.
ImageU8 overlay_heatmap(const Array& image_chw, const Array& map_hw, double alpha);

}  // namespace cbmauc
