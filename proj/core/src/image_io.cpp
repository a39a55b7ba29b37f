#include "cbmauc/image_io.hpp"

#include <png.h>
#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "cbmauc/errors.hpp"

namespace cbmauc {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

void write_png_rgb(const std::string& path, const ImageU8& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.rgb.size() != static_cast<size_t>(img.width * img.height * 3))
    throw IoError("write_png_rgb: malformed image for " + path);
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng write failed for " + path);
  }
  png_init_io(png, fp.get());
  // fixed compression settings keep output byte-reproducible
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(img.height));
  for (int64_t y = 0; y < img.height; ++y)
    rows[static_cast<size_t>(y)] =
        const_cast<png_bytep>(img.rgb.data() + static_cast<size_t>(y * img.width * 3));
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageU8 read_png_rgb(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open for reading: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng read failed for " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  ImageU8 img;
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.rgb.resize(static_cast<size_t>(img.width * img.height * 3));
  std::vector<png_bytep> rows(static_cast<size_t>(img.height));
  for (int64_t y = 0; y < img.height; ++y)
    rows[static_cast<size_t>(y)] = img.rgb.data() + static_cast<size_t>(y * img.width * 3);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

ImageU8 to_u8(const Array& chw) {
  if (chw.ndim() != 3 || chw.dim(0) != 3)
    throw IoError("to_u8: expected (3,H,W) array, got " + shape_str(chw.shape()));
  ImageU8 img;
  img.height = chw.dim(1);
  img.width = chw.dim(2);
  img.rgb.resize(static_cast<size_t>(img.width * img.height * 3));
  int64_t hw = img.height * img.width;
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = chw[c * hw + y * img.width + x];
        v = std::min(1.0, std::max(0.0, v));
        img.at(y, x, c) = static_cast<uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

Array to_chw(const ImageU8& img) {
  Array a(Shape{3, img.height, img.width});
  int64_t hw = img.height * img.width;
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        a[c * hw + y * img.width + x] = static_cast<double>(img.at(y, x, c)) / 255.0;
  return a;
}

uint32_t crc32_bytes(const void* data, size_t n) {
  return static_cast<uint32_t>(
      crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

uint32_t crc32_file(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("crc32_file: cannot open " + path);
  uLong crc = crc32(0L, Z_NULL, 0);
  std::vector<unsigned char> buf(1 << 16);
  size_t got;
  while ((got = std::fread(buf.data(), 1, buf.size(), fp.get())) > 0)
    crc = crc32(crc, buf.data(), static_cast<uInt>(got));
  return static_cast<uint32_t>(crc);
}

Array bilinear_upsample(const Array& map, int64_t out_h, int64_t out_w) {
  if (map.ndim() != 2) throw IoError("bilinear_upsample: expected rank-2 map");
  int64_t h = map.dim(0), w = map.dim(1);
  Array out(Shape{out_h, out_w});
  // align-corners sampling; degenerate source dims broadcast
  for (int64_t y = 0; y < out_h; ++y) {
    double fy = (out_h > 1 && h > 1) ? static_cast<double>(y) * (h - 1) / (out_h - 1) : 0.0;
    int64_t y0 = static_cast<int64_t>(fy);
    int64_t y1 = std::min(y0 + 1, h - 1);
    double ty = fy - static_cast<double>(y0);
    for (int64_t x = 0; x < out_w; ++x) {
      double fx = (out_w > 1 && w > 1) ? static_cast<double>(x) * (w - 1) / (out_w - 1) : 0.0;
      int64_t x0 = static_cast<int64_t>(fx);
      int64_t x1 = std::min(x0 + 1, w - 1);
      double tx = fx - static_cast<double>(x0);
      double v = (1 - ty) * ((1 - tx) * map.at2(y0, x0) + tx * map.at2(y0, x1)) +
                 ty * ((1 - tx) * map.at2(y1, x0) + tx * map.at2(y1, x1));
      out.at2(y, x) = v;
    }
  }
  return out;
}

void heat_color(double t, uint8_t rgb[3]) {
  t = std::min(1.0, std::max(0.0, t));
  // stops: black, violet, red, orange, yellow
  static const double stops[5][3] = {
      {0, 0, 0}, {80, 0, 120}, {200, 30, 30}, {255, 140, 0}, {255, 255, 80}};
  double pos = t * 4.0;
  int i = std::min(3, static_cast<int>(pos));
  double f = pos - i;
  for (int c = 0; c < 3; ++c)
    rgb[c] = static_cast<uint8_t>(std::lround(stops[i][c] * (1 - f) + stops[i + 1][c] * f));
}

ImageU8 overlay_heatmap(const Array& image_chw, const Array& map_hw, double alpha) {
  ImageU8 base = to_u8(image_chw);
  if (map_hw.dim(0) != base.height || map_hw.dim(1) != base.width)
    throw IoError("overlay_heatmap: map size does not match image");
  for (int64_t y = 0; y < base.height; ++y)
    for (int64_t x = 0; x < base.width; ++x) {
      uint8_t hc[3];
      heat_color(map_hw.at2(y, x), hc);
      for (int c = 0; c < 3; ++c) {
        double v = alpha * hc[c] + (1.0 - alpha) * base.at(y, x, c);
        base.at(y, x, c) = static_cast<uint8_t>(std::lround(v));
      }
    }
  return base;
}

}  // namespace cbmauc
