#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>

#include "protomask/image.hpp"

namespace protomask {
namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

// Decodes any 8/16-bit gray/palette/rgb/rgba PNG to 8-bit RGB or gray rows.
struct DecodedPng {
  int height = 0, width = 0, channels = 0;
  std::vector<uint8_t> pixels;  // row-major, interleaved
};

DecodedPng decode(const std::string& path, bool want_gray) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  require(fp != nullptr, "cannot open PNG: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, "libpng: read struct alloc failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("libpng: info struct alloc failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("libpng: failed to decode " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_packing(png);
  int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (want_gray) {
    if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  } else {
    if (!(color & PNG_COLOR_MASK_COLOR)) png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);

  DecodedPng out;
  out.height = int(png_get_image_height(png, info));
  out.width = int(png_get_image_width(png, info));
  out.channels = want_gray ? 1 : 3;
  size_t rowbytes = png_get_rowbytes(png, info);
  require(rowbytes == size_t(out.width) * out.channels, "libpng: unexpected row size in " + path);
  out.pixels.resize(size_t(out.height) * rowbytes);
  std::vector<png_bytep> rows(size_t(out.height), nullptr);
  for (int y = 0; y < out.height; ++y) rows[size_t(y)] = out.pixels.data() + size_t(y) * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void encode(const std::string& path, int h, int w, int channels, const uint8_t* pixels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  require(fp != nullptr, "cannot write PNG: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, "libpng: write struct alloc failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("libpng: info struct alloc failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("libpng: failed to encode " + path);
  }
  png_init_io(png, fp.get());
  int type = channels == 1   ? PNG_COLOR_TYPE_GRAY
             : channels == 3 ? PNG_COLOR_TYPE_RGB
                             : PNG_COLOR_TYPE_RGBA;
  // Fixed compression settings so identical pixels give identical bytes.
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(size_t(h), nullptr);
  for (int y = 0; y < h; ++y)
    rows[size_t(y)] = const_cast<uint8_t*>(pixels) + size_t(y) * w * channels;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

uint8_t to_byte(double v) {
  double x = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return uint8_t(std::lround(x * 255.0));
}

}  // namespace

Image read_image_png(const std::string& path) {
  DecodedPng d = decode(path, /*want_gray=*/false);
  Image img(3, d.height, d.width);
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = d.pixels[(size_t(y) * d.width + x) * 3 + c] / 255.0;
  return img;
}

void write_image_png(const std::string& path, const Image& img) {
  require(img.channels == 3, "write_image_png: expected 3 channels");
  std::vector<uint8_t> pixels(size_t(img.height) * img.width * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        pixels[(size_t(y) * img.width + x) * 3 + c] = to_byte(img.at(c, y, x));
  encode(path, img.height, img.width, 3, pixels.data());
}

BinaryMask read_mask_png(const std::string& path) {
  DecodedPng d = decode(path, /*want_gray=*/true);
  BinaryMask mask(d.height, d.width);
  for (size_t i = 0; i < d.pixels.size(); ++i) mask.data[i] = d.pixels[i] ? 1 : 0;
  return mask;
}

void write_mask_png(const std::string& path, const BinaryMask& mask) {
  std::vector<uint8_t> pixels(mask.data.size());
  for (size_t i = 0; i < pixels.size(); ++i) pixels[i] = mask.data[i] ? 255 : 0;
  encode(path, mask.height, mask.width, 1, pixels.data());
}

void write_rgba_png(const std::string& path, const Image& img, const std::vector<double>& alpha) {
  require(img.channels == 3, "write_rgba_png: expected 3 channels");
  require(alpha.size() == size_t(img.height) * img.width, "write_rgba_png: alpha size mismatch");
  std::vector<uint8_t> pixels(size_t(img.height) * img.width * 4);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      size_t o = (size_t(y) * img.width + x) * 4;
      for (int c = 0; c < 3; ++c) pixels[o + c] = to_byte(img.at(c, y, x));
      pixels[o + 3] = to_byte(alpha[size_t(y) * img.width + x]);
    }
  encode(path, img.height, img.width, 4, pixels.data());
}

}  // namespace protomask
