#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protomask/common.hpp"

namespace protomask {

// Dense image, CHW layout, values in [0,1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(size_t(c) * h * w, fill) {}

  double& at(int c, int y, int x) { return data[(size_t(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(size_t(c) * height + y) * width + x]; }

  bool operator==(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width && data == o.data;
  }
};

// Binary mask, HW layout, 0/1.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int h, int w, uint8_t fill = 0) : height(h), width(w), data(size_t(h) * w, fill) {}

  uint8_t& at(int y, int x) { return data[size_t(y) * width + x]; }
  uint8_t at(int y, int x) const { return data[size_t(y) * width + x]; }

  size_t count_nonzero() const {
    size_t n = 0;
    for (uint8_t v : data) n += (v != 0);
    return n;
  }

  bool operator==(const BinaryMask& o) const {
    return height == o.height && width == o.width && data == o.data;
  }
};

// Pixel box, half-open: x in [x0,x1), y in [y0,y1).
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long long area() const { return (long long)width() * height(); }
  bool operator==(const Box& o) const {
    return x0 == o.x0 && y0 == o.y0 && x1 == o.x1 && y1 == o.y1;
  }
};

// Tight bounding box of nonzero pixels; throws on an all-zero mask.
Box tight_bbox(const BinaryMask& mask);

Image crop(const Image& img, const Box& box);
BinaryMask crop(const BinaryMask& mask, const Box& box);

// Bilinear resampling, half-pixel-centre convention, edge-clamped.
Image resize_bilinear(const Image& img, int out_h, int out_w);
std::vector<double> resize_bilinear_plane(const std::vector<double>& plane, int h, int w,
                                          int out_h, int out_w);
// Nearest-neighbour resampling; label-preserving, used for masks.
BinaryMask resize_nearest(const BinaryMask& mask, int out_h, int out_w);

// PNG I/O (8-bit). Images are quantised to 1/255 steps on write.
Image read_image_png(const std::string& path);
void write_image_png(const std::string& path, const Image& img);
BinaryMask read_mask_png(const std::string& path);  // nonzero = 1
void write_mask_png(const std::string& path, const BinaryMask& mask);
// RGBA overlay: RGB from img, alpha channel from `alpha` in [0,1].
void write_rgba_png(const std::string& path, const Image& img, const std::vector<double>& alpha);

}  // namespace protomask
