#include "protomask/image.hpp"

#include <algorithm>
#include <cmath>

namespace protomask {

Box tight_bbox(const BinaryMask& mask) {
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y) {
    const uint8_t* row = mask.data.data() + size_t(y) * mask.width;
    for (int x = 0; x < mask.width; ++x) {
      if (row[x]) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  require(x1 >= 0, "tight_bbox: mask has no nonzero pixels");
  return Box{x0, y0, x1 + 1, y1 + 1};
}

static void check_box(int h, int w, const Box& b, const char* who) {
  require(b.x0 >= 0 && b.y0 >= 0 && b.x0 < b.x1 && b.y0 < b.y1 && b.x1 <= w && b.y1 <= h,
          std::string(who) + ": box out of bounds");
}

Image crop(const Image& img, const Box& box) {
  check_box(img.height, img.width, box, "crop");
  Image out(img.channels, box.height(), box.width());
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) = img.at(c, box.y0 + y, box.x0 + x);
  return out;
}

BinaryMask crop(const BinaryMask& mask, const Box& box) {
  check_box(mask.height, mask.width, box, "crop");
  BinaryMask out(box.height(), box.width());
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(y, x) = mask.at(box.y0 + y, box.x0 + x);
  return out;
}

std::vector<double> resize_bilinear_plane(const std::vector<double>& plane, int h, int w,
                                          int out_h, int out_w) {
  require(h > 0 && w > 0 && out_h > 0 && out_w > 0, "resize_bilinear: empty plane");
  std::vector<double> out(size_t(out_h) * out_w);
  const double sy = double(h) / out_h;
  const double sx = double(w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    int y0 = int(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, h - 1);
    int y1c = std::clamp(y0 + 1, 0, h - 1);
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      int x0 = int(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, w - 1);
      int x1c = std::clamp(x0 + 1, 0, w - 1);
      double top = plane[size_t(y0c) * w + x0c] * (1 - wx) + plane[size_t(y0c) * w + x1c] * wx;
      double bot = plane[size_t(y1c) * w + x0c] * (1 - wx) + plane[size_t(y1c) * w + x1c] * wx;
      out[size_t(oy) * out_w + ox] = top * (1 - wy) + bot * wy;
    }
  }
  return out;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  Image out(img.channels, out_h, out_w);
  const size_t plane = size_t(img.height) * img.width;
  for (int c = 0; c < img.channels; ++c) {
    std::vector<double> in(img.data.begin() + c * plane, img.data.begin() + (c + 1) * plane);
    std::vector<double> res = resize_bilinear_plane(in, img.height, img.width, out_h, out_w);
    std::copy(res.begin(), res.end(), out.data.begin() + size_t(c) * out_h * out_w);
  }
  return out;
}

BinaryMask resize_nearest(const BinaryMask& mask, int out_h, int out_w) {
  require(mask.height > 0 && mask.width > 0 && out_h > 0 && out_w > 0,
          "resize_nearest: empty mask");
  BinaryMask out(out_h, out_w);
  const double sy = double(mask.height) / out_h;
  const double sx = double(mask.width) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    int y = std::min(int((oy + 0.5) * sy), mask.height - 1);
    for (int ox = 0; ox < out_w; ++ox) {
      int x = std::min(int((ox + 0.5) * sx), mask.width - 1);
      out.at(oy, ox) = mask.at(y, x);
    }
  }
  return out;
}

}  // namespace protomask
