#include <algorithm>
#include <cmath>
#include <filesystem>

#include "protomask/data.hpp"

namespace fs = std::filesystem;

namespace protomask::data {
namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  double c = v * s;
  double hp = h * 6.0;
  double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) r = c, g = x;
  else if (hp < 2) r = x, g = c;
  else if (hp < 3) g = c, b = x;
  else if (hp < 4) g = x, b = c;
  else if (hp < 5) r = x, b = c;
  else r = c, b = x;
  double m = v - c;
  return Rgb{r + m, g + m, b + m};
}

enum class Shape { Circle, Square, Triangle, Diamond };

bool inside_shape(Shape s, double dx, double dy, double r) {
  switch (s) {
    case Shape::Circle:
      return dx * dx + dy * dy <= r * r;
    case Shape::Square:
      return std::max(std::fabs(dx), std::fabs(dy)) <= r * 0.9;
    case Shape::Triangle: {
      // apex up: spans dy in [-r, 0.75r]
      if (dy < -r || dy > 0.75 * r) return false;
      double t = (dy + r) / (1.75 * r);
      return std::fabs(dx) <= t * 0.95 * r;
    }
    case Shape::Diamond:
      return std::fabs(dx) + std::fabs(dy) <= r;
  }
  return false;
}

void draw_shape(Image& img, BinaryMask& mask, Shape s, double cx, double cy, double r, Rgb color) {
  int y0 = std::max(0, int(std::floor(cy - r - 1)));
  int y1 = std::min(img.height - 1, int(std::ceil(cy + r + 1)));
  int x0 = std::max(0, int(std::floor(cx - r - 1)));
  int x1 = std::min(img.width - 1, int(std::ceil(cx + r + 1)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (inside_shape(s, x - cx, y - cy, r)) {
        img.at(0, y, x) = color.r;
        img.at(1, y, x) = color.g;
        img.at(2, y, x) = color.b;
        mask.at(y, x) = 1;
      }
}

constexpr Shape kShapes[4] = {Shape::Circle, Shape::Square, Shape::Triangle, Shape::Diamond};

}  // namespace

ImageSample synthesize_sample(uint64_t seed, int classes, int cls, int index, int resolution) {
  require(classes >= 2, "synthetic dataset needs classes >= 2");
  require(resolution >= 16, "synthetic resolution < 16 produces degenerate views");
  require(cls >= 0 && cls < classes, "class index out of range");

  Rng rng(Rng::mix(Rng::mix(seed, uint64_t(cls)), uint64_t(index)));
  const int res = resolution;

  // Class recipe: body and head differ in both shape and hue across classes.
  Shape body_shape = kShapes[cls % 4];
  Shape head_shape = kShapes[(cls + 1) % 4];
  Rgb body_color = hsv_to_rgb(double(cls) / classes, 0.85, 0.85);
  Rgb head_color = hsv_to_rgb(double(cls) / classes + 0.37, 0.9, 0.95);
  Rgb accent_color = hsv_to_rgb(double(cls) / classes + 0.19, 0.75, 0.7);

  ImageSample s;
  s.image = Image(3, res, res);
  s.label = cls;

  // Textured background, class-independent.
  double base = rng.uniform(0.10, 0.22);
  double tint_r = rng.uniform(-0.03, 0.03), tint_g = rng.uniform(-0.03, 0.03);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      double n = rng.uniform(-0.05, 0.05);
      s.image.at(0, y, x) = std::clamp(base + tint_r + n, 0.0, 1.0);
      s.image.at(1, y, x) = std::clamp(base + tint_g + n, 0.0, 1.0);
      s.image.at(2, y, x) = std::clamp(base + n, 0.0, 1.0);
    }

  // The body is large and centred so that any grid cell of a coarse
  // segmentation still sees class-coloured object pixels.
  BinaryMask object(res, res);
  double body_r = res * rng.uniform(0.26, 0.32);
  double body_cx = res * rng.uniform(0.46, 0.54);
  double body_cy = res * rng.uniform(0.50, 0.58);
  body_cx = std::clamp(body_cx, body_r + 1, res - body_r - 2);
  body_cy = std::clamp(body_cy, body_r + 1, res - body_r - 2);

  double head_r = res * rng.uniform(0.10, 0.13);
  double ang = rng.uniform(-1.92, -1.22);  // roughly upward
  double head_cx = body_cx + std::cos(ang) * (body_r + head_r * 0.4);
  double head_cy = body_cy + std::sin(ang) * (body_r + head_r * 0.4);
  head_cx = std::clamp(head_cx, head_r + 1, res - head_r - 2);
  head_cy = std::clamp(head_cy, head_r + 1, res - head_r - 2);

  double acc_r = res * rng.uniform(0.06, 0.08);
  double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  double acc_cx = body_cx + side * (body_r + acc_r * 0.3);
  double acc_cy = body_cy + res * rng.uniform(-0.05, 0.08);
  acc_cx = std::clamp(acc_cx, acc_r + 1, res - acc_r - 2);
  acc_cy = std::clamp(acc_cy, acc_r + 1, res - acc_r - 2);

  draw_shape(s.image, object, body_shape, body_cx, body_cy, body_r, body_color);
  draw_shape(s.image, object, head_shape, head_cx, head_cy, head_r, head_color);
  draw_shape(s.image, object, Shape::Circle, acc_cx, acc_cy, acc_r, accent_color);

  s.object_mask = object;
  s.bbox = tight_bbox(object);
  s.parts = std::vector<PartKeypoint>{
      {0, int(std::lround(body_cx)), int(std::lround(body_cy)), true},
      {1, int(std::lround(head_cx)), int(std::lround(head_cy)), true},
      {2, int(std::lround(acc_cx)), int(std::lround(acc_cy)), true},
  };
  return s;
}

SyntheticResult generate_synthetic_dataset(const SyntheticOptions& opts,
                                           const std::string& out_dir) {
  require(opts.classes >= 2, "synthetic dataset needs classes >= 2");
  require(opts.per_class >= 1, "synthetic dataset needs per_class >= 1");
  require(opts.resolution >= 16, "synthetic resolution < 16 produces degenerate views");

  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "object_masks");

  auto emit_split = [&](const std::string& split, int count, uint64_t split_tag) {
    DatasetManifest m;
    m.class_count = opts.classes;
    m.split = split;
    m.base_dir = out_dir;
    for (int cls = 0; cls < opts.classes; ++cls)
      for (int i = 0; i < count; ++i) {
        ImageSample s = synthesize_sample(Rng::mix(opts.seed, split_tag), opts.classes, cls, i,
                                          opts.resolution);
        char id[64];
        std::snprintf(id, sizeof(id), "c%d_%s_%03d", cls, split.c_str(), i);
        ManifestEntry e;
        e.image = std::string("images/") + id + ".png";
        e.label = cls;
        e.bbox = s.bbox;
        e.object_mask = std::string("object_masks/") + id + ".png";
        e.parts = s.parts;
        write_image_png(m.resolve(e.image), s.image);
        write_mask_png(m.resolve(*e.object_mask), *s.object_mask);
        m.entries.push_back(std::move(e));
      }
    std::string path = (fs::path(out_dir) / (split + "_manifest.json")).string();
    save_manifest(m, path);
    return path;
  };

  SyntheticResult r;
  r.train_manifest = emit_split("train", opts.per_class, 0x7261696eULL);
  r.test_manifest = emit_split("test", opts.test_per_class, 0x74657374ULL);
  return r;
}

}  // namespace protomask::data
