#include "protomask/maskgen.hpp"

#include <algorithm>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace protomask::maskgen {

std::string to_string(MaskSource s) {
  switch (s) {
    case MaskSource::Toy: return "toy";
    case MaskSource::ExternalSam2: return "sam2";
    case MaskSource::ExternalSlit: return "slit";
  }
  return "toy";
}

MaskSource mask_source_from_string(const std::string& s) {
  if (s == "toy") return MaskSource::Toy;
  if (s == "sam2") return MaskSource::ExternalSam2;
  if (s == "slit") return MaskSource::ExternalSlit;
  fail("unknown mask source tag: " + s);
}

SegmentationMask make_segmentation_mask(BinaryMask mask) {
  SegmentationMask out;
  size_t nz = mask.count_nonzero();
  require(nz > 0, "segmentation mask has no nonzero pixels");
  out.area_fraction = double(nz) / (double(mask.height) * mask.width);
  out.bbox = tight_bbox(mask);
  out.mask = std::move(mask);
  return out;
}

void sort_by_area(MaskSet& set) {
  std::stable_sort(set.masks.begin(), set.masks.end(),
                   [](const SegmentationMask& a, const SegmentationMask& b) {
                     return a.area_fraction > b.area_fraction;
                   });
}

MaskSet contours_to_masks(const std::vector<double>& contour_image, int height, int width,
                          double threshold, int dilation) {
  require(height > 0 && width > 0 && contour_image.size() == size_t(height) * width,
          "contours_to_masks: bad image shape");
  require(threshold > 0.0 && threshold < 1.0, "contours_to_masks: threshold must be in (0,1)");
  require(dilation >= 1 && dilation % 2 == 1, "contours_to_masks: dilation must be odd >= 1");

  BinaryMask contour(height, width);
  for (int i = 0; i < height * width; ++i) contour.data[size_t(i)] = contour_image[size_t(i)] >= threshold;

  // Square-kernel dilation of the contour pixels.
  BinaryMask dilated(height, width);
  const int r = dilation / 2;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (!contour.at(y, x)) continue;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          int ny = y + dy, nx = x + dx;
          if (ny >= 0 && ny < height && nx >= 0 && nx < width) dilated.at(ny, nx) = 1;
        }
    }

  // 4-connected components of the non-contour region.
  std::vector<int> label(size_t(height) * width, -1);
  MaskSet out;
  out.source = MaskSource::ExternalSlit;
  int next_label = 0;
  for (int sy = 0; sy < height; ++sy)
    for (int sx = 0; sx < width; ++sx) {
      if (dilated.at(sy, sx) || label[size_t(sy) * width + sx] >= 0) continue;
      std::vector<std::pair<int, int>> pixels;
      std::deque<std::pair<int, int>> queue{{sy, sx}};
      label[size_t(sy) * width + sx] = next_label;
      while (!queue.empty()) {
        auto [y, x] = queue.front();
        queue.pop_front();
        pixels.emplace_back(y, x);
        const int ny[4] = {y - 1, y + 1, y, y};
        const int nx[4] = {x, x, x - 1, x + 1};
        for (int k = 0; k < 4; ++k) {
          if (ny[k] < 0 || ny[k] >= height || nx[k] < 0 || nx[k] >= width) continue;
          size_t idx = size_t(ny[k]) * width + nx[k];
          if (dilated.data[idx] || label[idx] >= 0) continue;
          label[idx] = next_label;
          queue.emplace_back(ny[k], nx[k]);
        }
      }
      ++next_label;
      if (pixels.size() < 4) continue;  // dilation artifact
      BinaryMask m(height, width);
      for (auto [y, x] : pixels) m.at(y, x) = 1;
      out.masks.push_back(make_segmentation_mask(std::move(m)));
    }
  require(!out.masks.empty(), "contours_to_masks: contour covers the whole image, no components");
  sort_by_area(out);
  return out;
}

MaskSet toy_grid_segmenter(const std::string& image_id, int height, int width, int rows, int cols,
                           uint64_t jitter_seed, double jitter_amount) {
  require(rows >= 1 && cols >= 1, "toy_grid_segmenter: rows*cols must be >= 1");
  require(height >= rows && width >= cols, "toy_grid_segmenter: grid finer than image");
  Rng rng(Rng::mix(Rng::hash_str(image_id), jitter_seed));

  auto boundaries = [&](int extent, int cells) {
    std::vector<int> b(size_t(cells) + 1);
    b[0] = 0;
    b[size_t(cells)] = extent;
    double cell = double(extent) / cells;
    for (int i = 1; i < cells; ++i) {
      double j = rng.uniform(-jitter_amount, jitter_amount) * cell;
      int pos = int(std::lround(i * cell + j));
      b[size_t(i)] = std::clamp(pos, b[size_t(i) - 1] + 1, extent - (cells - i));
    }
    return b;
  };

  std::vector<int> ys = boundaries(height, rows);
  std::vector<int> xs = boundaries(width, cols);

  MaskSet out;
  out.source = MaskSource::Toy;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      BinaryMask m(height, width);
      for (int y = ys[size_t(r)]; y < ys[size_t(r) + 1]; ++y)
        for (int x = xs[size_t(c)]; x < xs[size_t(c) + 1]; ++x) m.at(y, x) = 1;
      out.masks.push_back(make_segmentation_mask(std::move(m)));
    }
  sort_by_area(out);
  return out;
}

void save_mask_archive_meta(const std::string& dir, MaskSource source,
                            const std::string& params_json) {
  fs::create_directories(dir);
  json meta;
  meta["source"] = to_string(source);
  meta["params"] = json::parse(params_json);
  std::ofstream out(fs::path(dir) / "meta.json", std::ios::binary);
  require(out.good(), "cannot write mask archive meta.json in " + dir);
  out << meta.dump(2) << "\n";
}

void save_masks(const std::string& dir, const std::string& image_id, const MaskSet& set) {
  fs::path idir = fs::path(dir) / image_id;
  fs::create_directories(idir);
  for (size_t k = 0; k < set.masks.size(); ++k)
    write_mask_png((idir / ("mask_" + std::to_string(k) + ".png")).string(), set.masks[k].mask);
}

MaskSet load_external_masks(const std::string& dir, const std::string& image_id, int image_height,
                            int image_width) {
  fs::path idir = fs::path(dir) / image_id;
  require(fs::exists(idir), "mask archive has no entry for image id '" + image_id + "' in " + dir);

  MaskSet out;
  out.source = MaskSource::ExternalSam2;
  fs::path meta_path = fs::path(dir) / "meta.json";
  if (fs::exists(meta_path)) {
    std::ifstream in(meta_path);
    json meta = json::parse(in);
    if (meta.contains("source")) out.source = mask_source_from_string(meta["source"].get<std::string>());
  }

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(idir))
    if (e.path().extension() == ".png") files.push_back(e.path());
  // numeric-aware order so mask_10 follows mask_9 (area ties keep file rank)
  auto file_rank = [](const fs::path& p) {
    std::string stem = p.stem().string();
    size_t digits = stem.find_last_not_of("0123456789") + 1;
    return digits < stem.size() ? std::stoll(stem.substr(digits)) : (long long)-1;
  };
  std::sort(files.begin(), files.end(), [&](const fs::path& a, const fs::path& b) {
    long long ra = file_rank(a), rb = file_rank(b);
    return ra != rb ? ra < rb : a < b;
  });
  require(!files.empty(), "empty mask archive for image id '" + image_id + "'");

  int h = -1, w = -1;
  for (const fs::path& f : files) {
    BinaryMask m = read_mask_png(f.string());
    if (h < 0) {
      h = m.height;
      w = m.width;
    } else {
      require(m.height == h && m.width == w,
              "mask archive for '" + image_id + "' mixes mask shapes (" + f.filename().string() + ")");
    }
    if (m.height != image_height || m.width != image_width)
      m = resize_nearest(m, image_height, image_width);
    if (m.count_nonzero() == 0) {
      std::cerr << "warning: dropping empty mask " << f << "\n";
      continue;
    }
    out.masks.push_back(make_segmentation_mask(std::move(m)));
  }
  require(!out.masks.empty(), "mask archive for '" + image_id + "' contains only empty masks");
  sort_by_area(out);
  return out;
}

MaskSet with_full_frame(MaskSet set) {
  require(!set.masks.empty(), "with_full_frame: empty mask set");
  BinaryMask full(set.height(), set.width(), 1);
  set.masks.insert(set.masks.begin(), make_segmentation_mask(std::move(full)));
  sort_by_area(set);  // area 1.0 stays first; stable for ties
  return set;
}

std::vector<double> rank_mean_areas(const std::vector<std::vector<double>>& areas_per_image) {
  size_t max_rank = 0;
  for (const auto& a : areas_per_image) max_rank = std::max(max_rank, a.size());
  std::vector<double> means(max_rank, 0.0);
  for (size_t r = 0; r < max_rank; ++r) {
    double sum = 0.0;
    for (const auto& a : areas_per_image) sum += r < a.size() ? a[r] : 0.0;
    means[r] = sum / double(areas_per_image.size());
  }
  return means;
}

int select_view_count_from_areas(const std::vector<std::vector<double>>& areas_per_image,
                                 double size_threshold) {
  require(!areas_per_image.empty(), "select_view_count: no mask sets");
  int count = 0;
  for (double mean : rank_mean_areas(areas_per_image))
    if (mean > size_threshold) ++count;
  return std::max(count, 1);
}

int select_view_count(const std::vector<MaskSet>& dataset_masksets, double size_threshold) {
  require(!dataset_masksets.empty(), "select_view_count: no mask sets");
  std::vector<std::vector<double>> areas;
  areas.reserve(dataset_masksets.size());
  for (const MaskSet& set : dataset_masksets) {
    std::vector<double> a;
    a.reserve(set.masks.size());
    for (const SegmentationMask& m : set.masks) a.push_back(m.area_fraction);
    areas.push_back(std::move(a));
  }
  return select_view_count_from_areas(areas, size_threshold);
}

ViewBatch make_views(const Image& image, const MaskSet& masks, int count,
                     const ViewOptions& opts) {
  require(count >= 1, "make_views: count must be >= 1");
  ViewBatch out;
  out.views.reserve(size_t(count));
  int available = std::min<int>(count, int(masks.masks.size()));
  for (int i = 0; i < available; ++i) {
    const SegmentationMask& m = masks.masks[size_t(i)];
    Image patch = crop(image, m.bbox);
    if (opts.apply_mask_interior) {
      BinaryMask interior = crop(m.mask, m.bbox);
      for (int c = 0; c < patch.channels; ++c)
        for (int y = 0; y < patch.height; ++y)
          for (int x = 0; x < patch.width; ++x)
            if (!interior.at(y, x)) patch.at(c, y, x) = 0.0;
    }
    out.views.push_back(resize_bilinear(patch, opts.view_height, opts.view_width));
    out.valid.push_back(1);
    out.provenance.push_back(m.bbox);
  }
  for (int i = available; i < count; ++i) {
    out.views.emplace_back(3, opts.view_height, opts.view_width, 0.0);
    out.valid.push_back(0);
    out.provenance.push_back(Box{0, 0, 0, 0});
  }
  return out;
}

double mask_object_overlap(const SegmentationMask& mask, const BinaryMask& object_mask) {
  require(mask.mask.height == object_mask.height && mask.mask.width == object_mask.width,
          "mask_object_overlap: shape mismatch");
  size_t inter = 0, total = 0;
  for (size_t i = 0; i < mask.mask.data.size(); ++i) {
    if (!mask.mask.data[i]) continue;
    ++total;
    inter += object_mask.data[i] != 0;
  }
  require(total > 0, "mask_object_overlap: empty mask");
  return double(inter) / double(total);
}

double mask_consistency(const data::DatasetManifest& manifest,
                        const std::vector<MaskSet>& masksets) {
  require(manifest.entries.size() == masksets.size(),
          "mask_consistency: maskset count != manifest entry count");

  using Signature = std::set<int>;
  // class -> per-image sets of signatures
  std::map<int, std::vector<std::set<Signature>>> per_class;
  bool any_visible_part = false;

  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    const data::ManifestEntry& e = manifest.entries[i];
    require(e.parts.has_value(), "mask_consistency: entry " + std::to_string(i) + " has no parts");
    std::set<Signature> sigs;
    for (const SegmentationMask& m : masksets[i].masks) {
      Signature sig;
      for (const data::PartKeypoint& p : *e.parts) {
        if (!p.visible) continue;
        any_visible_part = true;
        if (p.y >= 0 && p.y < m.mask.height && p.x >= 0 && p.x < m.mask.width &&
            m.mask.at(p.y, p.x))
          sig.insert(p.id);
      }
      if (!sig.empty()) sigs.insert(std::move(sig));
    }
    per_class[e.label].push_back(std::move(sigs));
  }
  require(any_visible_part, "mask_consistency: no visible parts anywhere");

  double total = 0.0;
  size_t n_terms = 0;
  for (const auto& [cls, images] : per_class) {
    std::set<Signature> observed;
    for (const auto& sigs : images) observed.insert(sigs.begin(), sigs.end());
    for (const Signature& sig : observed) {
      size_t hits = 0;
      for (const auto& sigs : images) hits += sigs.count(sig) != 0;
      total += double(hits) / double(images.size());
      ++n_terms;
    }
  }
  if (n_terms == 0) return 0.0;
  return 100.0 * total / double(n_terms);
}

}  // namespace protomask::maskgen
