#pragma once

#include <optional>
#include <string>
#include <vector>

#include "protomask/image.hpp"

namespace protomask::data {

struct PartKeypoint {
  int id = 0;
  int x = 0;
  int y = 0;
  bool visible = false;
};

struct ImageSample {
  Image image;  // 3xHxW, [0,1]
  int label = 0;
  std::optional<Box> bbox;
  std::optional<BinaryMask> object_mask;
  std::optional<std::vector<PartKeypoint>> parts;
};

struct ManifestEntry {
  std::string image;  // path, relative to the manifest file
  int label = 0;
  std::optional<Box> bbox;
  std::optional<std::string> object_mask;
  std::optional<std::vector<PartKeypoint>> parts;
};

struct DatasetManifest {
  int class_count = 0;
  std::string split;  // "train" | "test"
  std::vector<ManifestEntry> entries;
  std::string base_dir;  // directory of the manifest file; entries resolve against it

  std::string resolve(const std::string& rel) const;
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

// Loads pixels and annotations for one entry.
ImageSample load_sample(const DatasetManifest& manifest, size_t index);

// Filename stem of the entry's image, used as the image id in mask archives.
std::string image_id(const ManifestEntry& entry);

// Seeded generator of a desk-scale dataset: C classes of colored geometric
// part compositions on a textured background, with object masks and part
// keypoints. Writes PNGs plus train/test manifests under out_dir and returns
// the manifest for `split`. Sample i of a class depends only on
// (seed, class, i), so growing per_class never changes earlier samples.
struct SyntheticOptions {
  uint64_t seed = 0;
  int classes = 4;
  int per_class = 25;
  int resolution = 64;
  int test_per_class = 10;
};

struct SyntheticResult {
  std::string train_manifest;
  std::string test_manifest;
};

SyntheticResult generate_synthetic_dataset(const SyntheticOptions& opts,
                                           const std::string& out_dir);

// In-memory single sample, exposed for tests and the python module.
ImageSample synthesize_sample(uint64_t seed, int classes, int cls, int index, int resolution);

ImageSample crop_to_bbox(const ImageSample& sample);

}  // namespace protomask::data
