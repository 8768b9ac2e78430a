#pragma once

#include <string>
#include <vector>

#include "protomask/data.hpp"
#include "protomask/image.hpp"

namespace protomask::maskgen {

enum class MaskSource { Toy, ExternalSam2, ExternalSlit };

std::string to_string(MaskSource s);
MaskSource mask_source_from_string(const std::string& s);

struct SegmentationMask {
  BinaryMask mask;
  double area_fraction = 0.0;  // nonzero / (H*W)
  Box bbox;                    // tight box of nonzero pixels
};

SegmentationMask make_segmentation_mask(BinaryMask mask);

// Masks sorted descending by area_fraction (ties keep insertion order).
struct MaskSet {
  std::vector<SegmentationMask> masks;
  MaskSource source = MaskSource::Toy;

  int height() const { return masks.empty() ? 0 : masks.front().mask.height; }
  int width() const { return masks.empty() ? 0 : masks.front().mask.width; }
};

void sort_by_area(MaskSet& set);

// Fixed-count stack of cropped+resized views. Slots beyond the available
// masks are zero views with valid=false; they must never win the max-pool.
struct ViewBatch {
  std::vector<Image> views;        // V entries, 3 x H_v x W_v
  std::vector<uint8_t> valid;      // V flags
  std::vector<Box> provenance;     // source bbox in original image coords
  int count() const { return int(views.size()); }
};

// SLIT-style postprocessing: binarize the contour prediction, dilate with a
// square kernel, then take 4-connected components of the non-contour region.
// Components under 4 pixels are dropped as dilation artifacts.
MaskSet contours_to_masks(const std::vector<double>& contour_image, int height, int width,
                          double threshold = 0.001, int dilation = 3);

// Deterministic stand-in for a segmentation model: rows x cols cells with
// seeded boundary jitter, keyed on (image id, seed). Masks partition the
// image exactly.
MaskSet toy_grid_segmenter(const std::string& image_id, int height, int width, int rows, int cols,
                           uint64_t jitter_seed, double jitter_amount = 0.15);

// Mask archive: <dir>/<image_id>/mask_<k>.png plus <dir>/meta.json.
void save_mask_archive_meta(const std::string& dir, MaskSource source,
                            const std::string& params_json = "{}");
void save_masks(const std::string& dir, const std::string& image_id, const MaskSet& set);
MaskSet load_external_masks(const std::string& dir, const std::string& image_id, int image_height,
                            int image_width);

// Prepends a synthetic full-frame mask (area 1) so the whole image becomes
// the first view.
MaskSet with_full_frame(MaskSet set);

// Number of mask ranks whose dataset-mean area fraction exceeds the
// threshold (absent ranks count as 0); never less than 1.
int select_view_count(const std::vector<MaskSet>& dataset_masksets, double size_threshold = 0.01);
int select_view_count_from_areas(const std::vector<std::vector<double>>& areas_per_image,
                                 double size_threshold = 0.01);

// Per-rank mean area fraction across images (absent ranks contribute 0).
std::vector<double> rank_mean_areas(const std::vector<std::vector<double>>& areas_per_image);

struct ViewOptions {
  int view_height = 32;
  int view_width = 32;
  bool apply_mask_interior = false;  // crop-only by default
};

ViewBatch make_views(const Image& image, const MaskSet& masks, int count,
                     const ViewOptions& opts);

// |mask ∩ object| / |mask|
double mask_object_overlap(const SegmentationMask& mask, const BinaryMask& object_mask);

// Mean per-class occurrence of part-set signatures across images, in percent.
// A mask's signature is the set of visible part keypoints it contains; empty
// signatures are ignored.
double mask_consistency(const data::DatasetManifest& manifest,
                        const std::vector<MaskSet>& masksets);

}  // namespace protomask::maskgen
