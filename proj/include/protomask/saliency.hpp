#pragma once

#include <vector>

#include "protomask/model.hpp"

namespace protomask::saliency {

// Per-pixel relevance over one view; non-negative, max-normalized to 1
// unless all-zero. The provenance box places it in full-image coordinates.
struct RelevanceMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  Box view_provenance;
  int view_index = -1;
};

// Gradient-x-input relevance of pooled[p] on the prototype's argmax view.
// Views other than the argmax view contribute exactly zero by construction
// (the max-pool gradient is a dead branch there).
RelevanceMap prototype_saliency(const model::PrototypeModel& m, const maskgen::ViewBatch& views,
                                int prototype);

// Bilinear-resizes the relevance into its provenance box on a zero canvas of
// the full image size.
std::vector<double> map_to_image(const RelevanceMap& rel, int image_height, int image_width);

struct ThresholdedRegion {
  BinaryMask region;
  Box bbox;
};

// Pixels at or above the given percentile of the nonzero relevance values.
ThresholdedRegion threshold_region(const std::vector<double>& relevance, int height, int width,
                                   double percentile);

}  // namespace protomask::saliency
