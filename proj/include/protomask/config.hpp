#pragma once

#include <string>

#include "protomask/losses.hpp"
#include "protomask/metrics.hpp"
#include "protomask/model.hpp"
#include "protomask/training.hpp"

namespace protomask::pipeline {

struct SegmentationConfig {
  std::string method = "toy";  // toy | contour | external
  int rows = 2;
  int cols = 2;
  double jitter = 0.15;
  double threshold = 0.001;  // contour binarization
  int dilation = 3;
  std::string external_dir;  // method=external: precomputed mask archive
  std::string contour_dir;   // method=contour: contour prediction PNGs; empty = derive from image
  bool include_full_view = false;
  bool apply_mask_interior = false;
};

struct ViewConfig {
  int count = -1;  // -1 = auto via select_view_count
  int height = 32;
  int width = 32;
  double size_threshold = 0.01;
};

struct RunConfig {
  uint64_t seed = 0;
  std::string train_manifest;
  std::string test_manifest;
  SegmentationConfig segmentation;
  ViewConfig views;
  std::vector<int> widths = {8, 16, 32};
  int embedding_dim = 32;
  int prototypes_per_class = 10;
  double similarity_eps = 1e-4;
  std::vector<double> standardize_mean = {0.5, 0.5, 0.5};
  std::vector<double> standardize_std = {0.5, 0.5, 0.5};
  training::ScheduleConfig schedule;
  losses::LossWeights loss;
  training::AugmentConfig augment;
  metrics::MetricConfig metric;

  model::BackboneConfig backbone_config() const;
  void validate() const;
};

// Parses the config JSON; a PROTOMASK_SEED environment variable overrides
// the file's seed (CLI flags override both, applied by the caller).
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir);

// JSON echo embedded into checkpoints.
std::string run_config_echo(const RunConfig& cfg);

}  // namespace protomask::pipeline
