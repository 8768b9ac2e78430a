#pragma once

#include <string>
#include <vector>

#include "protomask/checkpoint.hpp"
#include "protomask/config.hpp"
#include "protomask/data.hpp"
#include "protomask/maskgen.hpp"
#include "protomask/metrics.hpp"
#include "protomask/training.hpp"

namespace protomask::pipeline {

// Luminance-gradient contour image, the stand-in contour predictor used when
// method=contour and no external prediction directory is configured.
std::vector<double> luminance_contour_image(const Image& image);

maskgen::MaskSet segment_sample(const RunConfig& cfg, const data::ImageSample& sample,
                                const std::string& image_id);

// segment: writes <out>/masks/<image_id>/mask_<k>.png, meta.json, and the
// rank-size / rank-overlap statistics CSVs.
void cmd_segment(const RunConfig& cfg, const std::string& manifest_path,
                 const std::string& out_dir);

// Materializes the per-sample view stacks a stage consumes.
struct LoadedSplit {
  data::DatasetManifest manifest;
  training::TrainSet samples;                       // views + labels + ids
  std::vector<data::ImageSample> raw;               // annotations for metrics
  int view_count = 0;
};

LoadedSplit load_split(const RunConfig& cfg, const std::string& manifest_path,
                       const std::string& masks_dir);

// train: emits checkpoint.bin, checkpoint_projected.bin, train_log.csv,
// projection.json under out_dir.
void cmd_train(const RunConfig& cfg, const std::string& manifest_path,
               const std::string& masks_dir, const std::string& out_dir);

// evaluate: emits report.json and report.csv; returns the report.
metrics::MetricReport cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                                   const std::string& manifest_path, const std::string& masks_dir,
                                   const std::string& out_dir);

// visualize: top-k prototype heatmap PNGs for one image.
void cmd_visualize(const RunConfig& cfg, const std::string& checkpoint_path,
                   const std::string& image_path, const std::string& masks_dir, int top_k,
                   const std::string& out_dir);

// report: merges per-run report.json files into mean/std rows.
void cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

}  // namespace protomask::pipeline
