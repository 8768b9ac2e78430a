#pragma once

#include <optional>
#include <string>
#include <vector>

#include "protomask/data.hpp"
#include "protomask/model.hpp"
#include "protomask/saliency.hpp"

namespace protomask::metrics {

struct MetricReport {
  double accuracy = 0.0;       // percentages
  double top3_accuracy = 0.0;
  double f1_macro = 0.0;
  int global_size = 0;
  double sparsity = 0.0;
  double npr = 0.0;
  double vlc = 0.0;
  double apd_intra = 0.0;
  double apd_inter = 0.0;
  std::optional<double> object_overlap;      // need object masks
  std::optional<double> background_overlap;  //
  std::optional<double> iord;                //
  std::optional<double> consistency;         // needs part annotations
};

struct ClassificationScores {
  double accuracy = 0.0;
  double top3_accuracy = 0.0;
  double f1_macro = 0.0;
};

ClassificationScores classification_scores(const std::vector<std::vector<double>>& logits_batch,
                                           const std::vector<int>& labels, int classes);

// Prototypes with |weight| > activity_eps in at least one class row.
int global_size(const model::ClassificationHead& head, double activity_eps);

// Percentage of head entries with |weight| <= activity_eps.
double sparsity(const model::ClassificationHead& head, double activity_eps);

// count(w < -eps) / count(w > +eps); errors when no positive weight exists.
double npr(const model::ClassificationHead& head, double activity_eps);

struct TopK {
  std::vector<int> indices;
  bool fewer_than_requested = false;
};

// Indices of the k largest pooled similarities; ties go to the lowest index.
TopK top_k_prototypes(const std::vector<double>& pooled, int k = 5);

// 100 * (1 - mean pairwise IoU) per image, averaged over images. Zero-area
// boxes are excluded with a warning.
double vlc(const std::vector<std::vector<Box>>& per_image_bboxes);

double box_iou(const Box& a, const Box& b);

struct ApdScores {
  double intra = 0.0;
  double inter = 0.0;
};

// Mean cosine distance over same-class / cross-class unordered prototype pairs.
ApdScores apd(const model::PrototypeSet& protos);

struct RegionObjectStats {
  double object_overlap = 0.0;      // percent of region inside the object
  double background_overlap = 0.0;  // percent outside; the two sum to 100
};

RegionObjectStats region_object_stats(const BinaryMask& region, const BinaryMask& object_mask);

// Mean normalized relevance on object pixels minus mean on background pixels.
double iord(const std::vector<double>& relevance, const BinaryMask& object_mask);

// Pairwise part-set intersection score over each prototype's top-k
// activations; prototypes with fewer than two activations are excluded.
double consistency_from_activations(
    const std::vector<std::vector<std::vector<int>>>& per_prototype_part_sets);

struct MetricConfig {
  double activity_eps = 1e-3;
  double saliency_percentile = 95.0;
  int top_k = 5;
};

struct EvalSample {
  maskgen::ViewBatch views;
  int label = 0;
  int image_height = 0;
  int image_width = 0;
  std::optional<BinaryMask> object_mask;
  std::optional<std::vector<data::PartKeypoint>> parts;
};

// Full evaluation pass. Complexity metrics degrade to nulls when the
// corresponding annotations are absent.
MetricReport evaluate(const model::PrototypeModel& m, const std::vector<EvalSample>& samples,
                      const MetricConfig& cfg);

std::string report_to_json(const MetricReport& r);
MetricReport report_from_json(const std::string& text);
// Table-style CSV: performance and compactness columns first, then
// contrastivity and complexity.
void write_report_csv(const std::string& path, const MetricReport& r);
void write_report_json(const std::string& path, const MetricReport& r);
MetricReport read_report_json(const std::string& path);

}  // namespace protomask::metrics
