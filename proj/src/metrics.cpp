#include "protomask/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <nlohmann/json.hpp>

using nlohmann::json;

namespace protomask::metrics {

ClassificationScores classification_scores(const std::vector<std::vector<double>>& logits_batch,
                                           const std::vector<int>& labels, int classes) {
  require(!logits_batch.empty() && logits_batch.size() == labels.size(),
          "classification_scores: empty or mismatched batch");
  size_t top1 = 0, top3 = 0;
  std::vector<long long> tp(size_t(classes), 0), fp(size_t(classes), 0), fn(size_t(classes), 0);

  for (size_t i = 0; i < logits_batch.size(); ++i) {
    const std::vector<double>& logits = logits_batch[i];
    require(int(logits.size()) == classes, "classification_scores: logit width != classes");
    std::vector<int> rank(logits.size());
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(),
                     [&](int a, int b) { return logits[size_t(a)] > logits[size_t(b)]; });
    int y = labels[i];
    int pred = rank[0];
    if (pred == y) ++top1;
    for (int k = 0; k < std::min<int>(3, classes); ++k)
      if (rank[size_t(k)] == y) {
        ++top3;
        break;
      }
    if (pred == y) ++tp[size_t(y)];
    else {
      ++fp[size_t(pred)];
      ++fn[size_t(y)];
    }
  }

  double f1_sum = 0.0;
  for (int c = 0; c < classes; ++c) {
    double p = tp[size_t(c)] + fp[size_t(c)] > 0
                   ? double(tp[size_t(c)]) / double(tp[size_t(c)] + fp[size_t(c)])
                   : 0.0;
    double r = tp[size_t(c)] + fn[size_t(c)] > 0
                   ? double(tp[size_t(c)]) / double(tp[size_t(c)] + fn[size_t(c)])
                   : 0.0;
    f1_sum += p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
  }

  ClassificationScores s;
  s.accuracy = 100.0 * double(top1) / double(labels.size());
  s.top3_accuracy = 100.0 * double(top3) / double(labels.size());
  s.f1_macro = 100.0 * f1_sum / double(classes);
  return s;
}

int global_size(const model::ClassificationHead& head, double activity_eps) {
  require(activity_eps > 0.0, "global_size: activity_eps must be > 0");
  int count = 0;
  for (int p = 0; p < head.weight.cols; ++p) {
    bool active = false;
    for (int c = 0; c < head.weight.rows; ++c)
      active = active || std::fabs(head.weight.at(c, p)) > activity_eps;
    count += active;
  }
  return count;
}

double sparsity(const model::ClassificationHead& head, double activity_eps) {
  require(activity_eps > 0.0, "sparsity: activity_eps must be > 0");
  require(!head.weight.v.empty(), "sparsity: empty head");
  size_t near_zero = 0;
  for (double w : head.weight.v) near_zero += std::fabs(w) <= activity_eps;
  return 100.0 * double(near_zero) / double(head.weight.v.size());
}

double npr(const model::ClassificationHead& head, double activity_eps) {
  require(activity_eps > 0.0, "npr: activity_eps must be > 0");
  size_t neg = 0, pos = 0;
  for (double w : head.weight.v) {
    neg += w < -activity_eps;
    pos += w > activity_eps;
  }
  require(pos > 0, "npr: head has no positive weights");
  return double(neg) / double(pos);
}

TopK top_k_prototypes(const std::vector<double>& pooled, int k) {
  require(k >= 1, "top_k_prototypes: k must be >= 1");
  std::vector<int> rank(pooled.size());
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(),
                   [&](int a, int b) { return pooled[size_t(a)] > pooled[size_t(b)]; });
  TopK out;
  out.fewer_than_requested = int(pooled.size()) < k;
  int take = std::min<int>(k, int(pooled.size()));
  out.indices.assign(rank.begin(), rank.begin() + take);
  return out;
}

double box_iou(const Box& a, const Box& b) {
  long long ix = std::max<long long>(0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  long long iy = std::max<long long>(0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  long long inter = ix * iy;
  long long uni = a.area() + b.area() - inter;
  return uni > 0 ? double(inter) / double(uni) : 0.0;
}

double vlc(const std::vector<std::vector<Box>>& per_image_bboxes) {
  require(!per_image_bboxes.empty(), "vlc: no images");
  double sum = 0.0;
  size_t images = 0;
  for (const std::vector<Box>& raw : per_image_bboxes) {
    std::vector<Box> boxes;
    for (const Box& b : raw) {
      if (b.area() <= 0) {
        std::cerr << "warning: vlc: excluding degenerate zero-area bbox\n";
        continue;
      }
      boxes.push_back(b);
    }
    if (boxes.size() < 2) {
      std::cerr << "warning: vlc: image with fewer than 2 usable bboxes skipped\n";
      continue;
    }
    double iou_sum = 0.0;
    size_t pairs = 0;
    for (size_t i = 0; i < boxes.size(); ++i)
      for (size_t j = i + 1; j < boxes.size(); ++j) {
        iou_sum += box_iou(boxes[i], boxes[j]);
        ++pairs;
      }
    sum += 100.0 * (1.0 - iou_sum / double(pairs));
    ++images;
  }
  require(images > 0, "vlc: no image had >= 2 usable bboxes");
  return sum / double(images);
}

ApdScores apd(const model::PrototypeSet& protos) {
  require(protos.size() >= 2, "apd: need at least 2 prototypes");
  const int dim = protos.dim();
  std::vector<double> norms(size_t(protos.size()));
  for (int p = 0; p < protos.size(); ++p) {
    double n2 = 0.0;
    const double* row = protos.prototypes.row(p);
    for (int d = 0; d < dim; ++d) n2 += row[d] * row[d];
    require(n2 > 0.0, "apd: zero-norm prototype " + std::to_string(p));
    norms[size_t(p)] = std::sqrt(n2);
  }
  double intra_sum = 0.0, inter_sum = 0.0;
  size_t intra_n = 0, inter_n = 0;
  for (int i = 0; i < protos.size(); ++i)
    for (int j = i + 1; j < protos.size(); ++j) {
      double dot = 0.0;
      const double* a = protos.prototypes.row(i);
      const double* b = protos.prototypes.row(j);
      for (int d = 0; d < dim; ++d) dot += a[d] * b[d];
      double dist = 1.0 - dot / (norms[size_t(i)] * norms[size_t(j)]);
      if (protos.proto_class[size_t(i)] == protos.proto_class[size_t(j)]) {
        intra_sum += dist;
        ++intra_n;
      } else {
        inter_sum += dist;
        ++inter_n;
      }
    }
  ApdScores s;
  s.intra = intra_n > 0 ? intra_sum / double(intra_n) : 0.0;
  s.inter = inter_n > 0 ? inter_sum / double(inter_n) : 0.0;
  return s;
}

RegionObjectStats region_object_stats(const BinaryMask& region, const BinaryMask& object_mask) {
  require(region.height == object_mask.height && region.width == object_mask.width,
          "region_object_stats: shape mismatch");
  size_t inside = 0, total = 0;
  for (size_t i = 0; i < region.data.size(); ++i) {
    if (!region.data[i]) continue;
    ++total;
    inside += object_mask.data[i] != 0;
  }
  require(total > 0, "region_object_stats: empty region");
  RegionObjectStats s;
  s.object_overlap = 100.0 * double(inside) / double(total);
  s.background_overlap = 100.0 * double(total - inside) / double(total);
  return s;
}

double iord(const std::vector<double>& relevance, const BinaryMask& object_mask) {
  require(relevance.size() == object_mask.data.size(), "iord: shape mismatch");
  size_t obj = object_mask.count_nonzero();
  require(obj > 0 && obj < object_mask.data.size(), "iord: object mask empty or covers all pixels");
  double in_sum = 0.0, out_sum = 0.0;
  for (size_t i = 0; i < relevance.size(); ++i) {
    if (object_mask.data[i]) in_sum += relevance[i];
    else out_sum += relevance[i];
  }
  return in_sum / double(obj) - out_sum / double(object_mask.data.size() - obj);
}

double consistency_from_activations(
    const std::vector<std::vector<std::vector<int>>>& per_prototype_part_sets) {
  double sum = 0.0;
  size_t protos = 0;
  for (const auto& activations : per_prototype_part_sets) {
    if (activations.size() < 2) continue;  // no pairs to score
    size_t consistent = 0, pairs = 0;
    for (size_t a = 0; a < activations.size(); ++a)
      for (size_t b = a + 1; b < activations.size(); ++b) {
        ++pairs;
        // Sets are kept sorted; intersection is a merge walk.
        const std::vector<int>&sa = activations[a], &sb = activations[b];
        size_t i = 0, j = 0;
        bool hit = false;
        while (i < sa.size() && j < sb.size()) {
          if (sa[i] == sb[j]) {
            hit = true;
            break;
          }
          if (sa[i] < sb[j]) ++i;
          else ++j;
        }
        consistent += hit;
      }
    sum += double(consistent) / double(pairs);
    ++protos;
  }
  require(protos > 0, "consistency: no prototype with >= 2 activations");
  return 100.0 * sum / double(protos);
}

MetricReport evaluate(const model::PrototypeModel& m, const std::vector<EvalSample>& samples,
                      const MetricConfig& cfg) {
  require(!samples.empty(), "evaluate: empty test set");

  struct PerImage {
    std::vector<double> logits;
    std::vector<int> top;
    std::vector<Box> region_boxes;
    std::vector<RegionObjectStats> stats;
    std::vector<double> iords;
    // (prototype, sorted part-id set) per activation
    std::vector<std::pair<int, std::vector<int>>> parts_hit;
  };
  std::vector<PerImage> per_image(samples.size());

  parallel_for(int(samples.size()), [&](int ii) {
    const EvalSample& s = samples[size_t(ii)];
    PerImage& out = per_image[size_t(ii)];
    model::ForwardResult fr = model::forward(s.views, m);
    out.logits = fr.logits;
    TopK top = top_k_prototypes(fr.pooled, cfg.top_k);
    out.top = top.indices;
    for (int p : out.top) {
      saliency::RelevanceMap rel = saliency::prototype_saliency(m, s.views, p);
      std::vector<double> full = saliency::map_to_image(rel, s.image_height, s.image_width);
      double mx = 0.0;
      for (double v : full) mx = std::max(mx, v);
      if (mx <= 0.0) {
        // gradient-x-input can vanish on a saturated or all-black view;
        // one dead activation must not sink the whole report
        std::cerr << "warning: all-zero relevance for prototype " << p << ", activation skipped\n";
        continue;
      }
      saliency::ThresholdedRegion region =
          saliency::threshold_region(full, s.image_height, s.image_width, cfg.saliency_percentile);
      out.region_boxes.push_back(region.bbox);
      if (s.object_mask) {
        size_t obj = s.object_mask->count_nonzero();
        if (obj > 0 && obj < s.object_mask->data.size()) {
          out.stats.push_back(region_object_stats(region.region, *s.object_mask));
          out.iords.push_back(iord(full, *s.object_mask));
        }
      }
      if (s.parts) {
        std::vector<int> hit;
        for (const data::PartKeypoint& kp : *s.parts)
          if (kp.visible && kp.y >= 0 && kp.y < region.region.height && kp.x >= 0 &&
              kp.x < region.region.width && region.region.at(kp.y, kp.x))
            hit.push_back(kp.id);
        std::sort(hit.begin(), hit.end());
        hit.erase(std::unique(hit.begin(), hit.end()), hit.end());
        out.parts_hit.emplace_back(p, std::move(hit));
      }
    }
  });

  MetricReport r;
  std::vector<std::vector<double>> logits_batch;
  std::vector<int> labels;
  for (size_t i = 0; i < samples.size(); ++i) {
    logits_batch.push_back(per_image[i].logits);
    labels.push_back(samples[i].label);
  }
  ClassificationScores cs = classification_scores(logits_batch, labels, m.protos.num_classes());
  r.accuracy = cs.accuracy;
  r.top3_accuracy = cs.top3_accuracy;
  r.f1_macro = cs.f1_macro;
  r.global_size = global_size(m.head, cfg.activity_eps);
  r.sparsity = sparsity(m.head, cfg.activity_eps);
  r.npr = npr(m.head, cfg.activity_eps);

  std::vector<std::vector<Box>> vlc_boxes;
  for (const PerImage& pi : per_image) vlc_boxes.push_back(pi.region_boxes);
  r.vlc = vlc(vlc_boxes);

  ApdScores a = apd(m.protos);
  r.apd_intra = a.intra;
  r.apd_inter = a.inter;

  double obj_sum = 0.0, bg_sum = 0.0, iord_sum = 0.0;
  size_t stat_n = 0, iord_n = 0;
  for (const PerImage& pi : per_image) {
    for (const RegionObjectStats& st : pi.stats) {
      obj_sum += st.object_overlap;
      bg_sum += st.background_overlap;
      ++stat_n;
    }
    for (double v : pi.iords) {
      iord_sum += v;
      ++iord_n;
    }
  }
  if (stat_n > 0) {
    r.object_overlap = obj_sum / double(stat_n);
    r.background_overlap = bg_sum / double(stat_n);
  }
  if (iord_n > 0) r.iord = iord_sum / double(iord_n);

  bool any_parts = false;
  for (const EvalSample& s : samples) any_parts = any_parts || s.parts.has_value();
  if (any_parts) {
    std::vector<std::vector<std::vector<int>>> per_proto(size_t(m.protos.size()));
    for (const PerImage& pi : per_image)
      for (const auto& [p, parts] : pi.parts_hit) per_proto[size_t(p)].push_back(parts);
    r.consistency = consistency_from_activations(per_proto);
  }
  return r;
}

namespace {

json report_json(const MetricReport& r) {
  json j;
  j["accuracy"] = r.accuracy;
  j["top3_accuracy"] = r.top3_accuracy;
  j["f1_macro"] = r.f1_macro;
  j["global_size"] = r.global_size;
  j["sparsity"] = r.sparsity;
  j["npr"] = r.npr;
  j["vlc"] = r.vlc;
  j["apd_intra"] = r.apd_intra;
  j["apd_inter"] = r.apd_inter;
  j["object_overlap"] = r.object_overlap ? json(*r.object_overlap) : json(nullptr);
  j["background_overlap"] = r.background_overlap ? json(*r.background_overlap) : json(nullptr);
  j["iord"] = r.iord ? json(*r.iord) : json(nullptr);
  j["consistency"] = r.consistency ? json(*r.consistency) : json(nullptr);
  return j;
}

}  // namespace

std::string report_to_json(const MetricReport& r) { return report_json(r).dump(2); }

MetricReport report_from_json(const std::string& text) {
  json j = json::parse(text);
  MetricReport r;
  r.accuracy = j.at("accuracy").get<double>();
  r.top3_accuracy = j.at("top3_accuracy").get<double>();
  r.f1_macro = j.at("f1_macro").get<double>();
  r.global_size = j.at("global_size").get<int>();
  r.sparsity = j.at("sparsity").get<double>();
  r.npr = j.at("npr").get<double>();
  r.vlc = j.at("vlc").get<double>();
  r.apd_intra = j.at("apd_intra").get<double>();
  r.apd_inter = j.at("apd_inter").get<double>();
  if (!j.at("object_overlap").is_null()) r.object_overlap = j["object_overlap"].get<double>();
  if (!j.at("background_overlap").is_null())
    r.background_overlap = j["background_overlap"].get<double>();
  if (!j.at("iord").is_null()) r.iord = j["iord"].get<double>();
  if (!j.at("consistency").is_null()) r.consistency = j["consistency"].get<double>();
  return r;
}

void write_report_json(const std::string& path, const MetricReport& r) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write report: " + path);
  out << report_to_json(r) << "\n";
}

MetricReport read_report_json(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open report: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return report_from_json(text);
}

void write_report_csv(const std::string& path, const MetricReport& r) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write report: " + path);
  out << "accuracy,top3_accuracy,f1_macro,global_size,sparsity,npr,"
         "vlc,apd_intra,apd_inter,object_overlap,background_overlap,iord,consistency\n";
  char buf[512];
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char b[64];
    std::snprintf(b, sizeof(b), "%.6g", *v);
    return std::string(b);
  };
  std::snprintf(buf, sizeof(buf), "%.6g,%.6g,%.6g,%d,%.6g,%.6g,%.6g,%.6g,%.6g", r.accuracy,
                r.top3_accuracy, r.f1_macro, r.global_size, r.sparsity, r.npr, r.vlc, r.apd_intra,
                r.apd_inter);
  out << buf << "," << opt(r.object_overlap) << "," << opt(r.background_overlap) << ","
      << opt(r.iord) << "," << opt(r.consistency) << "\n";
}

}  // namespace protomask::metrics
