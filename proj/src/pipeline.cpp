#include "protomask/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <nlohmann/json.hpp>

#include "protomask/saliency.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace protomask::pipeline {
namespace {

double luminance(const Image& img, int y, int x) {
  return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

maskgen::MaskSet maybe_full_frame(const RunConfig& cfg, maskgen::MaskSet set) {
  if (cfg.segmentation.include_full_view) return maskgen::with_full_frame(std::move(set));
  return set;
}

int resolve_view_count(const RunConfig& cfg, const std::vector<maskgen::MaskSet>& masksets) {
  if (cfg.views.count > 0) return cfg.views.count;
  int count = maskgen::select_view_count(masksets, cfg.views.size_threshold);
  return count + (cfg.segmentation.include_full_view ? 1 : 0);
}

std::string require_file(const std::string& path, const std::string& hint) {
  require(fs::exists(path), "missing upstream artifact: " + path + " (" + hint + ")");
  return path;
}

}  // namespace

std::vector<double> luminance_contour_image(const Image& image) {
  std::vector<double> out(size_t(image.height) * image.width, 0.0);
  double mx = 0.0;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      double gx = 0.0, gy = 0.0;
      if (x + 1 < image.width && x > 0)
        gx = luminance(image, y, x + 1) - luminance(image, y, x - 1);
      if (y + 1 < image.height && y > 0)
        gy = luminance(image, y + 1, x) - luminance(image, y - 1, x);
      double g = std::sqrt(gx * gx + gy * gy);
      out[size_t(y) * image.width + x] = g;
      mx = std::max(mx, g);
    }
  if (mx > 0.0)
    for (double& v : out) v /= mx;
  return out;
}

maskgen::MaskSet segment_sample(const RunConfig& cfg, const data::ImageSample& sample,
                                const std::string& image_id) {
  const SegmentationConfig& s = cfg.segmentation;
  if (s.method == "toy") {
    return maskgen::toy_grid_segmenter(image_id, sample.image.height, sample.image.width, s.rows,
                                       s.cols, cfg.seed, s.jitter);
  }
  if (s.method == "contour") {
    std::vector<double> contour;
    int h = sample.image.height, w = sample.image.width;
    if (!s.contour_dir.empty()) {
      std::string path = (fs::path(s.contour_dir) / (image_id + ".png")).string();
      Image pred = read_image_png(require_file(path, "contour prediction for " + image_id));
      h = pred.height;
      w = pred.width;
      contour.resize(size_t(h) * w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) contour[size_t(y) * w + x] = luminance(pred, y, x);
    } else {
      contour = luminance_contour_image(sample.image);
    }
    maskgen::MaskSet set = maskgen::contours_to_masks(contour, h, w, s.threshold, s.dilation);
    if (h != sample.image.height || w != sample.image.width) {
      maskgen::MaskSet resized;
      resized.source = set.source;
      for (maskgen::SegmentationMask& m : set.masks)
        resized.masks.push_back(maskgen::make_segmentation_mask(
            resize_nearest(m.mask, sample.image.height, sample.image.width)));
      maskgen::sort_by_area(resized);
      return resized;
    }
    return set;
  }
  require(!s.external_dir.empty(), "segmentation.external_dir required for method=external");
  return maskgen::load_external_masks(s.external_dir, image_id, sample.image.height,
                                      sample.image.width);
}

void cmd_segment(const RunConfig& cfg, const std::string& manifest_path,
                 const std::string& out_dir) {
  data::DatasetManifest manifest = data::load_manifest(manifest_path);
  std::string masks_dir = (fs::path(out_dir) / "masks").string();
  fs::create_directories(masks_dir);

  maskgen::MaskSource source;
  if (cfg.segmentation.method == "toy") {
    source = maskgen::MaskSource::Toy;
  } else if (cfg.segmentation.method == "contour") {
    source = maskgen::MaskSource::ExternalSlit;
  } else {
    // re-exported archives keep the source archive's tag
    source = maskgen::MaskSource::ExternalSam2;
    fs::path src_meta = fs::path(cfg.segmentation.external_dir) / "meta.json";
    if (fs::exists(src_meta)) {
      std::ifstream in(src_meta);
      json meta = json::parse(in);
      if (meta.contains("source"))
        source = maskgen::mask_source_from_string(meta["source"].get<std::string>());
    }
  }
  json params = {{"method", cfg.segmentation.method},
                 {"rows", cfg.segmentation.rows},
                 {"cols", cfg.segmentation.cols},
                 {"jitter", cfg.segmentation.jitter},
                 {"threshold", cfg.segmentation.threshold},
                 {"dilation", cfg.segmentation.dilation},
                 {"seed", cfg.seed}};
  maskgen::save_mask_archive_meta(masks_dir, source, params.dump());

  std::vector<std::vector<double>> areas(manifest.entries.size());
  std::vector<std::vector<double>> overlaps(manifest.entries.size());
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    data::ImageSample sample = data::load_sample(manifest, i);
    std::string id = data::image_id(manifest.entries[i]);
    maskgen::MaskSet set = segment_sample(cfg, sample, id);
    maskgen::save_masks(masks_dir, id, set);
    for (const maskgen::SegmentationMask& m : set.masks) {
      areas[i].push_back(m.area_fraction);
      if (sample.object_mask) overlaps[i].push_back(maskgen::mask_object_overlap(m, *sample.object_mask));
    }
  }

  // Rank-size table (absent ranks count as 0, matching select_view_count).
  std::vector<double> size_means = maskgen::rank_mean_areas(areas);
  {
    std::ofstream out(fs::path(out_dir) / "mask_size_stats.csv", std::ios::binary);
    require(out.good(), "cannot write mask_size_stats.csv");
    out << "rank,mean_area_fraction\n";
    char buf[64];
    for (size_t r = 0; r < size_means.size(); ++r) {
      std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", r, size_means[r]);
      out << buf;
    }
  }
  // Rank-overlap table over images with object masks; mean over present masks.
  {
    size_t max_rank = 0;
    for (const auto& o : overlaps) max_rank = std::max(max_rank, o.size());
    std::ofstream out(fs::path(out_dir) / "mask_overlap_stats.csv", std::ios::binary);
    require(out.good(), "cannot write mask_overlap_stats.csv");
    out << "rank,mean_object_overlap,count\n";
    char buf[96];
    for (size_t r = 0; r < max_rank; ++r) {
      double sum = 0.0;
      size_t n = 0;
      for (const auto& o : overlaps)
        if (r < o.size()) {
          sum += o[r];
          ++n;
        }
      std::snprintf(buf, sizeof(buf), "%zu,%.9g,%zu\n", r, n ? sum / double(n) : 0.0, n);
      out << buf;
    }
  }
}

LoadedSplit load_split(const RunConfig& cfg, const std::string& manifest_path,
                       const std::string& masks_dir) {
  LoadedSplit out;
  out.manifest = data::load_manifest(manifest_path);
  require(!out.manifest.entries.empty(), "manifest has no entries: " + manifest_path);

  std::vector<maskgen::MaskSet> masksets(out.manifest.entries.size());
  out.raw.resize(out.manifest.entries.size());
  for (size_t i = 0; i < out.manifest.entries.size(); ++i) {
    out.raw[i] = data::load_sample(out.manifest, i);
    std::string id = data::image_id(out.manifest.entries[i]);
    masksets[i] = maskgen::load_external_masks(masks_dir, id, out.raw[i].image.height,
                                               out.raw[i].image.width);
  }

  out.view_count = resolve_view_count(cfg, masksets);
  maskgen::ViewOptions vopts;
  vopts.view_height = cfg.views.height;
  vopts.view_width = cfg.views.width;
  vopts.apply_mask_interior = cfg.segmentation.apply_mask_interior;

  for (size_t i = 0; i < out.manifest.entries.size(); ++i) {
    training::TrainSample ts;
    ts.views = maskgen::make_views(out.raw[i].image, maybe_full_frame(cfg, std::move(masksets[i])),
                                   out.view_count, vopts);
    ts.label = out.raw[i].label;
    ts.image_id = data::image_id(out.manifest.entries[i]);
    out.samples.push_back(std::move(ts));
  }
  return out;
}

void cmd_train(const RunConfig& cfg, const std::string& manifest_path,
               const std::string& masks_dir, const std::string& out_dir) {
  require_file(manifest_path, "run `protomask segment` and dataset generation first");
  require_file(masks_dir, "run `protomask segment` first");
  fs::create_directories(out_dir);

  LoadedSplit split = load_split(cfg, manifest_path, masks_dir);
  require(split.manifest.split == "train", "cmd_train expects the train split manifest");

  training::RunResult result;
  result.model = training::init_model(cfg.backbone_config(), split.manifest.class_count,
                                      cfg.prototypes_per_class, cfg.similarity_eps,
                                      cfg.schedule.seed);
  training::warmup_stage(result.model, split.samples, cfg.schedule, cfg.loss, cfg.augment,
                         &result.log);
  training::joint_stage(result.model, split.samples, cfg.schedule, cfg.loss, cfg.augment,
                        &result.log);
  result.projection = training::project_prototypes(result.model, split.samples);
  std::string echo = run_config_echo(cfg);
  checkpoint::save((fs::path(out_dir) / "checkpoint_projected.bin").string(), result.model,
                   cfg.seed, echo);
  training::finetune_head(result.model, split.samples, cfg.schedule, cfg.loss.lambda_l1, cfg.loss,
                          &result.log);

  checkpoint::save((fs::path(out_dir) / "checkpoint.bin").string(), result.model, cfg.seed, echo);
  training::write_train_log_csv((fs::path(out_dir) / "train_log.csv").string(), result.log);
  training::write_projection_json((fs::path(out_dir) / "projection.json").string(),
                                  result.projection);
}

metrics::MetricReport cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                                   const std::string& manifest_path, const std::string& masks_dir,
                                   const std::string& out_dir) {
  require_file(checkpoint_path, "run `protomask train` first");
  fs::create_directories(out_dir);
  checkpoint::CheckpointData ckpt = checkpoint::load(checkpoint_path);

  LoadedSplit split = load_split(cfg, manifest_path, masks_dir);
  std::vector<metrics::EvalSample> samples;
  for (size_t i = 0; i < split.samples.size(); ++i) {
    metrics::EvalSample e;
    e.views = std::move(split.samples[i].views);
    e.label = split.samples[i].label;
    e.image_height = split.raw[i].image.height;
    e.image_width = split.raw[i].image.width;
    e.object_mask = split.raw[i].object_mask;
    e.parts = split.raw[i].parts;
    samples.push_back(std::move(e));
  }

  metrics::MetricReport report = metrics::evaluate(ckpt.model, samples, cfg.metric);
  metrics::write_report_json((fs::path(out_dir) / "report.json").string(), report);
  metrics::write_report_csv((fs::path(out_dir) / "report.csv").string(), report);
  return report;
}

void cmd_visualize(const RunConfig& cfg, const std::string& checkpoint_path,
                   const std::string& image_path, const std::string& masks_dir, int top_k,
                   const std::string& out_dir) {
  require_file(checkpoint_path, "run `protomask train` first");
  require_file(image_path, "input image");
  fs::create_directories(fs::path(out_dir) / "heatmaps");
  checkpoint::CheckpointData ckpt = checkpoint::load(checkpoint_path);

  data::ImageSample sample;
  sample.image = read_image_png(image_path);
  std::string id = fs::path(image_path).stem().string();

  maskgen::MaskSet set;
  if (!masks_dir.empty()) {
    set = maskgen::load_external_masks(masks_dir, id, sample.image.height, sample.image.width);
  } else {
    set = segment_sample(cfg, sample, id);
  }
  set = maybe_full_frame(cfg, std::move(set));

  maskgen::ViewOptions vopts;
  vopts.view_height = ckpt.model.backbone.config.input_height;
  vopts.view_width = ckpt.model.backbone.config.input_width;
  vopts.apply_mask_interior = cfg.segmentation.apply_mask_interior;
  int count = cfg.views.count > 0 ? cfg.views.count : int(set.masks.size());
  maskgen::ViewBatch views = maskgen::make_views(sample.image, set, count, vopts);

  model::ForwardResult fr = model::forward(views, ckpt.model);
  metrics::TopK top = metrics::top_k_prototypes(fr.pooled, top_k);

  json meta;
  meta["image"] = image_path;
  meta["prototypes"] = json::array();
  for (size_t rank = 0; rank < top.indices.size(); ++rank) {
    int p = top.indices[rank];
    saliency::RelevanceMap rel = saliency::prototype_saliency(ckpt.model, views, p);
    std::vector<double> full = saliency::map_to_image(rel, sample.image.height, sample.image.width);
    char name[96];
    std::snprintf(name, sizeof(name), "heatmap_rank%zu_proto%d.png", rank, p);
    write_rgba_png((fs::path(out_dir) / "heatmaps" / name).string(), sample.image, full);
    const Box& b = rel.view_provenance;
    meta["prototypes"].push_back({{"rank", rank},
                                  {"prototype", p},
                                  {"class", ckpt.model.protos.proto_class[size_t(p)]},
                                  {"pooled_similarity", fr.pooled[size_t(p)]},
                                  {"view", rel.view_index},
                                  {"view_bbox", {b.x0, b.y0, b.x1, b.y1}},
                                  {"heatmap", std::string("heatmaps/") + name}});
  }
  std::ofstream out(fs::path(out_dir) / "visualize.json", std::ios::binary);
  out << meta.dump(2) << "\n";
}

void cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  require(!run_dirs.empty(), "report: no run directories given");
  fs::create_directories(out_dir);

  std::vector<metrics::MetricReport> reports;
  for (const std::string& dir : run_dirs) {
    std::string path = (fs::path(dir) / "report.json").string();
    reports.push_back(metrics::read_report_json(require_file(path, "run `protomask evaluate`")));
  }

  struct Row {
    const char* name;
    std::vector<double> values;
  };
  std::vector<Row> rows = {{"accuracy", {}},       {"top3_accuracy", {}}, {"f1_macro", {}},
                           {"global_size", {}},    {"sparsity", {}},      {"npr", {}},
                           {"vlc", {}},            {"apd_intra", {}},     {"apd_inter", {}},
                           {"object_overlap", {}}, {"background_overlap", {}},
                           {"iord", {}},           {"consistency", {}}};
  for (const metrics::MetricReport& r : reports) {
    rows[0].values.push_back(r.accuracy);
    rows[1].values.push_back(r.top3_accuracy);
    rows[2].values.push_back(r.f1_macro);
    rows[3].values.push_back(double(r.global_size));
    rows[4].values.push_back(r.sparsity);
    rows[5].values.push_back(r.npr);
    rows[6].values.push_back(r.vlc);
    rows[7].values.push_back(r.apd_intra);
    rows[8].values.push_back(r.apd_inter);
    if (r.object_overlap) rows[9].values.push_back(*r.object_overlap);
    if (r.background_overlap) rows[10].values.push_back(*r.background_overlap);
    if (r.iord) rows[11].values.push_back(*r.iord);
    if (r.consistency) rows[12].values.push_back(*r.consistency);
  }

  json jout;
  std::ofstream csv(fs::path(out_dir) / "report.csv", std::ios::binary);
  require(csv.good(), "cannot write merged report.csv");
  csv << "metric,mean,std,runs\n";
  char buf[160];
  for (const Row& row : rows) {
    if (row.values.empty()) {
      csv << row.name << ",,,0\n";
      jout[row.name] = nullptr;
      continue;
    }
    double mean = 0.0;
    for (double v : row.values) mean += v;
    mean /= double(row.values.size());
    double var = 0.0;
    for (double v : row.values) var += (v - mean) * (v - mean);
    double sd = std::sqrt(var / double(row.values.size()));
    std::snprintf(buf, sizeof(buf), "%s,%.6g,%.6g,%zu\n", row.name, mean, sd, row.values.size());
    csv << buf;
    jout[row.name] = {{"mean", mean}, {"std", sd}, {"runs", row.values.size()}};
  }
  std::ofstream jf(fs::path(out_dir) / "report.json", std::ios::binary);
  require(jf.good(), "cannot write merged report.json");
  jf << jout.dump(2) << "\n";
}

}  // namespace protomask::pipeline
