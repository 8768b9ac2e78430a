#include "protomask/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace protomask::pipeline {
namespace {

std::string resolve(const std::string& base, const std::string& rel) {
  if (rel.empty()) return rel;
  fs::path p(rel);
  if (p.is_absolute() || base.empty()) return rel;
  return (fs::path(base) / p).string();
}

template <typename T>
void maybe(const json& j, const char* key, T* out) {
  if (j.contains(key) && !j[key].is_null()) *out = j[key].get<T>();
}

}  // namespace

model::BackboneConfig RunConfig::backbone_config() const {
  model::BackboneConfig c;
  c.widths = widths;
  c.embedding_dim = embedding_dim;
  c.input_height = views.height;
  c.input_width = views.width;
  c.standardize_mean = standardize_mean;
  c.standardize_std = standardize_std;
  return c;
}

void RunConfig::validate() const {
  require(segmentation.method == "toy" || segmentation.method == "contour" ||
              segmentation.method == "external",
          "segmentation.method must be toy|contour|external");
  require(views.height >= 8 && views.width >= 8, "view resolution too small");
  require(views.count == -1 || views.count >= 1, "views.count must be 'auto' or >= 1");
  require(prototypes_per_class >= 1, "prototypes_per_class must be >= 1");
  require(embedding_dim >= 2, "embedding_dim must be >= 2");
  require(similarity_eps > 0.0, "similarity_eps must be > 0");
  require(standardize_mean.size() == 3 && standardize_std.size() == 3,
          "standardization stats must have 3 channels");
  for (double sd : standardize_std) require(sd > 0.0, "standardize_std entries must be > 0");
  require(loss.lambda_ce > 0.0, "loss.lambda_ce must be > 0");
  require(loss.alpha > 0.0, "loss.alpha must be > 0");
  require(loss.lambda_l1 >= 0.0, "loss.lambda_l1 must be >= 0");
  require(metric.activity_eps > 0.0, "metrics.activity_eps must be > 0");
  require(metric.saliency_percentile > 0.0 && metric.saliency_percentile < 100.0,
          "metrics.saliency_percentile must be in (0,100)");
  require(metric.top_k >= 1, "metrics.top_k must be >= 1");
  schedule.validate();
}

RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(std::string("config parse failure: ") + e.what());
  }

  RunConfig cfg;
  maybe(j, "seed", &cfg.seed);
  if (j.contains("data")) {
    const json& d = j["data"];
    std::string train, test;
    maybe(d, "train_manifest", &train);
    maybe(d, "test_manifest", &test);
    cfg.train_manifest = resolve(base_dir, train);
    cfg.test_manifest = resolve(base_dir, test);
  }
  if (j.contains("segmentation")) {
    const json& s = j["segmentation"];
    maybe(s, "method", &cfg.segmentation.method);
    maybe(s, "rows", &cfg.segmentation.rows);
    maybe(s, "cols", &cfg.segmentation.cols);
    maybe(s, "jitter", &cfg.segmentation.jitter);
    maybe(s, "threshold", &cfg.segmentation.threshold);
    maybe(s, "dilation", &cfg.segmentation.dilation);
    std::string ext, contour;
    maybe(s, "external_dir", &ext);
    maybe(s, "contour_dir", &contour);
    cfg.segmentation.external_dir = resolve(base_dir, ext);
    cfg.segmentation.contour_dir = resolve(base_dir, contour);
    maybe(s, "include_full_view", &cfg.segmentation.include_full_view);
    maybe(s, "apply_mask_interior", &cfg.segmentation.apply_mask_interior);
  }
  if (j.contains("views")) {
    const json& v = j["views"];
    if (v.contains("count") && !v["count"].is_null()) {
      if (v["count"].is_string()) {
        require(v["count"].get<std::string>() == "auto", "views.count must be 'auto' or integer");
        cfg.views.count = -1;
      } else {
        cfg.views.count = v["count"].get<int>();
      }
    }
    if (v.contains("resolution")) {
      const json& r = v["resolution"];
      require(r.is_array() && r.size() == 2, "views.resolution must be [H,W]");
      cfg.views.height = r[0].get<int>();
      cfg.views.width = r[1].get<int>();
    }
    maybe(v, "size_threshold", &cfg.views.size_threshold);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    maybe(m, "widths", &cfg.widths);
    maybe(m, "embedding_dim", &cfg.embedding_dim);
    maybe(m, "prototypes_per_class", &cfg.prototypes_per_class);
    maybe(m, "similarity_eps", &cfg.similarity_eps);
    maybe(m, "standardize_mean", &cfg.standardize_mean);
    maybe(m, "standardize_std", &cfg.standardize_std);
  }
  if (j.contains("schedule")) {
    const json& s = j["schedule"];
    maybe(s, "warmup_epochs", &cfg.schedule.warmup_epochs);
    maybe(s, "joint_epochs", &cfg.schedule.joint_epochs);
    maybe(s, "finetune_epochs", &cfg.schedule.finetune_epochs);
    maybe(s, "batch_size", &cfg.schedule.batch_size);
    maybe(s, "lr_backbone", &cfg.schedule.lr_backbone);
    maybe(s, "lr_prototypes", &cfg.schedule.lr_prototypes);
    maybe(s, "lr_head", &cfg.schedule.lr_head);
    maybe(s, "momentum", &cfg.schedule.momentum);
  }
  if (j.contains("loss")) {
    const json& l = j["loss"];
    maybe(l, "lambda_ce", &cfg.loss.lambda_ce);
    maybe(l, "lambda_cluster", &cfg.loss.lambda_cluster);
    maybe(l, "lambda_sep", &cfg.loss.lambda_sep);
    maybe(l, "lambda_div", &cfg.loss.lambda_div);
    maybe(l, "alpha", &cfg.loss.alpha);
    maybe(l, "lambda_l1", &cfg.loss.lambda_l1);
  }
  if (j.contains("augment")) {
    const json& a = j["augment"];
    maybe(a, "enabled", &cfg.augment.enabled);
    maybe(a, "hflip", &cfg.augment.hflip);
    maybe(a, "max_shift", &cfg.augment.max_shift);
  }
  if (j.contains("metrics")) {
    const json& m = j["metrics"];
    maybe(m, "activity_eps", &cfg.metric.activity_eps);
    maybe(m, "saliency_percentile", &cfg.metric.saliency_percentile);
    maybe(m, "top_k", &cfg.metric.top_k);
  }

  if (const char* env_seed = std::getenv("PROTOMASK_SEED")) {
    cfg.seed = std::strtoull(env_seed, nullptr, 10);
  }
  cfg.schedule.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "config not found: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text, fs::path(path).parent_path().string());
}

std::string run_config_echo(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["segmentation"] = {{"method", cfg.segmentation.method},
                       {"rows", cfg.segmentation.rows},
                       {"cols", cfg.segmentation.cols},
                       {"jitter", cfg.segmentation.jitter},
                       {"threshold", cfg.segmentation.threshold},
                       {"dilation", cfg.segmentation.dilation},
                       {"include_full_view", cfg.segmentation.include_full_view},
                       {"apply_mask_interior", cfg.segmentation.apply_mask_interior}};
  j["views"] = {{"count", cfg.views.count},
                {"resolution", {cfg.views.height, cfg.views.width}},
                {"size_threshold", cfg.views.size_threshold}};
  j["prototypes_per_class"] = cfg.prototypes_per_class;
  j["schedule"] = {{"warmup_epochs", cfg.schedule.warmup_epochs},
                   {"joint_epochs", cfg.schedule.joint_epochs},
                   {"finetune_epochs", cfg.schedule.finetune_epochs},
                   {"batch_size", cfg.schedule.batch_size},
                   {"lr_backbone", cfg.schedule.lr_backbone},
                   {"lr_prototypes", cfg.schedule.lr_prototypes},
                   {"lr_head", cfg.schedule.lr_head},
                   {"momentum", cfg.schedule.momentum}};
  j["loss"] = {{"lambda_ce", cfg.loss.lambda_ce},
               {"lambda_cluster", cfg.loss.lambda_cluster},
               {"lambda_sep", cfg.loss.lambda_sep},
               {"lambda_div", cfg.loss.lambda_div},
               {"alpha", cfg.loss.alpha},
               {"lambda_l1", cfg.loss.lambda_l1}};
  j["augment"] = {{"enabled", cfg.augment.enabled},
                  {"hflip", cfg.augment.hflip},
                  {"max_shift", cfg.augment.max_shift}};
  j["metrics"] = {{"activity_eps", cfg.metric.activity_eps},
                  {"saliency_percentile", cfg.metric.saliency_percentile},
                  {"top_k", cfg.metric.top_k}};
  return j.dump();
}

}  // namespace protomask::pipeline
