#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "protomask/pipeline.hpp"

namespace fs = std::filesystem;
using namespace protomask;

namespace {

// Timestamps live only in this sidecar log, so stage outputs stay
// byte-identical across reruns.
void sidecar_log(const std::string& out_dir, const std::string& line) {
  if (out_dir.empty()) return;
  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "run.log", std::ios::app);
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%F %T", std::gmtime(&now));
  log << "[" << stamp << "] " << line << "\n";
}

// Precedence: config file < --seed flag < PROTOMASK_SEED.
pipeline::RunConfig load_config(const std::string& path, int64_t seed_flag) {
  pipeline::RunConfig cfg =
      path.empty() ? pipeline::parse_run_config("{}", "") : pipeline::load_run_config(path);
  if (seed_flag >= 0) {
    cfg.seed = uint64_t(seed_flag);
  }
  if (const char* env_seed = std::getenv("PROTOMASK_SEED")) {
    cfg.seed = std::strtoull(env_seed, nullptr, 10);
  }
  cfg.schedule.seed = cfg.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ProtoMask: segmentation-guided prototype learning"};
  app.require_subcommand(1);

  std::string config_path, data_path, masks_dir, out_dir, checkpoint_path, image_path, method;
  std::string report_path;
  std::vector<std::string> run_dirs;
  int64_t seed_flag = -1;
  int top_k = 5;

  uint64_t synth_seed = 7;
  int synth_classes = 4, synth_per_class = 25, synth_test_per_class = 10, synth_resolution = 64;

  CLI::App* synth = app.add_subcommand("synth", "generate the synthetic desk-scale dataset");
  synth->add_option("--seed", synth_seed);
  synth->add_option("--classes", synth_classes);
  synth->add_option("--per-class", synth_per_class);
  synth->add_option("--test-per-class", synth_test_per_class);
  synth->add_option("--resolution", synth_resolution);
  synth->add_option("--out", out_dir)->required();

  CLI::App* segment = app.add_subcommand("segment", "produce a segmentation mask archive");
  segment->add_option("--config", config_path);
  segment->add_option("--data", data_path)->required();
  segment->add_option("--method", method, "toy|contour|external (overrides config)");
  segment->add_option("--seed", seed_flag);
  segment->add_option("--out", out_dir)->required();

  CLI::App* train = app.add_subcommand("train", "run the staged training schedule");
  train->add_option("--config", config_path);
  train->add_option("--data", data_path)->required();
  train->add_option("--masks", masks_dir)->required();
  train->add_option("--seed", seed_flag);
  train->add_option("--out", out_dir)->required();

  CLI::App* evaluate = app.add_subcommand("evaluate", "compute the metric report on a test split");
  evaluate->add_option("--config", config_path);
  evaluate->add_option("--checkpoint", checkpoint_path)->required();
  evaluate->add_option("--data", data_path)->required();
  evaluate->add_option("--masks", masks_dir)->required();
  evaluate->add_option("--report", report_path, "extra path for the JSON report");
  evaluate->add_option("--out", out_dir)->required();

  CLI::App* visualize = app.add_subcommand("visualize", "write prototype heatmaps for one image");
  visualize->add_option("--config", config_path);
  visualize->add_option("--checkpoint", checkpoint_path)->required();
  visualize->add_option("--image", image_path)->required();
  visualize->add_option("--masks", masks_dir);
  visualize->add_option("--top", top_k);
  visualize->add_option("--out", out_dir)->required();

  CLI::App* report = app.add_subcommand("report", "merge evaluation reports into mean/std rows");
  report->add_option("--runs", run_dirs, "run directories containing report.json")->required();
  report->add_option("--out", out_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      data::SyntheticOptions opts;
      opts.seed = synth_seed;
      opts.classes = synth_classes;
      opts.per_class = synth_per_class;
      opts.test_per_class = synth_test_per_class;
      opts.resolution = synth_resolution;
      data::SyntheticResult r = data::generate_synthetic_dataset(opts, out_dir);
      std::cout << "train manifest: " << r.train_manifest << "\n"
                << "test manifest:  " << r.test_manifest << "\n";
      sidecar_log(out_dir, "synth");
    } else if (segment->parsed()) {
      pipeline::RunConfig cfg = load_config(config_path, seed_flag);
      if (!method.empty()) cfg.segmentation.method = method;
      cfg.validate();
      pipeline::cmd_segment(cfg, data_path, out_dir);
      sidecar_log(out_dir, "segment " + data_path);
    } else if (train->parsed()) {
      pipeline::RunConfig cfg = load_config(config_path, seed_flag);
      pipeline::cmd_train(cfg, data_path, masks_dir, out_dir);
      sidecar_log(out_dir, "train " + data_path);
    } else if (evaluate->parsed()) {
      pipeline::RunConfig cfg = load_config(config_path, seed_flag);
      metrics::MetricReport r = pipeline::cmd_evaluate(cfg, checkpoint_path, data_path, masks_dir,
                                                       out_dir);
      if (!report_path.empty()) metrics::write_report_json(report_path, r);
      std::cout << metrics::report_to_json(r) << "\n";
      sidecar_log(out_dir, "evaluate " + data_path);
    } else if (visualize->parsed()) {
      pipeline::RunConfig cfg = load_config(config_path, seed_flag);
      pipeline::cmd_visualize(cfg, checkpoint_path, image_path, masks_dir, top_k, out_dir);
      sidecar_log(out_dir, "visualize " + image_path);
    } else if (report->parsed()) {
      pipeline::cmd_report(run_dirs, out_dir);
      sidecar_log(out_dir, "report");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
