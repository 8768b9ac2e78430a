#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "protomask/pipeline.hpp"

namespace fs = std::filesystem;
using namespace protomask;
using namespace protomask::pipeline;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("protomask_pipe_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("run config: defaults, auto view count, overrides") {
  RunConfig cfg = parse_run_config("{}", "");
  CHECK(cfg.views.count == -1);
  CHECK(cfg.prototypes_per_class == 10);
  CHECK(cfg.loss.lambda_cluster == doctest::Approx(0.8));
  CHECK(cfg.loss.lambda_sep == doctest::Approx(0.08));
  CHECK(cfg.schedule.lr_prototypes == doctest::Approx(3e-3));

  RunConfig cfg2 = parse_run_config(
      R"({"views": {"count": 7, "resolution": [24, 20]}, "seed": 11})", "");
  CHECK(cfg2.views.count == 7);
  CHECK(cfg2.views.height == 24);
  CHECK(cfg2.views.width == 20);
  CHECK(cfg2.seed == 11);
  CHECK(cfg2.schedule.seed == 11);

  CHECK_THROWS_AS(parse_run_config(R"({"views": {"count": "sometimes"}})", ""), Error);
  CHECK_THROWS_AS(parse_run_config(R"({"segmentation": {"method": "magic"}})", ""), Error);
  CHECK_THROWS_AS(parse_run_config("{nope", ""), Error);
}

TEST_CASE("run config: PROTOMASK_SEED wins over the file") {
  setenv("PROTOMASK_SEED", "424242", 1);
  RunConfig cfg = parse_run_config(R"({"seed": 1})", "");
  unsetenv("PROTOMASK_SEED");
  CHECK(cfg.seed == 424242);
  CHECK(cfg.schedule.seed == 424242);
}

TEST_CASE("luminance contour: edges of a bicolor image") {
  Image img(3, 10, 10, 0.0);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 10; ++y)
      for (int x = 5; x < 10; ++x) img.at(c, y, x) = 1.0;
  std::vector<double> contour = luminance_contour_image(img);
  // strongest response on the boundary columns
  double boundary = contour[4 * 10 + 5];
  double flat = contour[4 * 10 + 1];
  CHECK(boundary > 0.5);
  CHECK(flat == doctest::Approx(0.0));
}

TEST_CASE("segment -> train -> evaluate over the filesystem") {
  fs::path root = temp_dir("e2e");
  data::SyntheticOptions synth;
  synth.seed = 5;
  synth.classes = 2;
  synth.per_class = 4;
  synth.test_per_class = 2;
  synth.resolution = 32;
  data::SyntheticResult ds = data::generate_synthetic_dataset(synth, (root / "data").string());

  RunConfig cfg = parse_run_config(R"({
    "seed": 5,
    "segmentation": {"method": "toy", "rows": 2, "cols": 2, "include_full_view": true},
    "views": {"count": "auto", "resolution": [16, 16]},
    "model": {"widths": [4, 8], "embedding_dim": 8, "prototypes_per_class": 2},
    "schedule": {"warmup_epochs": 1, "joint_epochs": 2, "finetune_epochs": 1, "batch_size": 4},
    "augment": {"enabled": false}
  })", "");

  cmd_segment(cfg, ds.train_manifest, (root / "seg_train").string());
  cmd_segment(cfg, ds.test_manifest, (root / "seg_test").string());
  CHECK(fs::exists(root / "seg_train" / "masks" / "c0_train_000" / "mask_0.png"));
  CHECK(fs::exists(root / "seg_train" / "mask_size_stats.csv"));

  // segment rerun is byte-identical
  std::string before = slurp(root / "seg_train" / "masks" / "c0_train_000" / "mask_0.png");
  cmd_segment(cfg, ds.train_manifest, (root / "seg_train").string());
  CHECK(slurp(root / "seg_train" / "masks" / "c0_train_000" / "mask_0.png") == before);

  // rank means in the stats CSV are non-increasing
  {
    std::ifstream in(root / "seg_train" / "mask_size_stats.csv");
    std::string line;
    std::getline(in, line);
    double prev = 1e9;
    while (std::getline(in, line)) {
      double mean = std::stod(line.substr(line.find(',') + 1));
      CHECK(mean <= prev + 1e-12);
      prev = mean;
    }
  }

  cmd_train(cfg, ds.train_manifest, (root / "seg_train" / "masks").string(),
            (root / "run").string());
  CHECK(fs::exists(root / "run" / "checkpoint.bin"));
  CHECK(fs::exists(root / "run" / "checkpoint_projected.bin"));
  CHECK(fs::exists(root / "run" / "train_log.csv"));
  CHECK(fs::exists(root / "run" / "projection.json"));

  // auto view count resolves to 2x2 grid + full frame
  LoadedSplit split = load_split(cfg, ds.train_manifest, (root / "seg_train" / "masks").string());
  CHECK(split.view_count == 5);

  metrics::MetricReport report =
      cmd_evaluate(cfg, (root / "run" / "checkpoint.bin").string(), ds.test_manifest,
                   (root / "seg_test" / "masks").string(), (root / "eval").string());
  CHECK(fs::exists(root / "eval" / "report.json"));
  CHECK(fs::exists(root / "eval" / "report.csv"));
  CHECK(report.consistency.has_value());

  // checkpoint reload reproduces identical scores
  metrics::MetricReport again =
      cmd_evaluate(cfg, (root / "run" / "checkpoint.bin").string(), ds.test_manifest,
                   (root / "seg_test" / "masks").string(), (root / "eval2").string());
  CHECK(again.accuracy == report.accuracy);
  CHECK(again.vlc == report.vlc);
  CHECK(slurp(root / "eval" / "report.json") == slurp(root / "eval2" / "report.json"));

  // visualize writes one heatmap per requested prototype
  cmd_visualize(cfg, (root / "run" / "checkpoint.bin").string(),
                (root / "data" / "images" / "c0_test_000.png").string(),
                (root / "seg_test" / "masks").string(), 3, (root / "viz").string());
  CHECK(fs::exists(root / "viz" / "visualize.json"));
  int heatmaps = 0;
  for (const auto& e : fs::directory_iterator(root / "viz" / "heatmaps"))
    heatmaps += e.path().filename().string().rfind("heatmap_", 0) == 0;
  CHECK(heatmaps == 3);

  // report merge over two identical runs: std 0
  cmd_report({(root / "eval").string(), (root / "eval2").string()}, (root / "merged").string());
  CHECK(fs::exists(root / "merged" / "report.csv"));
  {
    std::ifstream in(root / "merged" / "report.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "metric,mean,std,runs");
    std::getline(in, line);  // accuracy row
    CHECK(line.find("accuracy,") == 0);
    CHECK(line.find(",0,2") != std::string::npos);  // zero std across 2 identical runs
  }

  // missing upstream artifacts produce actionable errors
  CHECK_THROWS_AS(cmd_train(cfg, ds.train_manifest, (root / "nope").string(),
                            (root / "run2").string()),
                  Error);
  CHECK_THROWS_AS(cmd_evaluate(cfg, (root / "missing.bin").string(), ds.test_manifest,
                               (root / "seg_test" / "masks").string(), (root / "eval3").string()),
                  Error);
}

TEST_CASE("external method re-exports an archive and keeps its source tag") {
  fs::path root = temp_dir("external");
  data::SyntheticOptions synth;
  synth.seed = 8;
  synth.classes = 2;
  synth.per_class = 2;
  synth.test_per_class = 1;
  synth.resolution = 32;
  data::SyntheticResult ds = data::generate_synthetic_dataset(synth, (root / "data").string());

  // source archive tagged slit, with overlapping masks and an out-of-rank-order file
  fs::path src = root / "src_masks";
  maskgen::save_mask_archive_meta(src.string(), maskgen::MaskSource::ExternalSlit);
  data::DatasetManifest manifest = data::load_manifest(ds.train_manifest);
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    std::string id = data::image_id(manifest.entries[i]);
    fs::create_directories(src / id);
    BinaryMask big(32, 32);
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 32; ++x) big.at(y, x) = 1;
    BinaryMask small(32, 32);
    for (int y = 16; y < 32; ++y)
      for (int x = 8; x < 24; ++x) small.at(y, x) = 1;  // overlaps big
    write_mask_png((src / id / "mask_0.png").string(), big);
    write_mask_png((src / id / "mask_10.png").string(), small);
  }

  RunConfig cfg = parse_run_config("{}", "");
  cfg.segmentation.method = "external";
  cfg.segmentation.external_dir = src.string();
  cmd_segment(cfg, ds.train_manifest, (root / "seg").string());

  std::string meta = slurp(root / "seg" / "masks" / "meta.json");
  CHECK(meta.find("\"slit\"") != std::string::npos);
  maskgen::MaskSet set =
      maskgen::load_external_masks((root / "seg" / "masks").string(), "c0_train_000", 32, 32);
  CHECK(set.source == maskgen::MaskSource::ExternalSlit);
  REQUIRE(set.masks.size() == 2);
  CHECK(set.masks[0].area_fraction > set.masks[1].area_fraction);
}

TEST_CASE("contour method end to end on a synthetic image") {
  fs::path root = temp_dir("contour");
  data::SyntheticOptions synth;
  synth.seed = 6;
  synth.classes = 2;
  synth.per_class = 2;
  synth.test_per_class = 1;
  synth.resolution = 32;
  data::SyntheticResult ds = data::generate_synthetic_dataset(synth, (root / "data").string());

  RunConfig cfg = parse_run_config(
      R"({"segmentation": {"method": "contour", "threshold": 0.15, "dilation": 3}})", "");
  cmd_segment(cfg, ds.train_manifest, (root / "seg").string());
  std::ifstream meta(root / "seg" / "masks" / "meta.json");
  std::string text((std::istreambuf_iterator<char>(meta)), std::istreambuf_iterator<char>());
  CHECK(text.find("\"slit\"") != std::string::npos);
  CHECK(fs::exists(root / "seg" / "masks" / "c0_train_000" / "mask_0.png"));
}
