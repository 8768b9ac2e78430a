#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "protomask/data.hpp"

namespace fs = std::filesystem;
using namespace protomask;
using namespace protomask::data;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("protomask_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void touch_png(const fs::path& p, int size = 8) {
  Image img(3, size, size, 0.5);
  write_image_png(p.string(), img);
}

}  // namespace

TEST_CASE("manifest: load/save round trip") {
  fs::path dir = temp_dir("manifest");
  touch_png(dir / "a.png");
  touch_png(dir / "b.png");

  std::ofstream(dir / "m.json") << R"({
    "class_count": 2,
    "split": "train",
    "entries": [
      {"image": "a.png", "label": 0, "bbox": [1, 2, 5, 6], "parts": [[0, 3, 3, 1]]},
      {"image": "b.png", "label": 1}
    ]
  })";

  DatasetManifest m = load_manifest((dir / "m.json").string());
  CHECK(m.entries.size() == 2);
  CHECK(m.class_count == 2);
  CHECK(m.entries[0].bbox.has_value());
  CHECK(m.entries[0].bbox->x1 == 5);
  CHECK(m.entries[0].parts->size() == 1);
  CHECK_FALSE(m.entries[1].bbox.has_value());

  // write -> load -> write is byte identical
  save_manifest(m, (dir / "m2.json").string());
  DatasetManifest m2 = load_manifest((dir / "m2.json").string());
  save_manifest(m2, (dir / "m3.json").string());
  CHECK(slurp(dir / "m2.json") == slurp(dir / "m3.json"));
}

TEST_CASE("manifest: label out of range rejected") {
  fs::path dir = temp_dir("manifest_label");
  touch_png(dir / "a.png");
  std::ofstream(dir / "m.json")
      << R"({"class_count": 3, "split": "train", "entries": [{"image": "a.png", "label": 5}]})";
  CHECK_THROWS_AS(load_manifest((dir / "m.json").string()), Error);
}

TEST_CASE("manifest: empty entry list is valid") {
  fs::path dir = temp_dir("manifest_empty");
  std::ofstream(dir / "m.json") << R"({"class_count": 2, "split": "test", "entries": []})";
  DatasetManifest m = load_manifest((dir / "m.json").string());
  CHECK(m.entries.empty());
}

TEST_CASE("manifest: parse failure names the line") {
  fs::path dir = temp_dir("manifest_parse");
  std::ofstream(dir / "m.json") << "{\n  \"class_count\": 2,\n  oops\n}";
  try {
    load_manifest((dir / "m.json").string());
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(":3") != std::string::npos);
  }
}

TEST_CASE("manifest: unresolvable image path rejected") {
  fs::path dir = temp_dir("manifest_missing");
  std::ofstream(dir / "m.json")
      << R"({"class_count": 1, "split": "train", "entries": [{"image": "nope.png", "label": 0}]})";
  CHECK_THROWS_AS(load_manifest((dir / "m.json").string()), Error);
}

TEST_CASE("synthetic: determinism and stable ordering") {
  fs::path d1 = temp_dir("synth1");
  fs::path d2 = temp_dir("synth2");
  SyntheticOptions opts;
  opts.seed = 7;
  opts.classes = 2;
  opts.per_class = 3;
  opts.test_per_class = 1;
  opts.resolution = 32;
  generate_synthetic_dataset(opts, d1.string());
  generate_synthetic_dataset(opts, d2.string());
  for (const auto& e : fs::recursive_directory_iterator(d1)) {
    if (!e.is_regular_file()) continue;
    fs::path rel = fs::relative(e.path(), d1);
    CHECK(slurp(e.path()) == slurp(d2 / rel));
  }

  // growing per_class never changes earlier samples
  fs::path d3 = temp_dir("synth3");
  SyntheticOptions more = opts;
  more.per_class = 5;
  generate_synthetic_dataset(more, d3.string());
  CHECK(slurp(d1 / "images/c0_train_002.png") == slurp(d3 / "images/c0_train_002.png"));
  CHECK(slurp(d1 / "images/c1_train_000.png") == slurp(d3 / "images/c1_train_000.png"));
}

TEST_CASE("synthetic: bounds") {
  SyntheticOptions opts;
  opts.classes = 1;
  CHECK_THROWS_AS(generate_synthetic_dataset(opts, "/tmp/protomask_should_not_exist"), Error);
  opts.classes = 2;
  opts.resolution = 8;
  CHECK_THROWS_AS(generate_synthetic_dataset(opts, "/tmp/protomask_should_not_exist"), Error);
}

TEST_CASE("synthetic: every sample has a nonempty object mask and in-bounds parts") {
  for (int cls = 0; cls < 3; ++cls)
    for (int i = 0; i < 4; ++i) {
      ImageSample s = synthesize_sample(11, 3, cls, i, 48);
      REQUIRE(s.object_mask.has_value());
      CHECK(s.object_mask->count_nonzero() > 0);
      REQUIRE(s.parts.has_value());
      for (const PartKeypoint& p : *s.parts) {
        CHECK(p.visible);
        CHECK(p.x >= 0);
        CHECK(p.x < 48);
        CHECK(p.y >= 0);
        CHECK(p.y < 48);
        // part keypoints sit on object pixels
        CHECK(s.object_mask->at(p.y, p.x) == 1);
      }
    }
}

TEST_CASE("crop_to_bbox: full-frame bbox is identity and idempotent") {
  ImageSample s = synthesize_sample(3, 2, 0, 0, 32);
  s.bbox = Box{0, 0, 32, 32};
  ImageSample c = crop_to_bbox(s);
  CHECK(c.image == s.image);
  CHECK(*c.object_mask == *s.object_mask);
  ImageSample c2 = crop_to_bbox(c);
  CHECK(c2.image == c.image);
}

TEST_CASE("crop_to_bbox: window arithmetic and part translation") {
  ImageSample s;
  s.image = Image(3, 100, 100, 0.25);
  s.label = 0;
  s.bbox = Box{10, 10, 60, 60};
  s.parts = std::vector<PartKeypoint>{{0, 20, 20, true}, {1, 5, 5, true}};
  ImageSample c = crop_to_bbox(s);
  CHECK(c.image.height == 50);
  CHECK(c.image.width == 50);
  CHECK((*c.parts)[0].x == 10);
  CHECK((*c.parts)[0].y == 10);
  CHECK((*c.parts)[0].visible);
  // the part that fell outside the window is no longer visible
  CHECK_FALSE((*c.parts)[1].visible);
}

TEST_CASE("crop_to_bbox: missing bbox rejected") {
  ImageSample s;
  s.image = Image(3, 8, 8);
  CHECK_THROWS_AS(crop_to_bbox(s), Error);
}

TEST_CASE("png round trip preserves quantized pixels") {
  fs::path dir = temp_dir("png");
  Image img(3, 5, 7);
  Rng rng(5);
  for (double& v : img.data) v = rng.uniform();
  write_image_png((dir / "x.png").string(), img);
  Image back = read_image_png((dir / "x.png").string());
  REQUIRE(back.height == 5);
  REQUIRE(back.width == 7);
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(0.01));

  BinaryMask mask(5, 7);
  mask.at(2, 3) = 1;
  mask.at(4, 6) = 1;
  write_mask_png((dir / "m.png").string(), mask);
  CHECK(read_mask_png((dir / "m.png").string()) == mask);
}
