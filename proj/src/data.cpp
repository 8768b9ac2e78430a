#include "protomask/data.hpp"

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace protomask::data {

std::string DatasetManifest::resolve(const std::string& rel) const {
  fs::path p(rel);
  if (p.is_absolute() || base_dir.empty()) return rel;
  return (fs::path(base_dir) / p).string();
}

std::string image_id(const ManifestEntry& entry) {
  return fs::path(entry.image).stem().string();
}

namespace {

int line_of_byte(const std::string& text, size_t byte) {
  int line = 1;
  for (size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

Box parse_box(const json& j, const std::string& ctx) {
  require(j.is_array() && j.size() == 4, ctx + ": bbox must be [x0,y0,x1,y1]");
  return Box{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "manifest not found: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail("manifest parse failure at " + path + ":" + std::to_string(line_of_byte(text, e.byte)) +
         " — " + e.what());
  }

  DatasetManifest m;
  m.base_dir = fs::path(path).parent_path().string();
  require(j.contains("class_count") && j["class_count"].is_number_integer(),
          "manifest missing integer class_count");
  m.class_count = j["class_count"].get<int>();
  require(m.class_count >= 1, "manifest class_count must be >= 1");
  require(j.contains("split") && j["split"].is_string(), "manifest missing split");
  m.split = j["split"].get<std::string>();
  require(m.split == "train" || m.split == "test", "manifest split must be train|test");
  require(j.contains("entries") && j["entries"].is_array(), "manifest missing entries array");

  size_t idx = 0;
  for (const json& je : j["entries"]) {
    ManifestEntry e;
    std::string ctx = "manifest entry " + std::to_string(idx);
    require(je.contains("image") && je["image"].is_string(), ctx + ": missing image path");
    e.image = je["image"].get<std::string>();
    require(je.contains("label") && je["label"].is_number_integer(), ctx + ": missing label");
    e.label = je["label"].get<int>();
    require(e.label >= 0 && e.label < m.class_count,
            ctx + ": label " + std::to_string(e.label) + " out of range for class_count " +
                std::to_string(m.class_count));
    if (je.contains("bbox") && !je["bbox"].is_null()) e.bbox = parse_box(je["bbox"], ctx);
    if (je.contains("object_mask") && !je["object_mask"].is_null())
      e.object_mask = je["object_mask"].get<std::string>();
    if (je.contains("parts") && !je["parts"].is_null()) {
      std::vector<PartKeypoint> parts;
      for (const json& jp : je["parts"]) {
        require(jp.is_array() && jp.size() == 4, ctx + ": part must be [id,x,y,visible]");
        parts.push_back(PartKeypoint{jp[0].get<int>(), jp[1].get<int>(), jp[2].get<int>(),
                                     jp[3].get<int>() != 0});
      }
      e.parts = std::move(parts);
    }
    require(fs::exists(m.resolve(e.image)), ctx + ": image path not resolvable: " + e.image);
    if (e.object_mask)
      require(fs::exists(m.resolve(*e.object_mask)),
              ctx + ": object_mask path not resolvable: " + *e.object_mask);
    m.entries.push_back(std::move(e));
    ++idx;
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  json j;
  j["class_count"] = manifest.class_count;
  j["split"] = manifest.split;
  j["entries"] = json::array();
  for (const ManifestEntry& e : manifest.entries) {
    json je;
    je["image"] = e.image;
    je["label"] = e.label;
    if (e.bbox) je["bbox"] = {e.bbox->x0, e.bbox->y0, e.bbox->x1, e.bbox->y1};
    if (e.object_mask) je["object_mask"] = *e.object_mask;
    if (e.parts) {
      json parts = json::array();
      for (const PartKeypoint& p : *e.parts) parts.push_back({p.id, p.x, p.y, p.visible ? 1 : 0});
      je["parts"] = parts;
    }
    j["entries"].push_back(std::move(je));
  }
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

ImageSample load_sample(const DatasetManifest& manifest, size_t index) {
  require(index < manifest.entries.size(), "sample index out of range");
  const ManifestEntry& e = manifest.entries[index];
  ImageSample s;
  s.image = read_image_png(manifest.resolve(e.image));
  s.label = e.label;
  if (e.bbox) {
    const Box& b = *e.bbox;
    require(b.x0 >= 0 && b.x0 < b.x1 && b.x1 <= s.image.width && b.y0 >= 0 && b.y0 < b.y1 &&
                b.y1 <= s.image.height,
            "bbox out of image bounds for " + e.image);
    s.bbox = b;
  }
  if (e.object_mask) {
    BinaryMask m = read_mask_png(manifest.resolve(*e.object_mask));
    require(m.height == s.image.height && m.width == s.image.width,
            "object_mask shape mismatch for " + e.image);
    s.object_mask = std::move(m);
  }
  if (e.parts) {
    for (const PartKeypoint& p : *e.parts)
      if (p.visible)
        require(p.x >= 0 && p.x < s.image.width && p.y >= 0 && p.y < s.image.height,
                "visible part outside image bounds for " + e.image);
    s.parts = e.parts;
  }
  return s;
}

ImageSample crop_to_bbox(const ImageSample& sample) {
  require(sample.bbox.has_value(), "crop_to_bbox: sample has no bbox");
  const Box box = *sample.bbox;
  ImageSample out;
  out.image = crop(sample.image, box);
  out.label = sample.label;
  out.bbox = Box{0, 0, out.image.width, out.image.height};
  if (sample.object_mask) out.object_mask = crop(*sample.object_mask, box);
  if (sample.parts) {
    std::vector<PartKeypoint> parts;
    for (PartKeypoint p : *sample.parts) {
      p.x -= box.x0;
      p.y -= box.y0;
      if (p.x < 0 || p.y < 0 || p.x >= out.image.width || p.y >= out.image.height)
        p.visible = false;
      parts.push_back(p);
    }
    out.parts = std::move(parts);
  }
  return out;
}

}  // namespace protomask::data
