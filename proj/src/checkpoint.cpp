#include "protomask/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

using nlohmann::json;

namespace protomask::checkpoint {
namespace {

constexpr char kMagic[4] = {'P', 'M', 'S', 'K'};

void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

void write_tensor(std::ostream& out, const std::string& name, const std::vector<uint64_t>& dims,
                  const double* data) {
  write_u32(out, uint32_t(name.size()));
  out.write(name.data(), std::streamsize(name.size()));
  write_u32(out, uint32_t(dims.size()));
  uint64_t n = 1;
  for (uint64_t d : dims) {
    write_u64(out, d);
    n *= d;
  }
  out.write(reinterpret_cast<const char*>(data), std::streamsize(n * 8));
}

struct NamedTensor {
  std::vector<uint64_t> dims;
  std::vector<double> data;
};

std::map<std::string, NamedTensor> read_tensors(std::istream& in, uint32_t count) {
  std::map<std::string, NamedTensor> out;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    NamedTensor t;
    uint32_t ndim = read_u32(in);
    uint64_t n = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      t.dims.push_back(read_u64(in));
      n *= t.dims.back();
    }
    t.data.resize(n);
    in.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(n * 8));
    require(in.good(), "checkpoint truncated while reading tensor " + name);
    out[name] = std::move(t);
  }
  return out;
}

}  // namespace

void save(const std::string& path, const model::PrototypeModel& m, uint64_t seed,
          const std::string& config_echo_json) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  write_u32(out, kFormatVersion);
  write_u64(out, seed);

  json echo = json::parse(config_echo_json);
  echo["model"] = {{"widths", m.backbone.config.widths},
                   {"embedding_dim", m.backbone.config.embedding_dim},
                   {"input_height", m.backbone.config.input_height},
                   {"input_width", m.backbone.config.input_width},
                   {"standardize_mean", m.backbone.config.standardize_mean},
                   {"standardize_std", m.backbone.config.standardize_std},
                   {"similarity_eps", m.similarity_eps}};
  std::string echo_text = echo.dump();
  write_u64(out, echo_text.size());
  out.write(echo_text.data(), std::streamsize(echo_text.size()));

  uint32_t ntensors = uint32_t(2 * m.backbone.convs.size()) + 5;
  write_u32(out, ntensors);
  for (size_t i = 0; i < m.backbone.convs.size(); ++i) {
    const model::ConvLayer& c = m.backbone.convs[i];
    write_tensor(out, "conv" + std::to_string(i) + ".weight",
                 {uint64_t(c.out_ch), uint64_t(c.in_ch), 3, 3}, c.weight.data());
    write_tensor(out, "conv" + std::to_string(i) + ".bias", {uint64_t(c.out_ch)}, c.bias.data());
  }
  write_tensor(out, "proj.weight",
               {uint64_t(m.backbone.proj_weight.rows), uint64_t(m.backbone.proj_weight.cols)},
               m.backbone.proj_weight.v.data());
  write_tensor(out, "proj.bias", {m.backbone.proj_bias.size()}, m.backbone.proj_bias.data());
  write_tensor(out, "prototypes",
               {uint64_t(m.protos.prototypes.rows), uint64_t(m.protos.prototypes.cols)},
               m.protos.prototypes.v.data());
  write_tensor(out, "class_assignment",
               {uint64_t(m.protos.class_assignment.rows), uint64_t(m.protos.class_assignment.cols)},
               m.protos.class_assignment.v.data());
  write_tensor(out, "head.weight", {uint64_t(m.head.weight.rows), uint64_t(m.head.weight.cols)},
               m.head.weight.v.data());
  require(out.good(), "checkpoint write failed: " + path);
}

CheckpointData load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  require(in.good() && std::memcmp(magic, kMagic, 4) == 0, "not a checkpoint file: " + path);
  uint32_t version = read_u32(in);
  require(version == kFormatVersion,
          "unsupported checkpoint format_version " + std::to_string(version));

  CheckpointData out;
  out.seed = read_u64(in);
  uint64_t echo_len = read_u64(in);
  out.config_echo.resize(echo_len);
  in.read(out.config_echo.data(), std::streamsize(echo_len));

  json echo = json::parse(out.config_echo);
  const json& mc = echo.at("model");
  model::BackboneConfig cfg;
  cfg.widths = mc.at("widths").get<std::vector<int>>();
  cfg.embedding_dim = mc.at("embedding_dim").get<int>();
  cfg.input_height = mc.at("input_height").get<int>();
  cfg.input_width = mc.at("input_width").get<int>();
  cfg.standardize_mean = mc.at("standardize_mean").get<std::vector<double>>();
  cfg.standardize_std = mc.at("standardize_std").get<std::vector<double>>();

  uint32_t ntensors = read_u32(in);
  auto tensors = read_tensors(in, ntensors);
  auto get = [&](const std::string& name) -> NamedTensor& {
    auto it = tensors.find(name);
    require(it != tensors.end(), "checkpoint missing tensor " + name);
    return it->second;
  };

  model::PrototypeModel& m = out.model;
  m.backbone.config = cfg;
  m.similarity_eps = mc.at("similarity_eps").get<double>();
  int in_ch = 3;
  for (size_t i = 0; i < cfg.widths.size(); ++i) {
    model::ConvLayer layer;
    layer.in_ch = in_ch;
    layer.out_ch = cfg.widths[i];
    layer.weight = get("conv" + std::to_string(i) + ".weight").data;
    layer.bias = get("conv" + std::to_string(i) + ".bias").data;
    require(layer.weight.size() == size_t(layer.out_ch) * in_ch * 9,
            "checkpoint conv weight size mismatch");
    m.backbone.convs.push_back(std::move(layer));
    in_ch = cfg.widths[i];
  }
  NamedTensor& pw = get("proj.weight");
  m.backbone.proj_weight = Matrix(int(pw.dims[0]), int(pw.dims[1]));
  m.backbone.proj_weight.v = pw.data;
  m.backbone.proj_bias = get("proj.bias").data;

  NamedTensor& pt = get("prototypes");
  m.protos.prototypes = Matrix(int(pt.dims[0]), int(pt.dims[1]));
  m.protos.prototypes.v = pt.data;
  NamedTensor& ca = get("class_assignment");
  m.protos.class_assignment = Matrix(int(ca.dims[0]), int(ca.dims[1]));
  m.protos.class_assignment.v = ca.data;
  m.protos.rebuild_proto_class();

  NamedTensor& hw = get("head.weight");
  m.head.weight = Matrix(int(hw.dims[0]), int(hw.dims[1]));
  m.head.weight.v = hw.data;
  return out;
}

}  // namespace protomask::checkpoint
