#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "protomask/pipeline.hpp"
#include "protomask/saliency.hpp"

namespace py = pybind11;
using namespace protomask;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;
using IArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const DArray& a) {
  require(a.ndim() == 2, "expected a 2-D array");
  Matrix m(int(a.shape(0)), int(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.v.begin());
  return m;
}

DArray from_matrix(const Matrix& m) {
  DArray out({m.rows, m.cols});
  std::copy(m.v.begin(), m.v.end(), out.mutable_data());
  return out;
}

model::PrototypeSet to_protos(const DArray& p, const IArray& proto_class) {
  Matrix pm = to_matrix(p);
  require(proto_class.ndim() == 1 && proto_class.shape(0) == pm.rows,
          "proto_class must have one entry per prototype");
  int classes = 0;
  for (py::ssize_t i = 0; i < proto_class.shape(0); ++i)
    classes = std::max(classes, proto_class.data()[i] + 1);
  model::PrototypeSet set;
  set.prototypes = std::move(pm);
  set.class_assignment = Matrix(classes, set.prototypes.rows);
  for (py::ssize_t i = 0; i < proto_class.shape(0); ++i)
    set.class_assignment.at(proto_class.data()[i], int(i)) = 1.0;
  set.rebuild_proto_class();
  return set;
}

std::vector<losses::EmbeddedSample> to_batch(const DArray& z, const U8Array& valid,
                                             const IArray& labels) {
  require(z.ndim() == 3, "embeddings must be [N,V,D]");
  require(valid.ndim() == 2 && valid.shape(0) == z.shape(0) && valid.shape(1) == z.shape(1),
          "valid must be [N,V]");
  require(labels.ndim() == 1 && labels.shape(0) == z.shape(0), "labels must be [N]");
  std::vector<losses::EmbeddedSample> batch;
  const int v = int(z.shape(1)), d = int(z.shape(2));
  for (py::ssize_t n = 0; n < z.shape(0); ++n) {
    losses::EmbeddedSample s;
    s.embeddings = Matrix(v, d);
    std::copy(z.data() + n * v * d, z.data() + (n + 1) * v * d, s.embeddings.v.begin());
    s.valid.assign(valid.data() + n * v, valid.data() + (n + 1) * v);
    s.label = labels.data()[n];
    batch.push_back(std::move(s));
  }
  return batch;
}

BinaryMask to_mask(const U8Array& a) {
  require(a.ndim() == 2, "mask must be 2-D");
  BinaryMask m(int(a.shape(0)), int(a.shape(1)));
  for (py::ssize_t i = 0; i < a.size(); ++i) m.data[size_t(i)] = a.data()[i] ? 1 : 0;
  return m;
}

U8Array from_mask(const BinaryMask& m) {
  U8Array out({m.height, m.width});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

py::list maskset_to_list(const maskgen::MaskSet& set) {
  py::list out;
  for (const maskgen::SegmentationMask& m : set.masks) {
    py::dict d;
    d["mask"] = from_mask(m.mask);
    d["area_fraction"] = m.area_fraction;
    d["bbox"] = py::make_tuple(m.bbox.x0, m.bbox.y0, m.bbox.x1, m.bbox.y1);
    out.append(d);
  }
  return out;
}

py::dict report_to_dict(const metrics::MetricReport& r) {
  py::dict d;
  d["accuracy"] = r.accuracy;
  d["top3_accuracy"] = r.top3_accuracy;
  d["f1_macro"] = r.f1_macro;
  d["global_size"] = r.global_size;
  d["sparsity"] = r.sparsity;
  d["npr"] = r.npr;
  d["vlc"] = r.vlc;
  d["apd_intra"] = r.apd_intra;
  d["apd_inter"] = r.apd_inter;
  auto opt = [](const std::optional<double>& v) -> py::object {
    return v ? py::cast(*v) : py::none();
  };
  d["object_overlap"] = opt(r.object_overlap);
  d["background_overlap"] = opt(r.background_overlap);
  d["iord"] = opt(r.iord);
  d["consistency"] = opt(r.consistency);
  return d;
}

}  // namespace

PYBIND11_MODULE(protomask, m) {
  m.doc() = "Prototype learning on segmentation-derived image views";

  m.def(
      "generate_synthetic_dataset",
      [](uint64_t seed, int classes, int per_class, int test_per_class, int resolution,
         const std::string& out_dir) {
        data::SyntheticOptions opts;
        opts.seed = seed;
        opts.classes = classes;
        opts.per_class = per_class;
        opts.test_per_class = test_per_class;
        opts.resolution = resolution;
        data::SyntheticResult r = data::generate_synthetic_dataset(opts, out_dir);
        py::dict d;
        d["train_manifest"] = r.train_manifest;
        d["test_manifest"] = r.test_manifest;
        return d;
      },
      py::arg("seed"), py::arg("classes"), py::arg("per_class"), py::arg("test_per_class"),
      py::arg("resolution"), py::arg("out_dir"));

  m.def(
      "similarity",
      [](const DArray& z, const DArray& p, double eps) {
        require(z.ndim() == 1 && p.ndim() == 1 && z.shape(0) == p.shape(0),
                "similarity expects two equal-length vectors");
        return model::similarity(z.data(), p.data(), int(z.shape(0)), eps);
      },
      py::arg("z"), py::arg("p"), py::arg("eps") = 1e-4);

  m.def(
      "similarity_matrix",
      [](const DArray& z, const DArray& p, const IArray& proto_class, double eps) {
        return from_matrix(model::similarity_matrix(to_matrix(z), to_protos(p, proto_class), eps));
      },
      py::arg("embeddings"), py::arg("prototypes"), py::arg("proto_class"), py::arg("eps") = 1e-4);

  m.def(
      "max_pool",
      [](const DArray& sim, const U8Array& valid) {
        Matrix s = to_matrix(sim);
        std::vector<uint8_t> v(valid.data(), valid.data() + valid.size());
        std::vector<double> pooled;
        std::vector<int> argmax;
        model::max_pool(s, v, &pooled, &argmax);
        return py::make_tuple(pooled, argmax);
      },
      py::arg("sim"), py::arg("valid"));

  m.def(
      "cluster_loss",
      [](const DArray& z, const U8Array& valid, const IArray& labels, const DArray& p,
         const IArray& proto_class) {
        return losses::cluster_loss(to_batch(z, valid, labels), to_protos(p, proto_class));
      },
      py::arg("embeddings"), py::arg("valid"), py::arg("labels"), py::arg("prototypes"),
      py::arg("proto_class"));

  m.def(
      "separation_loss",
      [](const DArray& z, const U8Array& valid, const IArray& labels, const DArray& p,
         const IArray& proto_class) {
        return losses::separation_loss(to_batch(z, valid, labels), to_protos(p, proto_class));
      },
      py::arg("embeddings"), py::arg("valid"), py::arg("labels"), py::arg("prototypes"),
      py::arg("proto_class"));

  m.def(
      "diversity_loss",
      [](const DArray& p, const IArray& proto_class, double alpha) {
        return losses::diversity_loss(to_protos(p, proto_class), alpha);
      },
      py::arg("prototypes"), py::arg("proto_class"), py::arg("alpha"));

  m.def(
      "l1_head_penalty",
      [](const DArray& w) {
        model::ClassificationHead head;
        head.weight = to_matrix(w);
        return losses::l1_head_penalty(head);
      },
      py::arg("weight"));

  m.def(
      "contours_to_masks",
      [](const DArray& contour, double threshold, int dilation) {
        require(contour.ndim() == 2, "contour image must be 2-D");
        std::vector<double> img(contour.data(), contour.data() + contour.size());
        maskgen::MaskSet set = maskgen::contours_to_masks(img, int(contour.shape(0)),
                                                          int(contour.shape(1)), threshold,
                                                          dilation);
        return maskset_to_list(set);
      },
      py::arg("contour_image"), py::arg("threshold") = 0.001, py::arg("dilation") = 3);

  m.def(
      "toy_grid_segmenter",
      [](const std::string& image_id, int height, int width, int rows, int cols,
         uint64_t jitter_seed, double jitter) {
        return maskset_to_list(
            maskgen::toy_grid_segmenter(image_id, height, width, rows, cols, jitter_seed, jitter));
      },
      py::arg("image_id"), py::arg("height"), py::arg("width"), py::arg("rows"), py::arg("cols"),
      py::arg("jitter_seed") = 0, py::arg("jitter") = 0.15);

  m.def("select_view_count", &maskgen::select_view_count_from_areas, py::arg("areas_per_image"),
        py::arg("size_threshold") = 0.01);

  m.def(
      "mask_object_overlap",
      [](const U8Array& mask, const U8Array& object_mask) {
        return maskgen::mask_object_overlap(maskgen::make_segmentation_mask(to_mask(mask)),
                                            to_mask(object_mask));
      },
      py::arg("mask"), py::arg("object_mask"));

  m.def(
      "segment",
      [](const std::string& config_json, const std::string& manifest, const std::string& out) {
        pipeline::cmd_segment(pipeline::parse_run_config(config_json, ""), manifest, out);
      },
      py::arg("config_json"), py::arg("manifest"), py::arg("out"));

  m.def(
      "train",
      [](const std::string& config_json, const std::string& manifest, const std::string& masks,
         const std::string& out) {
        pipeline::cmd_train(pipeline::parse_run_config(config_json, ""), manifest, masks, out);
      },
      py::arg("config_json"), py::arg("manifest"), py::arg("masks"), py::arg("out"));

  m.def(
      "evaluate",
      [](const std::string& config_json, const std::string& ckpt, const std::string& manifest,
         const std::string& masks, const std::string& out) {
        return report_to_dict(pipeline::cmd_evaluate(pipeline::parse_run_config(config_json, ""),
                                                     ckpt, manifest, masks, out));
      },
      py::arg("config_json"), py::arg("checkpoint"), py::arg("manifest"), py::arg("masks"),
      py::arg("out"));

  m.def(
      "embed_split",
      [](const std::string& config_json, const std::string& ckpt_path,
         const std::string& manifest, const std::string& masks) {
        pipeline::RunConfig cfg = pipeline::parse_run_config(config_json, "");
        checkpoint::CheckpointData ckpt = checkpoint::load(ckpt_path);
        pipeline::LoadedSplit split = pipeline::load_split(cfg, manifest, masks);
        int n = int(split.samples.size());
        int v = split.samples.empty() ? 0 : split.samples[0].views.count();
        int d = ckpt.model.backbone.config.embedding_dim;
        DArray z({n, v, d});
        U8Array valid({n, v});
        IArray labels(n);
        std::vector<double> pooled_flat;
        for (int i = 0; i < n; ++i) {
          Matrix zi = model::embed_views(split.samples[size_t(i)].views, ckpt.model.backbone);
          std::copy(zi.v.begin(), zi.v.end(), z.mutable_data() + size_t(i) * v * d);
          for (int k = 0; k < v; ++k)
            valid.mutable_data()[i * v + k] = split.samples[size_t(i)].views.valid[size_t(k)];
          labels.mutable_data()[i] = split.samples[size_t(i)].label;
        }
        py::dict out;
        out["embeddings"] = z;
        out["valid"] = valid;
        out["labels"] = labels;
        out["prototypes"] = from_matrix(ckpt.model.protos.prototypes);
        out["proto_class"] = ckpt.model.protos.proto_class;
        out["head"] = from_matrix(ckpt.model.head.weight);
        out["similarity_eps"] = ckpt.model.similarity_eps;
        return out;
      },
      py::arg("config_json"), py::arg("checkpoint"), py::arg("manifest"), py::arg("masks"));

  py::register_exception<Error>(m, "ProtoMaskError");
}
