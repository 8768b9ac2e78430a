#include "protomask/model.hpp"

#include <algorithm>
#include <cmath>

namespace protomask::model {
namespace {

Tensor3 conv3x3(const ConvLayer& layer, const Tensor3& in) {
  Tensor3 out(layer.out_ch, in.h, in.w);
  for (int oc = 0; oc < layer.out_ch; ++oc) {
    const double b = layer.bias[size_t(oc)];
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        double acc = b;
        for (int ic = 0; ic < layer.in_ch; ++ic) {
          const double* wk = layer.weight.data() + ((size_t(oc) * layer.in_ch + ic) * 9);
          for (int ky = -1; ky <= 1; ++ky) {
            int yy = y + ky;
            if (yy < 0 || yy >= in.h) continue;
            for (int kx = -1; kx <= 1; ++kx) {
              int xx = x + kx;
              if (xx < 0 || xx >= in.w) continue;
              acc += wk[(ky + 1) * 3 + (kx + 1)] * in.at(ic, yy, xx);
            }
          }
        }
        out.at(oc, y, x) = acc;
      }
  }
  return out;
}

// dOut -> (dIn, dW, dB) for the 3x3 same-pad conv.
void conv3x3_backward(const ConvLayer& layer, const Tensor3& in, const Tensor3& dout,
                      std::vector<double>* dweight, std::vector<double>* dbias, Tensor3* din) {
  for (int oc = 0; oc < layer.out_ch; ++oc)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        double g = dout.at(oc, y, x);
        if (g == 0.0) continue;
        (*dbias)[size_t(oc)] += g;
        for (int ic = 0; ic < layer.in_ch; ++ic) {
          double* dwk = dweight->data() + ((size_t(oc) * layer.in_ch + ic) * 9);
          const double* wk = layer.weight.data() + ((size_t(oc) * layer.in_ch + ic) * 9);
          for (int ky = -1; ky <= 1; ++ky) {
            int yy = y + ky;
            if (yy < 0 || yy >= in.h) continue;
            for (int kx = -1; kx <= 1; ++kx) {
              int xx = x + kx;
              if (xx < 0 || xx >= in.w) continue;
              dwk[(ky + 1) * 3 + (kx + 1)] += g * in.at(ic, yy, xx);
              if (din) din->at(ic, yy, xx) += g * wk[(ky + 1) * 3 + (kx + 1)];
            }
          }
        }
      }
}

// 2x2 max pool, stride 2, floor on odd extents; ties go to the lowest flat
// index so training is deterministic.
Tensor3 maxpool2(const Tensor3& in, std::vector<int>* src_idx) {
  int oh = in.h / 2, ow = in.w / 2;
  Tensor3 out(in.ch, oh, ow);
  src_idx->assign(size_t(in.ch) * oh * ow, 0);
  for (int c = 0; c < in.ch; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        int best_idx = -1;
        double best = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            int yy = y * 2 + dy, xx = x * 2 + dx;
            double v = in.at(c, yy, xx);
            int flat = (c * in.h + yy) * in.w + xx;
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = flat;
            }
          }
        out.at(c, y, x) = best;
        (*src_idx)[(size_t(c) * oh + y) * ow + x] = best_idx;
      }
  return out;
}

}  // namespace

Tensor3 Backbone::standardize(const Image& view) const {
  require(view.channels == 3, "backbone expects 3-channel views");
  require(view.height == config.input_height && view.width == config.input_width,
          "view resolution " + std::to_string(view.height) + "x" + std::to_string(view.width) +
              " does not match backbone input " + std::to_string(config.input_height) + "x" +
              std::to_string(config.input_width));
  Tensor3 out(3, view.height, view.width);
  for (int c = 0; c < 3; ++c) {
    double mean = config.standardize_mean[size_t(c)];
    double sd = config.standardize_std[size_t(c)];
    for (int y = 0; y < view.height; ++y)
      for (int x = 0; x < view.width; ++x) out.at(c, y, x) = (view.at(c, y, x) - mean) / sd;
  }
  return out;
}

void Backbone::init(Rng& rng) {
  require(!config.widths.empty(), "backbone needs at least one conv stage");
  require(config.embedding_dim >= 2, "embedding_dim must be >= 2");
  int spatial = std::min(config.input_height, config.input_width);
  require(spatial >> config.widths.size() >= 1, "too many conv stages for the input resolution");

  convs.clear();
  int in_ch = 3;
  for (int width : config.widths) {
    ConvLayer layer;
    layer.in_ch = in_ch;
    layer.out_ch = width;
    layer.weight.resize(size_t(width) * in_ch * 9);
    layer.bias.assign(size_t(width), 0.0);
    double scale = std::sqrt(2.0 / (in_ch * 9.0));  // He init
    for (double& w : layer.weight) w = rng.normal() * scale;
    convs.push_back(std::move(layer));
    in_ch = width;
  }
  proj_weight = Matrix(config.embedding_dim, in_ch);
  double scale = std::sqrt(2.0 / in_ch);
  for (double& w : proj_weight.v) w = rng.normal() * scale;
  proj_bias.assign(size_t(config.embedding_dim), 0.0);
}

std::vector<double> Backbone::embed(const Image& view, BackboneTrace* trace) const {
  Tensor3 x = standardize(view);
  BackboneTrace local;
  BackboneTrace& t = trace ? *trace : local;
  t.stage_input.clear();
  t.preact.clear();
  t.pool_src.clear();

  for (const ConvLayer& layer : convs) {
    t.stage_input.push_back(x);
    Tensor3 pre = conv3x3(layer, x);
    Tensor3 act = pre;
    for (double& v : act.v) v = v > 0.0 ? v : 0.0;
    t.preact.push_back(std::move(pre));
    std::vector<int> src;
    x = maxpool2(act, &src);
    t.pool_src.push_back(std::move(src));
  }

  // Global average pool to one vector per view.
  t.gap_h = x.h;
  t.gap_w = x.w;
  t.gap.assign(size_t(x.ch), 0.0);
  double inv = 1.0 / (double(x.h) * x.w);
  for (int c = 0; c < x.ch; ++c) {
    double s = 0.0;
    for (int y = 0; y < x.h; ++y)
      for (int xx = 0; xx < x.w; ++xx) s += x.at(c, y, xx);
    t.gap[size_t(c)] = s * inv;
  }

  std::vector<double> z(size_t(config.embedding_dim));
  for (int d = 0; d < config.embedding_dim; ++d) {
    double acc = proj_bias[size_t(d)];
    const double* row = proj_weight.row(d);
    for (size_t c = 0; c < t.gap.size(); ++c) acc += row[c] * t.gap[c];
    z[size_t(d)] = 1.0 / (1.0 + std::exp(-acc));
  }
  t.embedding = z;
  return z;
}

BackboneGrads::BackboneGrads(const Backbone& b) {
  for (const ConvLayer& c : b.convs) {
    conv_weight.emplace_back(c.weight.size(), 0.0);
    conv_bias.emplace_back(c.bias.size(), 0.0);
  }
  proj_weight = Matrix(b.proj_weight.rows, b.proj_weight.cols);
  proj_bias.assign(b.proj_bias.size(), 0.0);
}

void BackboneGrads::zero() {
  for (auto& w : conv_weight) std::fill(w.begin(), w.end(), 0.0);
  for (auto& b : conv_bias) std::fill(b.begin(), b.end(), 0.0);
  std::fill(proj_weight.v.begin(), proj_weight.v.end(), 0.0);
  std::fill(proj_bias.begin(), proj_bias.end(), 0.0);
}

void Backbone::backward(const BackboneTrace& trace, const std::vector<double>& dz,
                        BackboneGrads* grads, Tensor3* dinput) const {
  const int last_ch = convs.back().out_ch;
  std::vector<double> dgap(size_t(last_ch), 0.0);
  for (int d = 0; d < config.embedding_dim; ++d) {
    double zd = trace.embedding[size_t(d)];
    double g = dz[size_t(d)] * zd * (1.0 - zd);  // through the sigmoid
    if (grads) grads->proj_bias[size_t(d)] += g;
    const double* row = proj_weight.row(d);
    for (int c = 0; c < last_ch; ++c) {
      if (grads) grads->proj_weight.at(d, c) += g * trace.gap[size_t(c)];
      dgap[size_t(c)] += g * row[c];
    }
  }

  // Spread the GAP gradient uniformly over the last pooled map.
  Tensor3 dx(last_ch, trace.gap_h, trace.gap_w);
  double inv = 1.0 / (double(trace.gap_h) * trace.gap_w);
  for (int c = 0; c < last_ch; ++c) {
    double g = dgap[size_t(c)] * inv;
    for (int y = 0; y < trace.gap_h; ++y)
      for (int x = 0; x < trace.gap_w; ++x) dx.at(c, y, x) = g;
  }

  for (int i = int(convs.size()) - 1; i >= 0; --i) {
    const ConvLayer& layer = convs[size_t(i)];
    const Tensor3& pre = trace.preact[size_t(i)];
    // unpool: scatter each pooled gradient to its argmax source
    Tensor3 dact(pre.ch, pre.h, pre.w);
    const std::vector<int>& src = trace.pool_src[size_t(i)];
    for (size_t k = 0; k < src.size(); ++k) dact.v[size_t(src[k])] += dx.v[k];
    // ReLU mask
    for (size_t k = 0; k < dact.v.size(); ++k)
      if (pre.v[k] <= 0.0) dact.v[k] = 0.0;

    const Tensor3& in = trace.stage_input[size_t(i)];
    bool need_din = i > 0 || dinput != nullptr;
    Tensor3 din;
    if (need_din) din = Tensor3(in.ch, in.h, in.w);
    if (grads) {
      conv3x3_backward(layer, in, dact, &grads->conv_weight[size_t(i)],
                       &grads->conv_bias[size_t(i)], need_din ? &din : nullptr);
    } else {
      std::vector<double> dw(layer.weight.size(), 0.0), db(layer.bias.size(), 0.0);
      conv3x3_backward(layer, in, dact, &dw, &db, need_din ? &din : nullptr);
    }
    if (i == 0) {
      if (dinput) *dinput = std::move(din);
      return;
    }
    dx = std::move(din);
  }
}

PrototypeSet PrototypeSet::uniform(int classes, int per_class, int dim) {
  require(classes >= 1 && per_class >= 1 && dim >= 2, "invalid prototype set shape");
  PrototypeSet set;
  set.prototypes = Matrix(classes * per_class, dim);
  set.class_assignment = Matrix(classes, classes * per_class);
  for (int c = 0; c < classes; ++c)
    for (int k = 0; k < per_class; ++k) set.class_assignment.at(c, c * per_class + k) = 1.0;
  set.rebuild_proto_class();
  return set;
}

void PrototypeSet::rebuild_proto_class() {
  proto_class.assign(size_t(prototypes.rows), -1);
  for (int p = 0; p < class_assignment.cols; ++p) {
    int owner = -1;
    for (int c = 0; c < class_assignment.rows; ++c) {
      double v = class_assignment.at(c, p);
      require(v == 0.0 || v == 1.0, "class_assignment must be binary");
      if (v == 1.0) {
        require(owner < 0, "class_assignment column has more than one 1");
        owner = c;
      }
    }
    require(owner >= 0, "class_assignment column has no owner");
    proto_class[size_t(p)] = owner;
  }
}

void PrototypeSet::validate() const {
  require(class_assignment.cols == prototypes.rows, "class_assignment/prototype shape mismatch");
  require(int(proto_class.size()) == prototypes.rows, "proto_class out of date");
  std::vector<int> per_class_count(size_t(class_assignment.rows), 0);
  for (int owner : proto_class) ++per_class_count[size_t(owner)];
  for (int c = 0; c < class_assignment.rows; ++c)
    require(per_class_count[size_t(c)] >= 1,
            "class " + std::to_string(c) + " owns no prototypes");
}

double similarity(const double* z, const double* p, int dim, double eps) {
  require(eps > 0.0, "similarity eps must be > 0");
  return similarity_from_d2(squared_distance(z, p, dim), eps);
}

Matrix embed_views(const maskgen::ViewBatch& views, const Backbone& backbone,
                   std::vector<BackboneTrace>* traces) {
  const int v_count = views.count();
  Matrix z(v_count, backbone.config.embedding_dim);
  if (traces) traces->assign(size_t(v_count), BackboneTrace{});
  for (int v = 0; v < v_count; ++v) {
    std::vector<double> row = backbone.embed(views.views[size_t(v)], traces ? &(*traces)[size_t(v)] : nullptr);
    std::copy(row.begin(), row.end(), z.row(v));
  }
  return z;
}

Matrix similarity_matrix(const Matrix& embeddings, const PrototypeSet& protos, double eps) {
  require(embeddings.cols == protos.dim(), "embedding/prototype dimension mismatch");
  Matrix sim(protos.size(), embeddings.rows);
  for (int p = 0; p < protos.size(); ++p)
    for (int v = 0; v < embeddings.rows; ++v)
      sim.at(p, v) = similarity(embeddings.row(v), protos.prototypes.row(p), protos.dim(), eps);
  return sim;
}

void max_pool(const Matrix& sim, const std::vector<uint8_t>& valid, std::vector<double>* pooled,
              std::vector<int>* argmax_view) {
  require(valid.size() == size_t(sim.cols), "valid flag count != view count");
  bool any = false;
  for (uint8_t f : valid) any = any || f;
  require(any, "max_pool: all views invalid");
  pooled->assign(size_t(sim.rows), 0.0);
  argmax_view->assign(size_t(sim.rows), -1);
  for (int p = 0; p < sim.rows; ++p) {
    int best = -1;
    double best_v = 0.0;
    for (int v = 0; v < sim.cols; ++v) {
      if (!valid[size_t(v)]) continue;
      double s = sim.at(p, v);
      if (best < 0 || s > best_v) {  // ties keep the lowest view index
        best = v;
        best_v = s;
      }
    }
    (*pooled)[size_t(p)] = best_v;
    (*argmax_view)[size_t(p)] = best;
  }
}

std::vector<double> softmax(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

ForwardResult forward_from_embeddings(Matrix embeddings, const std::vector<uint8_t>& valid,
                                      const PrototypeSet& protos, const ClassificationHead& head,
                                      double eps) {
  require(head.weight.cols == protos.size() && head.weight.rows == protos.num_classes(),
          "head shape does not match prototype set");
  ForwardResult r;
  r.sim = similarity_matrix(embeddings, protos, eps);
  r.embeddings = std::move(embeddings);
  max_pool(r.sim, valid, &r.pooled, &r.argmax_view);
  r.logits.assign(size_t(head.weight.rows), 0.0);
  for (int c = 0; c < head.weight.rows; ++c) {
    double acc = 0.0;
    const double* row = head.weight.row(c);
    for (int p = 0; p < head.weight.cols; ++p) acc += row[p] * r.pooled[size_t(p)];
    r.logits[size_t(c)] = acc;
  }
  r.probs = softmax(r.logits);
  return r;
}

ForwardResult forward(const maskgen::ViewBatch& views, const PrototypeModel& model,
                      std::vector<BackboneTrace>* traces) {
  Matrix z = embed_views(views, model.backbone, traces);
  return forward_from_embeddings(std::move(z), views.valid, model.protos, model.head,
                                 model.similarity_eps);
}

}  // namespace protomask::model
