#pragma once

#include <string>
#include <vector>

#include "protomask/common.hpp"
#include "protomask/maskgen.hpp"

namespace protomask::model {

struct BackboneConfig {
  std::vector<int> widths = {8, 16, 32};  // conv stage output channels
  int embedding_dim = 128;
  int input_height = 32;
  int input_width = 32;
  std::vector<double> standardize_mean = {0.5, 0.5, 0.5};
  std::vector<double> standardize_std = {0.5, 0.5, 0.5};
};

// 3x3 conv, stride 1, pad 1.
struct ConvLayer {
  int in_ch = 0;
  int out_ch = 0;
  std::vector<double> weight;  // [out][in][3][3]
  std::vector<double> bias;    // [out]
};

struct Tensor3 {
  int ch = 0, h = 0, w = 0;
  std::vector<double> v;
  Tensor3() = default;
  Tensor3(int c, int hh, int ww, double fill = 0.0) : ch(c), h(hh), w(ww), v(size_t(c) * hh * ww, fill) {}
  double& at(int c, int y, int x) { return v[(size_t(c) * h + y) * w + x]; }
  double at(int c, int y, int x) const { return v[(size_t(c) * h + y) * w + x]; }
};

// Cached activations for one view, consumed by the backward pass.
struct BackboneTrace {
  std::vector<Tensor3> stage_input;   // conv input per stage (index 0 = standardized view)
  std::vector<Tensor3> preact;        // conv output before ReLU per stage
  std::vector<std::vector<int>> pool_src;  // flat argmax index per pooled cell, per stage
  std::vector<double> gap;            // global average pool output
  std::vector<double> embedding;      // post-sigmoid output
  int gap_h = 0, gap_w = 0;
};

struct BackboneGrads;

// Conv stages (each conv+ReLU+maxpool2) -> global average pool -> linear to D
// -> sigmoid. The bounded latent space keeps prototype geometry stable: the
// separation pressure saturates instead of inflating the embedding scale.
struct Backbone {
  BackboneConfig config;
  std::vector<ConvLayer> convs;
  Matrix proj_weight;             // D x last_width
  std::vector<double> proj_bias;  // D

  void init(Rng& rng);

  std::vector<double> embed(const Image& view, BackboneTrace* trace = nullptr) const;

  // Accumulates parameter gradients from d(loss)/d(embedding); optionally
  // propagates to the standardized-input gradient (for saliency).
  void backward(const BackboneTrace& trace, const std::vector<double>& dz, BackboneGrads* grads,
                Tensor3* dinput = nullptr) const;

  Tensor3 standardize(const Image& view) const;
};

struct BackboneGrads {
  std::vector<std::vector<double>> conv_weight;
  std::vector<std::vector<double>> conv_bias;
  Matrix proj_weight;
  std::vector<double> proj_bias;

  explicit BackboneGrads(const Backbone& b);
  void zero();
};

struct PrototypeSet {
  Matrix prototypes;        // |P| x D
  Matrix class_assignment;  // C x |P|, exactly one 1 per column
  std::vector<int> proto_class;  // derived: owning class per prototype

  int size() const { return prototypes.rows; }
  int dim() const { return prototypes.cols; }
  int num_classes() const { return class_assignment.rows; }

  static PrototypeSet uniform(int classes, int per_class, int dim);
  void validate() const;
  void rebuild_proto_class();
};

struct ClassificationHead {
  Matrix weight;  // C x |P|, no bias
};

struct ForwardResult {
  Matrix embeddings;          // V x D
  Matrix sim;                 // |P| x V
  std::vector<double> pooled;  // |P|
  std::vector<int> argmax_view;
  std::vector<double> logits;  // C
  std::vector<double> probs;   // C
};

struct PrototypeModel {
  Backbone backbone;
  PrototypeSet protos;
  ClassificationHead head;
  double similarity_eps = 1e-4;
};

// s = log(1 + 1/(||z-p||^2 + eps)); strictly decreasing in distance.
double similarity(const double* z, const double* p, int dim, double eps);
inline double similarity_from_d2(double d2, double eps) { return std::log1p(1.0 / (d2 + eps)); }
// ds/d(d2) = -1 / ((d2+eps)(d2+eps+1)); chain with d(d2)/dz = 2(z-p).
inline double similarity_dd2(double d2, double eps) {
  double u = d2 + eps;
  return -1.0 / (u * (u + 1.0));
}

Matrix embed_views(const maskgen::ViewBatch& views, const Backbone& backbone,
                   std::vector<BackboneTrace>* traces = nullptr);

Matrix similarity_matrix(const Matrix& embeddings, const PrototypeSet& protos, double eps);

void max_pool(const Matrix& sim, const std::vector<uint8_t>& valid, std::vector<double>* pooled,
              std::vector<int>* argmax_view);

std::vector<double> softmax(const std::vector<double>& logits);

// Forward from precomputed embeddings; the full forward() below embeds first.
ForwardResult forward_from_embeddings(Matrix embeddings, const std::vector<uint8_t>& valid,
                                      const PrototypeSet& protos, const ClassificationHead& head,
                                      double eps);

ForwardResult forward(const maskgen::ViewBatch& views, const PrototypeModel& model,
                      std::vector<BackboneTrace>* traces = nullptr);

}  // namespace protomask::model
