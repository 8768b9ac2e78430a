#include "protomask/saliency.hpp"

#include <algorithm>
#include <cmath>

namespace protomask::saliency {

RelevanceMap prototype_saliency(const model::PrototypeModel& m, const maskgen::ViewBatch& views,
                                int prototype) {
  require(prototype >= 0 && prototype < m.protos.size(), "prototype index out of range");
  std::vector<model::BackboneTrace> traces;
  model::ForwardResult fr = model::forward(views, m, &traces);
  const int v = fr.argmax_view[size_t(prototype)];

  // d pooled[p] / dz on the winning view
  const double* z = fr.embeddings.row(v);
  const double* p = m.protos.prototypes.row(prototype);
  const int dim = m.protos.dim();
  double d2 = squared_distance(z, p, dim);
  double coeff = 2.0 * model::similarity_dd2(d2, m.similarity_eps);
  std::vector<double> dz(size_t(dim), 0.0);
  for (int d = 0; d < dim; ++d) dz[size_t(d)] = coeff * (z[d] - p[d]);

  model::Tensor3 dinput;
  m.backbone.backward(traces[size_t(v)], dz, nullptr, &dinput);

  const Image& view = views.views[size_t(v)];
  RelevanceMap rel;
  rel.height = view.height;
  rel.width = view.width;
  rel.values.assign(size_t(view.height) * view.width, 0.0);
  rel.view_provenance = views.provenance[size_t(v)];
  rel.view_index = v;

  // |d pooled / d pixel| * pixel, channel-summed. dinput is w.r.t. the
  // standardized input, so undo the scaling per channel.
  for (int c = 0; c < 3; ++c) {
    double inv_sd = 1.0 / m.backbone.config.standardize_std[size_t(c)];
    for (int y = 0; y < view.height; ++y)
      for (int x = 0; x < view.width; ++x)
        rel.values[size_t(y) * view.width + x] +=
            std::fabs(dinput.at(c, y, x) * inv_sd) * view.at(c, y, x);
  }

  double mx = 0.0;
  for (double r : rel.values) mx = std::max(mx, r);
  if (mx > 0.0)
    for (double& r : rel.values) r /= mx;
  return rel;
}

std::vector<double> map_to_image(const RelevanceMap& rel, int image_height, int image_width) {
  const Box& b = rel.view_provenance;
  require(b.x0 >= 0 && b.y0 >= 0 && b.x1 <= image_width && b.y1 <= image_height &&
              b.x0 < b.x1 && b.y0 < b.y1,
          "map_to_image: provenance box outside image");
  std::vector<double> placed =
      resize_bilinear_plane(rel.values, rel.height, rel.width, b.height(), b.width());
  std::vector<double> out(size_t(image_height) * image_width, 0.0);
  for (int y = 0; y < b.height(); ++y)
    for (int x = 0; x < b.width(); ++x)
      out[size_t(b.y0 + y) * image_width + (b.x0 + x)] = placed[size_t(y) * b.width() + x];
  return out;
}

ThresholdedRegion threshold_region(const std::vector<double>& relevance, int height, int width,
                                   double percentile) {
  require(percentile > 0.0 && percentile < 100.0, "threshold percentile must be in (0,100)");
  require(relevance.size() == size_t(height) * width, "threshold_region: shape mismatch");
  std::vector<double> nonzero;
  for (double v : relevance)
    if (v > 0.0) nonzero.push_back(v);
  require(!nonzero.empty(), "threshold_region: relevance map is all zero");
  std::sort(nonzero.begin(), nonzero.end());
  // nearest-rank percentile over the nonzero values
  size_t k = size_t(std::ceil(percentile / 100.0 * double(nonzero.size())));
  k = std::clamp<size_t>(k, 1, nonzero.size());
  double threshold = nonzero[k - 1];

  ThresholdedRegion out;
  out.region = BinaryMask(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out.region.at(y, x) = relevance[size_t(y) * width + x] >= threshold;
  out.bbox = tight_bbox(out.region);
  return out;
}

}  // namespace protomask::saliency
