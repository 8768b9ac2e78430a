#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "protomask/saliency.hpp"
#include "protomask/training.hpp"

using namespace protomask;
using namespace protomask::saliency;

namespace {

struct Fixture {
  model::PrototypeModel m;
  maskgen::ViewBatch views;
};

Fixture trained_fixture() {
  Fixture f;
  model::BackboneConfig cfg;
  cfg.widths = {4, 8};
  cfg.embedding_dim = 8;
  cfg.input_height = 16;
  cfg.input_width = 16;
  f.m = training::init_model(cfg, 2, 2, 1e-4, 5);

  data::ImageSample s = data::synthesize_sample(9, 2, 0, 0, 32);
  maskgen::MaskSet masks =
      maskgen::with_full_frame(maskgen::toy_grid_segmenter("fix", 32, 32, 2, 2, 4));
  maskgen::ViewOptions vopts;
  vopts.view_height = 16;
  vopts.view_width = 16;
  f.views = maskgen::make_views(s.image, masks, 5, vopts);
  return f;
}

}  // namespace

TEST_CASE("prototype_saliency: nonnegative, normalized, restricted to the argmax view") {
  Fixture f = trained_fixture();
  for (int p = 0; p < f.m.protos.size(); ++p) {
    RelevanceMap rel = prototype_saliency(f.m, f.views, p);
    CHECK(rel.height == 16);
    CHECK(rel.width == 16);
    double mx = 0.0;
    for (double v : rel.values) {
      CHECK(v >= 0.0);
      mx = std::max(mx, v);
    }
    CHECK(mx == doctest::Approx(1.0));

    model::ForwardResult fr = model::forward(f.views, f.m);
    CHECK(rel.view_index == fr.argmax_view[size_t(p)]);
    CHECK(rel.view_provenance == f.views.provenance[size_t(rel.view_index)]);
  }
}

TEST_CASE("prototype_saliency: non-argmax views are dead branches") {
  Fixture f = trained_fixture();
  const int p = 1;
  model::ForwardResult base = model::forward(f.views, f.m);
  RelevanceMap rel = prototype_saliency(f.m, f.views, p);
  int winner = base.argmax_view[p];

  // double the pixels of some other view
  int other = winner == 0 ? 1 : 0;
  maskgen::ViewBatch tweaked = f.views;
  for (double& v : tweaked.views[size_t(other)].data) v = std::min(1.0, v * 2.0);

  model::ForwardResult after = model::forward(tweaked, f.m);
  CHECK(after.pooled[p] == base.pooled[p]);  // exactly unchanged
  RelevanceMap rel2 = prototype_saliency(f.m, tweaked, p);
  CHECK(rel2.values == rel.values);
  CHECK(rel2.view_index == rel.view_index);
}

TEST_CASE("prototype_saliency: all-invalid views rejected") {
  Fixture f = trained_fixture();
  for (auto& v : f.views.valid) v = 0;
  CHECK_THROWS_AS(prototype_saliency(f.m, f.views, 0), Error);
}

TEST_CASE("map_to_image: placement, support bound, errors") {
  RelevanceMap rel;
  rel.height = 4;
  rel.width = 4;
  rel.values.assign(16, 1.0);
  rel.view_provenance = Box{2, 3, 6, 7};

  std::vector<double> full = map_to_image(rel, 10, 10);
  REQUIRE(full.size() == 100);
  long long support = 0;
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) {
      bool inside = x >= 2 && x < 6 && y >= 3 && y < 7;
      if (full[size_t(y) * 10 + x] > 0.0) {
        CHECK(inside);
        ++support;
      }
    }
  CHECK(support <= rel.view_provenance.area());

  // full-image provenance leaves no zero border on a constant map
  rel.view_provenance = Box{0, 0, 10, 10};
  std::vector<double> whole = map_to_image(rel, 10, 10);
  for (double v : whole) CHECK(v == doctest::Approx(1.0));

  rel.view_provenance = Box{8, 8, 12, 12};
  CHECK_THROWS_AS(map_to_image(rel, 10, 10), Error);
}

TEST_CASE("map_to_image: mean preserved under exact integer upscaling of constant maps") {
  // resize oracle: a constant map stays constant under bilinear resampling,
  // so the sum scales exactly with the area factor
  for (double c : {0.25, 1.0}) {
    RelevanceMap rel;
    rel.height = 5;
    rel.width = 4;
    rel.values.assign(20, c);
    rel.view_provenance = Box{0, 0, 12, 15};  // 3x upscale both ways

    std::vector<double> full = map_to_image(rel, 15, 12);
    double sum = std::accumulate(full.begin(), full.end(), 0.0);
    double expected = c * 20.0 * 9.0;  // area factor 9
    CHECK(std::fabs(sum - expected) / expected < 0.01);
  }
}

TEST_CASE("threshold_region: limits, ties, sort oracle") {
  // percentile -> 0+ keeps every nonzero pixel
  std::vector<double> rel(100, 0.0);
  for (int i = 0; i < 30; ++i) rel[size_t(i)] = 0.1 + i * 0.01;
  ThresholdedRegion low = threshold_region(rel, 10, 10, 1e-9 + 1e-12);
  CHECK(low.region.count_nonzero() == 30);

  // constant maps keep full support at any percentile (ties via >=)
  std::vector<double> flat(100, 0.5);
  CHECK(threshold_region(flat, 10, 10, 99.0).region.count_nonzero() == 100);

  // 100 distinct nonzero values at percentile 95: sort-based oracle
  std::vector<double> distinct(100);
  for (int i = 0; i < 100; ++i) distinct[size_t(i)] = (i + 1) / 100.0;
  ThresholdedRegion top = threshold_region(distinct, 10, 10, 95.0);
  std::vector<double> sorted = distinct;
  std::sort(sorted.begin(), sorted.end());
  double cut = sorted[94];  // nearest-rank: ceil(0.95 * 100) = 95th smallest
  size_t expected = 0;
  for (double v : distinct) expected += v >= cut;
  CHECK(top.region.count_nonzero() == expected);
  CHECK(expected == 6);

  CHECK_THROWS_AS(threshold_region(std::vector<double>(100, 0.0), 10, 10, 95.0), Error);
  CHECK_THROWS_AS(threshold_region(flat, 10, 10, 0.0), Error);
  CHECK_THROWS_AS(threshold_region(flat, 10, 10, 100.0), Error);
}

TEST_CASE("threshold_region: invariant under positive rescaling") {
  Rng rng(7);
  std::vector<double> rel(64, 0.0);
  for (int i = 0; i < 40; ++i) rel[size_t(rng.uniform_int(0, 63))] = rng.uniform();
  ThresholdedRegion a = threshold_region(rel, 8, 8, 90.0);
  std::vector<double> scaled = rel;
  for (double& v : scaled) v *= 37.5;
  ThresholdedRegion b = threshold_region(scaled, 8, 8, 90.0);
  CHECK(a.region == b.region);
  CHECK(a.bbox == b.bbox);
}

TEST_CASE("locality: full-image relevance support stays inside the argmax view box") {
  Fixture f = trained_fixture();
  data::ImageSample s = data::synthesize_sample(9, 2, 0, 0, 32);
  for (int p = 0; p < f.m.protos.size(); ++p) {
    RelevanceMap rel = prototype_saliency(f.m, f.views, p);
    std::vector<double> full = map_to_image(rel, 32, 32);
    const Box& b = rel.view_provenance;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (full[size_t(y) * 32 + x] != 0.0) {
          CHECK(x >= b.x0);
          CHECK(x < b.x1);
          CHECK(y >= b.y0);
          CHECK(y < b.y1);
        }
  }
}
