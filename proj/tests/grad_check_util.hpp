#pragma once

// Shared helpers for checking analytic loss gradients against central finite
// differences, used by the unit tests and the acceptance suite.

#include <cmath>
#include <functional>
#include <vector>

#include "protomask/losses.hpp"

namespace protomask::gradtest {

struct LossConfig {
  std::vector<losses::EmbeddedSample> batch;
  model::PrototypeSet protos;
  model::ClassificationHead head;
  double eps = 1e-4;
};

// Smallest gap between the best and second-best candidate across the
// double-min (cluster/separation) and max-pool selections. Configs with a
// gap under the tie margin are rejected by the generator.
inline double min_selection_gap(const LossConfig& cfg) {
  double gap = 1e300;
  for (const losses::EmbeddedSample& s : cfg.batch) {
    for (bool same : {true, false}) {
      double best = 1e300, second = 1e300;
      for (int p = 0; p < cfg.protos.size(); ++p) {
        if ((cfg.protos.proto_class[size_t(p)] == s.label) != same) continue;
        for (int v = 0; v < s.embeddings.rows; ++v) {
          if (!s.valid[size_t(v)]) continue;
          double d2 =
              squared_distance(s.embeddings.row(v), cfg.protos.prototypes.row(p), cfg.protos.dim());
          if (d2 < best) {
            second = best;
            best = d2;
          } else if (d2 < second) {
            second = d2;
          }
        }
      }
      if (second < 1e300) gap = std::min(gap, second - best);
    }
    // max-pool selection per prototype
    Matrix sim = model::similarity_matrix(s.embeddings, cfg.protos, cfg.eps);
    for (int p = 0; p < sim.rows; ++p) {
      double best = -1e300, second = -1e300;
      for (int v = 0; v < sim.cols; ++v) {
        if (!s.valid[size_t(v)]) continue;
        double x = sim.at(p, v);
        if (x > best) {
          second = best;
          best = x;
        } else if (x > second) {
          second = x;
        }
      }
      if (second > -1e300) gap = std::min(gap, best - second);
    }
  }
  return gap;
}

inline LossConfig random_loss_config(Rng& rng, double tie_margin = 1e-3) {
  for (;;) {
    LossConfig cfg;
    int classes = rng.uniform_int(2, 3);
    int per_class = rng.uniform_int(1, classes == 2 ? 3 : 2);  // |P| <= 6
    int dim = rng.uniform_int(3, 8);
    cfg.protos = model::PrototypeSet::uniform(classes, per_class, dim);
    for (double& v : cfg.protos.prototypes.v) v = rng.normal() * 0.8;
    cfg.head.weight = cfg.protos.class_assignment;

    int n = rng.uniform_int(2, 4);
    for (int i = 0; i < n; ++i) {
      losses::EmbeddedSample s;
      int views = rng.uniform_int(1, 3);
      s.embeddings = Matrix(views, dim);
      for (double& v : s.embeddings.v) v = rng.normal();
      s.valid.assign(size_t(views), 1);
      if (views > 1 && rng.uniform() < 0.3) s.valid[size_t(views - 1)] = 0;
      s.label = rng.uniform_int(0, classes - 1);
      cfg.batch.push_back(std::move(s));
    }
    if (min_selection_gap(cfg) > tie_margin) return cfg;
  }
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
};

// Central finite differences of `loss_value` against the analytic gradients
// over every prototype and embedding coordinate.
inline GradCheckResult check_gradients(LossConfig cfg, const losses::LossWeights& weights) {
  std::vector<Matrix> grad_z;
  Matrix grad_p;
  losses::combined_batch(cfg.batch, cfg.protos, cfg.head, cfg.eps, weights, &grad_z, &grad_p,
                         nullptr);

  auto value = [&]() {
    return losses::combined_batch(cfg.batch, cfg.protos, cfg.head, cfg.eps, weights, nullptr,
                                  nullptr, nullptr)
        .total;
  };

  GradCheckResult result;
  auto update = [&](double analytic, double fd) {
    double denom = std::max({1e-8, std::fabs(analytic), std::fabs(fd)});
    double rel = std::fabs(analytic - fd) / denom;
    // both effectively zero: count as pass
    if (std::fabs(analytic) < 1e-12 && std::fabs(fd) < 1e-7) rel = 0.0;
    result.max_rel_err = std::max(result.max_rel_err, rel);
    ++result.checked;
  };

  for (size_t k = 0; k < cfg.protos.prototypes.v.size(); ++k) {
    double save = cfg.protos.prototypes.v[k];
    double h = 1e-5 * std::max(1.0, std::fabs(save));
    cfg.protos.prototypes.v[k] = save + h;
    double fp = value();
    cfg.protos.prototypes.v[k] = save - h;
    double fm = value();
    cfg.protos.prototypes.v[k] = save;
    update(grad_p.v[k], (fp - fm) / (2 * h));
  }
  for (size_t i = 0; i < cfg.batch.size(); ++i)
    for (size_t k = 0; k < cfg.batch[i].embeddings.v.size(); ++k) {
      double save = cfg.batch[i].embeddings.v[k];
      double h = 1e-5 * std::max(1.0, std::fabs(save));
      cfg.batch[i].embeddings.v[k] = save + h;
      double fp = value();
      cfg.batch[i].embeddings.v[k] = save - h;
      double fm = value();
      cfg.batch[i].embeddings.v[k] = save;
      update(grad_z[i].v[k], (fp - fm) / (2 * h));
    }
  return result;
}

}  // namespace protomask::gradtest
