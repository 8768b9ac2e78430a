#include "protomask/losses.hpp"

#include <algorithm>
#include <cmath>

namespace protomask::losses {
namespace {

constexpr double kProbClamp = 1e-12;

// Lowest-index double-min over (prototype, view) pairs matching `want_same`.
struct MinHit {
  int proto = -1;
  int view = -1;
  double d2 = 0.0;
};

MinHit double_min(const EmbeddedSample& s, const model::PrototypeSet& protos, bool want_same) {
  MinHit hit;
  bool any_valid = false;
  for (uint8_t f : s.valid) any_valid = any_valid || f;
  require(any_valid, "loss: sample has no valid views");
  for (int p = 0; p < protos.size(); ++p) {
    bool same = protos.proto_class[size_t(p)] == s.label;
    if (same != want_same) continue;
    for (int v = 0; v < s.embeddings.rows; ++v) {
      if (!s.valid[size_t(v)]) continue;
      double d2 = squared_distance(s.embeddings.row(v), protos.prototypes.row(p), protos.dim());
      if (hit.proto < 0 || d2 < hit.d2) hit = MinHit{p, v, d2};
    }
  }
  return hit;
}

}  // namespace

double cross_entropy(const std::vector<std::vector<double>>& probs_batch,
                     const std::vector<int>& labels) {
  require(!probs_batch.empty() && probs_batch.size() == labels.size(),
          "cross_entropy: batch/label size mismatch");
  double total = 0.0;
  for (size_t i = 0; i < probs_batch.size(); ++i) {
    const auto& probs = probs_batch[i];
    require(labels[i] >= 0 && labels[i] < int(probs.size()), "cross_entropy: label out of range");
    total += -std::log(std::max(probs[size_t(labels[i])], kProbClamp));
  }
  return total / double(probs_batch.size());
}

double cluster_loss(const std::vector<EmbeddedSample>& batch, const model::PrototypeSet& protos) {
  require(!batch.empty(), "cluster_loss: empty batch");
  double total = 0.0;
  for (const EmbeddedSample& s : batch) {
    MinHit hit = double_min(s, protos, /*want_same=*/true);
    require(hit.proto >= 0,
            "cluster_loss: class " + std::to_string(s.label) + " owns no prototypes");
    total += hit.d2;
  }
  return total / double(batch.size());
}

double separation_loss(const std::vector<EmbeddedSample>& batch,
                       const model::PrototypeSet& protos) {
  require(!batch.empty(), "separation_loss: empty batch");
  double total = 0.0;
  for (const EmbeddedSample& s : batch) {
    MinHit hit = double_min(s, protos, /*want_same=*/false);
    require(hit.proto >= 0, "separation_loss: no other-class prototype exists for label " +
                                std::to_string(s.label));
    total += hit.d2;
  }
  return -total / double(batch.size());
}

double diversity_loss(const model::PrototypeSet& protos, double alpha) {
  require(alpha > 0.0, "diversity_loss: alpha must be > 0");
  double total = 0.0;
  for (int c = 0; c < protos.num_classes(); ++c) {
    double s = 0.0;
    for (int i = 0; i < protos.size(); ++i) {
      if (protos.proto_class[size_t(i)] != c) continue;
      for (int j = 0; j < protos.size(); ++j) {
        if (j == i || protos.proto_class[size_t(j)] != c) continue;
        s += squared_distance(protos.prototypes.row(i), protos.prototypes.row(j), protos.dim());
      }
    }
    total += std::exp(-alpha * s);
  }
  return total;
}

double combined_loss(double ce, double cluster, double separation, double diversity,
                     const LossWeights& w) {
  require(w.lambda_ce > 0.0, "combined_loss: lambda_ce must be > 0");
  return w.lambda_ce * ce + w.lambda_cluster * cluster + w.lambda_sep * separation +
         w.lambda_div * diversity;
}

double l1_head_penalty(const model::ClassificationHead& head) {
  double s = 0.0;
  for (double v : head.weight.v) s += std::fabs(v);
  return s;
}

BatchLoss combined_batch(const std::vector<EmbeddedSample>& batch,
                         const model::PrototypeSet& protos, const model::ClassificationHead& head,
                         double similarity_eps, const LossWeights& w,
                         std::vector<Matrix>* grad_embeddings, Matrix* grad_prototypes,
                         Matrix* grad_head) {
  require(!batch.empty(), "combined_batch: empty batch");
  const int dim = protos.dim();
  const double inv_n = 1.0 / double(batch.size());

  if (grad_embeddings) {
    grad_embeddings->clear();
    for (const EmbeddedSample& s : batch)
      grad_embeddings->emplace_back(s.embeddings.rows, s.embeddings.cols);
  }
  if (grad_prototypes) *grad_prototypes = Matrix(protos.size(), dim);
  if (grad_head) *grad_head = Matrix(head.weight.rows, head.weight.cols);

  BatchLoss out;
  for (size_t i = 0; i < batch.size(); ++i) {
    const EmbeddedSample& s = batch[i];
    Matrix* dz = grad_embeddings ? &(*grad_embeddings)[i] : nullptr;

    if (w.lambda_ce != 0.0) {
      model::ForwardResult fr = model::forward_from_embeddings(s.embeddings, s.valid, protos,
                                                               head, similarity_eps);
      require(s.label >= 0 && s.label < int(fr.probs.size()), "combined_batch: label out of range");
      out.ce += -std::log(std::max(fr.probs[size_t(s.label)], kProbClamp)) * inv_n;

      if (dz || grad_prototypes || grad_head) {
        // d(CE)/d(logit_c) = probs_c - [c == y], averaged over the batch
        std::vector<double> dlogits(fr.probs);
        dlogits[size_t(s.label)] -= 1.0;
        for (double& g : dlogits) g *= w.lambda_ce * inv_n;

        if (grad_head)
          for (int c = 0; c < head.weight.rows; ++c)
            for (int p = 0; p < head.weight.cols; ++p)
              grad_head->at(c, p) += dlogits[size_t(c)] * fr.pooled[size_t(p)];

        if (dz || grad_prototypes) {
          for (int p = 0; p < protos.size(); ++p) {
            double dpooled = 0.0;
            for (int c = 0; c < head.weight.rows; ++c)
              dpooled += dlogits[size_t(c)] * head.weight.at(c, p);
            if (dpooled == 0.0) continue;
            // Max-pool routes the gradient to the argmax view only.
            int v = fr.argmax_view[size_t(p)];
            double d2 = squared_distance(s.embeddings.row(v), protos.prototypes.row(p), dim);
            double coeff = dpooled * model::similarity_dd2(d2, similarity_eps) * 2.0;
            const double* zv = s.embeddings.row(v);
            const double* pv = protos.prototypes.row(p);
            for (int d = 0; d < dim; ++d) {
              double diff = zv[d] - pv[d];
              if (dz) dz->at(v, d) += coeff * diff;
              if (grad_prototypes) grad_prototypes->at(p, d) -= coeff * diff;
            }
          }
        }
      }
    }

    if (w.lambda_cluster != 0.0) {
      MinHit hit = double_min(s, protos, /*want_same=*/true);
      require(hit.proto >= 0,
              "combined_batch: class " + std::to_string(s.label) + " owns no prototypes");
      out.cluster += hit.d2 * inv_n;
      double scale = w.lambda_cluster * inv_n * 2.0;
      const double* zv = s.embeddings.row(hit.view);
      const double* pv = protos.prototypes.row(hit.proto);
      for (int d = 0; d < dim; ++d) {
        double diff = zv[d] - pv[d];
        if (dz) dz->at(hit.view, d) += scale * diff;
        if (grad_prototypes) grad_prototypes->at(hit.proto, d) -= scale * diff;
      }
    }

    if (w.lambda_sep != 0.0) {
      MinHit hit = double_min(s, protos, /*want_same=*/false);
      require(hit.proto >= 0, "combined_batch: no other-class prototype exists for label " +
                                  std::to_string(s.label));
      out.separation -= hit.d2 * inv_n;
      double scale = -w.lambda_sep * inv_n * 2.0;
      const double* zv = s.embeddings.row(hit.view);
      const double* pv = protos.prototypes.row(hit.proto);
      for (int d = 0; d < dim; ++d) {
        double diff = zv[d] - pv[d];
        if (dz) dz->at(hit.view, d) += scale * diff;
        if (grad_prototypes) grad_prototypes->at(hit.proto, d) -= scale * diff;
      }
    }
  }

  if (w.lambda_div != 0.0) {
    out.diversity = diversity_loss(protos, w.alpha);
    if (grad_prototypes) {
      for (int c = 0; c < protos.num_classes(); ++c) {
        double s = 0.0;
        std::vector<int> members;
        for (int p = 0; p < protos.size(); ++p)
          if (protos.proto_class[size_t(p)] == c) members.push_back(p);
        for (int a : members)
          for (int b : members)
            if (a != b)
              s += squared_distance(protos.prototypes.row(a), protos.prototypes.row(b),
                                    protos.dim());
        // d/dp_i [exp(-a*S)] = exp(-a*S) * (-a) * 4 * sum_j (p_i - p_j)
        double factor = std::exp(-w.alpha * s) * (-w.alpha) * 4.0 * w.lambda_div;
        for (int a : members) {
          const double* pa = protos.prototypes.row(a);
          for (int b : members) {
            if (b == a) continue;
            const double* pb = protos.prototypes.row(b);
            for (int d = 0; d < dim; ++d)
              grad_prototypes->at(a, d) += factor * (pa[d] - pb[d]);
          }
        }
      }
    }
  }

  out.total = w.lambda_ce * out.ce + w.lambda_cluster * out.cluster + w.lambda_sep * out.separation +
              w.lambda_div * out.diversity;
  // The lambda weights are already folded into the CE/cluster/sep gradients
  // above; diversity folds lambda_div into `factor`.
  return out;
}

double head_cross_entropy(const std::vector<std::vector<double>>& pooled_batch,
                          const std::vector<int>& labels, const model::ClassificationHead& head,
                          Matrix* grad_head) {
  require(!pooled_batch.empty() && pooled_batch.size() == labels.size(),
          "head_cross_entropy: batch/label size mismatch");
  const double inv_n = 1.0 / double(pooled_batch.size());
  if (grad_head) *grad_head = Matrix(head.weight.rows, head.weight.cols);
  double total = 0.0;
  for (size_t i = 0; i < pooled_batch.size(); ++i) {
    const std::vector<double>& pooled = pooled_batch[i];
    std::vector<double> logits(size_t(head.weight.rows), 0.0);
    for (int c = 0; c < head.weight.rows; ++c) {
      double acc = 0.0;
      for (int p = 0; p < head.weight.cols; ++p) acc += head.weight.at(c, p) * pooled[size_t(p)];
      logits[size_t(c)] = acc;
    }
    std::vector<double> probs = model::softmax(logits);
    total += -std::log(std::max(probs[size_t(labels[i])], kProbClamp)) * inv_n;
    if (grad_head) {
      probs[size_t(labels[i])] -= 1.0;
      for (int c = 0; c < head.weight.rows; ++c)
        for (int p = 0; p < head.weight.cols; ++p)
          grad_head->at(c, p) += probs[size_t(c)] * pooled[size_t(p)] * inv_n;
    }
  }
  return total;
}

}  // namespace protomask::losses
